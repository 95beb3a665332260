#include "marginlab/bounds.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace marginlab {

namespace {

void check_delta(double delta) {
    if (!(delta > 0.0 && delta <= 1.0)) throw InvalidInput("delta must lie in (0, 1]");
}

double delta_term(double delta, std::size_t m) {
    return std::sqrt(2.0 * std::log(1.0 / delta) / static_cast<double>(m));
}

}  // namespace

double ge_bound_general(double k, double eps, double loss_bound, std::size_t m, double delta) {
    check_delta(delta);
    if (!(k >= 1.0)) throw InvalidInput("ge_bound_general: K must be at least 1");
    if (m < 1) throw InvalidInput("ge_bound_general: m must be at least 1");
    return eps + loss_bound * std::sqrt((2.0 * k * std::log(2.0) + 2.0 * std::log(1.0 / delta)) / static_cast<double>(m));
}

void GeBoundInputs::validate() const {
    if (m < 1) throw InvalidInput("GE bound: m must be at least 1");
    if (num_classes < 1) throw InvalidInput("GE bound: N_Y must be at least 1");
    if (!(gamma > 0.0)) throw InvalidInput("GE bound: gamma must be positive");
    check_delta(delta);
    covering.validate();
}

double ge_bound_margin(const GeBoundInputs& in) {
    in.validate();
    const double k = static_cast<double>(in.num_classes) * covering_number(in.covering, in.gamma / 2.0);
    return ge_bound_general(k, 0.0, in.loss_bound, in.m, in.delta);
}

double ge_bound_manifold(const GeBoundInputs& in, bool neglect_delta) {
    in.validate();
    if (in.covering.kind != CoveringKind::manifold)
        throw InvalidInput("ge_bound_manifold needs a manifold covering model; use ge_bound_general");
    const double k = static_cast<double>(in.covering.k);
    const double log_first = std::log(std::log(2.0) * static_cast<double>(in.num_classes)) + (k + 1.0) * std::log(2.0) +
                             k * std::log(in.covering.c_m) - k * std::log(in.gamma) -
                             std::log(static_cast<double>(in.m));
    const double first = std::exp(0.5 * log_first);
    return neglect_delta ? first : first + delta_term(in.delta, in.m);
}

ExpandedBound ge_bound_expanded(const MarginAnalysis& a, int variant, const CoveringModel& covering, std::size_t m,
                                std::size_t num_classes, double delta, bool neglect_delta) {
    if (variant < 1 || variant > 4) throw InvalidInput("expanded bound variant must be 1..4");
    if (m < 1) throw InvalidInput("expanded bound: m must be at least 1");
    check_delta(delta);
    covering.validate();
    ExpandedBound b;
    b.variant = variant;
    b.min_score = std::numeric_limits<double>::infinity();
    for (const auto& r : a.reports) {
        b.min_score = std::min(b.min_score, r.score);
        if (!r.applicable) b.offending.push_back(r.sample_id);
    }
    b.applicable = b.offending.empty() && !a.reports.empty();
    if (!b.applicable) {
        b.value = std::numeric_limits<double>::quiet_NaN();
        return b;
    }
    b.gamma_b = std::numeric_limits<double>::infinity();
    for (const auto& r : a.reports) {
        double num = 0.0;
        switch (variant) {
            case 1: num = r.local_sup; break;
            case 2: num = a.global_sup; break;
            case 3: num = a.products.spectral; break;
            case 4: num = a.products.frobenius; break;
        }
        const double g = r.score / num;
        if (g < b.gamma_b) {
            b.gamma_b = g;
            b.numerator = num;
            b.attaining_sample = r.sample_id;
        }
    }
    const double log_n = log_covering_number(covering, b.gamma_b / 2.0);
    const double log_val =
        0.5 * (std::log(2.0 * std::log(2.0) * static_cast<double>(num_classes) / static_cast<double>(m)) + log_n);
    b.value = std::exp(log_val);
    if (!neglect_delta) b.value += delta_term(delta, m);
    b.vacuous = b.value > 1.0;
    return b;
}

double rademacher_reference_bound(const Network& net, std::size_t m) {
    if (m < 1) throw InvalidInput("rademacher bound: m must be at least 1");
    const auto ws = weight_matrices(net);
    double prod = 1.0;
    for (const Matrix* w : ws) prod *= frobenius_norm(*w);
    return std::pow(2.0, static_cast<double>(ws.size()) - 1.0) * prod / std::sqrt(static_cast<double>(m));
}

BoundTable bound_table(const Network& net, const MarginAnalysis& analysis, const CoveringModel& covering,
                       std::size_t m, std::size_t num_classes, double delta, bool neglect_delta) {
    BoundTable t;
    t.covering = covering;
    t.m = m;
    for (int v = 1; v <= 4; ++v) t.rows.push_back(ge_bound_expanded(analysis, v, covering, m, num_classes, delta, neglect_delta));
    t.rademacher = rademacher_reference_bound(net, m);
    return t;
}

void write_bound_csv(const BoundTable& t, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << "variant,numerator,min_score,k,C_M,m,bound_value,attaining_sample,applicable,vacuous\n";
    out << std::setprecision(17);
    for (const auto& r : t.rows) {
        out << r.variant << ',' << r.numerator << ',' << r.min_score << ',' << t.covering.k << ',' << t.covering.c_m
            << ',' << t.m << ',';
        if (r.applicable)
            out << r.value << ',' << r.attaining_sample;
        else
            out << "inapplicable,";
        out << ',' << r.applicable << ',' << r.vacuous << '\n';
    }
    out << "rademacher,,," << t.covering.k << ',' << t.covering.c_m << ',' << t.m << ',' << t.rademacher << ",,1,"
        << (t.rademacher > 1.0) << '\n';
}

nlohmann::json bound_table_json(const BoundTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) {
        nlohmann::json j = {{"variant", r.variant},
                            {"numerator", r.numerator},
                            {"min_score", r.min_score},
                            {"k", t.covering.k},
                            {"C_M", t.covering.c_m},
                            {"m", t.m},
                            {"applicable", r.applicable},
                            {"vacuous", r.vacuous}};
        if (r.applicable) {
            j["bound_value"] = r.value;
            j["attaining_sample"] = r.attaining_sample;
        } else {
            j["bound_value"] = nullptr;
            j["offending_samples"] = r.offending;
        }
        rows.push_back(std::move(j));
    }
    return {{"covering", covering_to_json(t.covering)}, {"rows", rows}, {"rademacher_reference", t.rademacher}};
}

}  // namespace marginlab
