#include "marginlab/covering.hpp"

#include "marginlab/linalg.hpp"

#include <cmath>

namespace marginlab {

CoveringModel CoveringModel::gmm(std::size_t components, std::size_t rank) {
    return {CoveringKind::gmm, components, rank, 1.0};
}

CoveringModel CoveringModel::k_sparse(std::size_t atoms, std::size_t sparsity) {
    return {CoveringKind::k_sparse, atoms, sparsity, 1.0};
}

CoveringModel CoveringModel::manifold(double c_m, std::size_t dim) {
    return {CoveringKind::manifold, 1, dim, c_m};
}

void CoveringModel::validate() const {
    if (k < 1) throw InvalidInput("covering model: k must be at least 1");
    if (atoms < 1) throw InvalidInput("covering model: L must be at least 1");
    if (kind == CoveringKind::k_sparse && k > atoms)
        throw InvalidInput("covering model: sparsity k exceeds the number of atoms L");
    if (kind == CoveringKind::manifold && !(c_m > 0.0 && std::isfinite(c_m)))
        throw InvalidInput("covering model: C_M must be positive");
}

std::string to_string(CoveringKind kind) {
    switch (kind) {
        case CoveringKind::gmm: return "gmm";
        case CoveringKind::k_sparse: return "k_sparse";
        case CoveringKind::manifold: return "manifold";
    }
    return "?";
}

CoveringKind parse_covering_kind(const std::string& s) {
    if (s == "gmm") return CoveringKind::gmm;
    if (s == "k_sparse") return CoveringKind::k_sparse;
    if (s == "manifold") return CoveringKind::manifold;
    throw InvalidInput("unknown covering model '" + s + "'");
}

double log_covering_number(const CoveringModel& model, double rho) {
    if (!(rho > 0.0)) throw InvalidInput("covering number: rho must be positive");
    model.validate();
    const double k = static_cast<double>(model.k);
    switch (model.kind) {
        case CoveringKind::gmm:
            return std::log(static_cast<double>(model.atoms)) + k * std::log1p(2.0 / rho);
        case CoveringKind::k_sparse: {
            const double n = static_cast<double>(model.atoms);
            const double log_binom = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
            return log_binom + k * std::log1p(2.0 / rho);
        }
        case CoveringKind::manifold:
            return k * (std::log(model.c_m) - std::log(rho));
    }
    return 0.0;
}

double covering_number(const CoveringModel& model, double rho) {
    const double log_value = log_covering_number(model, rho);
    if (log_value > 700.0) return std::exp(log_value);  // overflows to inf past ~709
    const double k = static_cast<double>(model.k);
    switch (model.kind) {
        case CoveringKind::gmm:
            return static_cast<double>(model.atoms) * std::pow(1.0 + 2.0 / rho, k);
        case CoveringKind::k_sparse: {
            double binom = 1.0;
            for (std::size_t i = 1; i <= model.k; ++i)
                binom = binom * static_cast<double>(model.atoms - model.k + i) / static_cast<double>(i);
            return binom * std::pow(1.0 + 2.0 / rho, k);
        }
        case CoveringKind::manifold:
            return std::pow(model.c_m / rho, k);
    }
    return 0.0;
}

nlohmann::json covering_to_json(const CoveringModel& model) {
    return {{"kind", to_string(model.kind)}, {"L", model.atoms}, {"k", model.k}, {"C_M", model.c_m}};
}

CoveringModel covering_from_json(const nlohmann::json& j) {
    CoveringModel m;
    m.kind = parse_covering_kind(j.at("kind").get<std::string>());
    m.atoms = j.value("L", std::size_t{1});
    m.k = j.at("k").get<std::size_t>();
    m.c_m = j.value("C_M", 1.0);
    m.validate();
    return m;
}

}  // namespace marginlab
