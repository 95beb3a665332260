#include "marginlab/margin.hpp"

#include "marginlab/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

namespace marginlab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Vector random_unit(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Vector v(n);
    do {
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    } while (v.norm() == 0.0);
    return v / v.norm();
}

// Uniform draw from the ball of the given radius around `center`.
Vector ball_point(const Vector& center, double radius, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Vector u = random_unit(center.size(), rng);
    const double r = radius * std::pow(unit(rng), 1.0 / static_cast<double>(center.size()));
    return center + r * u;
}

double jac_spec(const Network& net, const Vector& x, const SpectralOptions& opts) {
    return spectral_norm(network_jacobian(net, x), opts);
}

void check_sample(const Network& net, const Sample& s) {
    if (s.label >= net.num_classes())
        throw InvalidInput("label " + std::to_string(s.label) + " outside [0, " + std::to_string(net.num_classes()) +
                           ")");
}

struct LocalResult {
    double sup = 0.0;
    std::vector<Vector> witnesses;
    std::size_t evaluated = 0;
};

// Fixed-point estimate of the ball radius: start at gamma3, take the sup of
// ||J||_2 over k1 points in the ball, set the radius to o / sup and repeat.
LocalResult local_sup(const Network& net, const Sample& s, double o, double gamma3, double jac_at_x,
                      const NeighborhoodConfig& cfg, std::uint64_t stream) {
    LocalResult res;
    double radius = gamma3;
    for (int it = 0; it < std::max(1, cfg.max_iterations); ++it) {
        std::mt19937_64 rng(mix(cfg.seed, mix(stream, static_cast<std::uint64_t>(it))));
        std::vector<Vector> pts;
        double sup = jac_at_x;
        for (std::size_t k = 0; k < cfg.k1; ++k) {
            pts.push_back(ball_point(s.x, radius, rng));
            sup = std::max(sup, jac_spec(net, pts.back(), cfg.spectral));
        }
        res.evaluated += cfg.k1;
        res.sup = sup;
        res.witnesses = std::move(pts);
        // A saturated output can drive the radius to infinity; cap it.
        const double cap = 1e3 * (1.0 + s.x.norm());
        const double next = sup > 0.0 ? std::min(o / sup, cap) : cap;
        const bool done = std::abs(next - radius) <= cfg.rel_tol * radius;
        radius = next;
        if (done) break;
    }
    return res;
}

bool same_label(const Network& net, const Vector& x, std::size_t y) {
    const Vector f = evaluate(net, x);
    return score_from_output(f, y) > 0.0;
}

}  // namespace

double score_from_output(const Vector& f, std::size_t label, bool literal_sqrt2) {
    if (f.size() < 2) throw InvalidInput("score needs at least two classes");
    if (label >= static_cast<std::size_t>(f.size()))
        throw InvalidInput("label " + std::to_string(label) + " outside [0, " + std::to_string(f.size()) + ")");
    const auto y = static_cast<Eigen::Index>(label);
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < f.size(); ++j)
        if (j != y) best = std::min(best, f[y] - f[j]);
    return literal_sqrt2 ? best * std::sqrt(2.0) : best / std::sqrt(2.0);
}

double score(const Network& net, const Sample& s, bool literal_sqrt2) {
    check_sample(net, s);
    return score_from_output(evaluate(net, s.x), s.label, literal_sqrt2);
}

NormProducts norm_products(const Network& net, const SpectralOptions& opts) {
    NormProducts p;
    for (const auto& layer : net.layers()) {
        std::visit(overloaded{
                       [&](const DenseLayer& d) {
                           p.spectral *= spectral_norm(d.weight, opts);
                           p.frobenius *= frobenius_norm(d.weight);
                       },
                       [&](const HeadLayer& h) {
                           p.spectral *= spectral_norm(h.weight, opts);
                           p.frobenius *= frobenius_norm(h.weight);
                       },
                       [&](const PoolingLayer&) {},
                       [&](const ResidualBlock& r) {
                           double s = 1.0, f = 1.0;
                           for (const auto& d : r.inner) {
                               s *= spectral_norm(d.weight, opts);
                               f *= frobenius_norm(d.weight);
                           }
                           p.spectral *= 1.0 + s;
                           p.frobenius *= 1.0 + f;
                       },
                   },
                   layer);
    }
    return p;
}

MarginReport margin_bounds(const Network& net, const Sample& s, const NeighborhoodConfig& config) {
    Dataset single;
    single.input_dim = net.input_dim();
    single.num_classes = net.num_classes();
    single.samples.push_back(s);
    return analyze_margins(net, single, config, true).reports.front();
}

MarginAnalysis analyze_margins(const Network& net, const Dataset& data, const NeighborhoodConfig& config,
                               bool with_empirical, const MarginSearchConfig& search, std::size_t jobs) {
    if (data.empty()) throw InvalidInput("analyze_margins: empty dataset");
    if (data.input_dim != net.input_dim()) throw InvalidInput("analyze_margins: dataset dimension mismatch");
    MarginAnalysis out;
    out.products = norm_products(net, config.spectral);
    const std::size_t m = data.size();
    out.reports.resize(m);
    std::vector<std::vector<Vector>> witnesses(m);

    parallel_for(m, jobs, [&](std::size_t i) {
        const Sample& s = data.samples[i];
        check_sample(net, s);
        MarginReport& r = out.reports[i];
        r.sample_id = i;
        r.label = s.label;
        const Vector f = evaluate(net, s.x);
        r.score = score_from_output(f, s.label, config.literal_sqrt2);
        r.jac_spec = jac_spec(net, s.x, config.spectral);
        const double o_unit = score_from_output(f, s.label, false);
        r.applicable = o_unit > 0.0;
        if (!r.applicable) {
            r.empirical_margin_ub = 0.0;
            return;
        }
        r.gamma3 = r.score / out.products.spectral;
        r.gamma4 = r.score / out.products.frobenius;
        LocalResult loc = local_sup(net, s, r.score, r.gamma3, r.jac_spec, config, i);
        r.local_sup = loc.sup;
        r.gamma1_hat = r.score / loc.sup;
        r.neighborhood_samples = loc.evaluated;
        witnesses[i] = std::move(loc.witnesses);
        if (with_empirical) r.empirical_margin_ub = empirical_margin(net, s, search, &data);
    });

    // Global set: every sample, every final ball witness, convex combinations.
    double sup = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < m; ++i) {
        sup = std::max(sup, out.reports[i].jac_spec);
        ++count;
        if (out.reports[i].applicable) sup = std::max(sup, out.reports[i].local_sup);
        count += witnesses[i].size();
    }
    std::mt19937_64 rng(mix(config.seed, 0xC0));
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Vector> combos;
    for (std::size_t k = 0; k < config.convex_samples; ++k) {
        // Dirichlet(1,1,1) weights over three random samples.
        double w[3], tot = 0.0;
        for (double& v : w) tot += (v = -std::log(1.0 - unit(rng)));
        Vector x = Vector::Zero(static_cast<Eigen::Index>(data.input_dim));
        for (double v : w) x += (v / tot) * data.samples[pick(rng)].x;
        combos.push_back(std::move(x));
    }
    std::vector<double> combo_sup(combos.size());
    parallel_for(combos.size(), jobs, [&](std::size_t k) { combo_sup[k] = jac_spec(net, combos[k], config.spectral); });
    for (double v : combo_sup) sup = std::max(sup, v);
    count += combos.size();

    out.global_sup = sup;
    out.global_samples = count;
    out.min_score = std::numeric_limits<double>::infinity();
    for (auto& r : out.reports) {
        out.min_score = std::min(out.min_score, r.score);
        out.max_jac_spec = std::max(out.max_jac_spec, r.jac_spec);
        if (r.applicable) r.gamma2_hat = r.score / sup;
    }
    return out;
}

double empirical_margin(const Network& net, const Sample& s, const MarginSearchConfig& config, const Dataset* data) {
    check_sample(net, s);
    const Vector f = evaluate(net, s.x);
    if (score_from_output(f, s.label) <= 0.0) return 0.0;

    double data_radius = s.x.norm();
    if (data != nullptr)
        for (const auto& d : data->samples) data_radius = std::max(data_radius, d.x.norm());
    const double max_radius = config.max_radius > 0.0 ? config.max_radius : 4.0 * (s.x.norm() + data_radius) + 1.0;
    const double tol = std::max(config.rel_tol * s.x.norm(), 1e-12);
    const auto n = s.x.size();

    std::vector<Vector> dirs;
    // First-order directions toward each competing class boundary.
    const Matrix jac = network_jacobian(net, s.x);
    const auto y = static_cast<Eigen::Index>(s.label);
    for (Eigen::Index j = 0; j < jac.rows(); ++j) {
        if (j == y) continue;
        const Vector g = jac.row(j) - jac.row(y);
        if (g.norm() > 0.0) dirs.push_back(g / g.norm());
    }
    if (data != nullptr) {
        std::vector<std::pair<double, std::size_t>> others;
        for (std::size_t k = 0; k < data->size(); ++k)
            if (data->samples[k].label != s.label) {
                const double d = (data->samples[k].x - s.x).norm();
                if (d > 0.0) others.push_back({d, k});
            }
        const std::size_t keep = std::min(config.target_points, others.size());
        std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(keep), others.end());
        for (std::size_t k = 0; k < keep; ++k)
            dirs.push_back((data->samples[others[k].second].x - s.x) / others[k].first);
    }
    std::mt19937_64 rng(mix(config.seed, std::hash<double>{}(s.x.sum())));
    for (std::size_t k = 0; k < config.directions; ++k) dirs.push_back(random_unit(n, rng));

    double best = std::numeric_limits<double>::infinity();
    const double start = std::max(max_radius * 1e-4, tol);
    for (const Vector& u : dirs) {
        const double limit = std::min(best, max_radius);
        double lo = 0.0, hi = start;
        bool found = false;
        while (hi <= limit) {
            if (!same_label(net, s.x + hi * u, s.label)) {
                found = true;
                break;
            }
            lo = hi;
            hi *= config.growth;
        }
        if (!found && limit < max_radius && limit > lo) {
            hi = limit;
            found = !same_label(net, s.x + hi * u, s.label);
        }
        if (!found) continue;
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            if (same_label(net, s.x + mid * u, s.label))
                lo = mid;
            else
                hi = mid;
        }
        best = std::min(best, hi);
    }
    return best;
}

void CurveSpec::validate() const {
    if (points.size() < 2) throw InvalidInput("curve needs at least two points");
    const auto n = points.front().size();
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].size() != n) throw InvalidInput("curve point " + std::to_string(i) + " has the wrong dimension");
        require_finite(points[i], "curve point " + std::to_string(i));
    }
}

double CurveSpec::length() const {
    double len = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) len += (points[i] - points[i - 1]).norm();
    return len;
}

std::pair<double, double> geodesic_expansion_check(const Network& net, const CurveSpec& curve) {
    curve.validate();
    const double lhs = (evaluate(net, curve.points.back()) - evaluate(net, curve.points.front())).norm();
    const double len = curve.length();
    if (len == 0.0) return {lhs, 0.0};
    double sup = 0.0;
    for (const auto& p : curve.points) sup = std::max(sup, spectral_norm(network_jacobian(net, p), {1e-12, 20000, 0x5eed}));
    return {lhs, sup * len};
}

void write_margin_csv(const std::vector<MarginReport>& reports, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << "sample_id,label,score,gamma1_hat,gamma2_hat,gamma3,gamma4,empirical_margin_ub\n";
    out << std::setprecision(17);
    for (const auto& r : reports)
        out << r.sample_id << ',' << r.label << ',' << r.score << ',' << r.gamma1_hat << ',' << r.gamma2_hat << ','
            << r.gamma3 << ',' << r.gamma4 << ',' << r.empirical_margin_ub << '\n';
}

}  // namespace marginlab
