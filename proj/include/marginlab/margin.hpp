#pragma once

#include "marginlab/data.hpp"
#include "marginlab/network.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <utility>
#include <vector>

namespace marginlab {

/// o(s) = min over j != y of v_{y,j}^T f(x), v_{y,j} = (e_y - e_j)/sqrt(2).
/// With `literal_sqrt2` the direction is sqrt(2)(e_y - e_j) instead.
double score_from_output(const Vector& f, std::size_t label, bool literal_sqrt2 = false);
double score(const Network& net, const Sample& s, bool literal_sqrt2 = false);

/// Products of the weight-matrix norms bounding the Lipschitz constant.
/// A residual block contributes 1 + (product over its inner layers);
/// pooling contributes 1.
struct NormProducts {
    double spectral = 1.0;
    double frobenius = 1.0;
};

NormProducts norm_products(const Network& net, const SpectralOptions& opts = {1e-12, 20000, 0x5eed});

struct NeighborhoodConfig {
    std::size_t k1 = 32;              // ball samples per fixed-point iteration
    std::size_t convex_samples = 64;  // random convex combinations added to the global set
    int max_iterations = 10;
    double rel_tol = 1e-3;
    std::uint64_t seed = 1;
    bool literal_sqrt2 = false;
    SpectralOptions spectral{1e-12, 20000, 0x5eed};
};

struct MarginSearchConfig {
    std::size_t directions = 64;     // random unit directions
    std::size_t target_points = 32;  // nearest differently labeled training points
    double growth = 1.1;             // geometric march factor
    double max_radius = 0.0;         // 0: 4 x (||x|| + data radius) + 1
    double rel_tol = 1e-6;           // bisection tolerance, relative to ||x||
    std::uint64_t seed = 2;
};

struct MarginReport {
    std::size_t sample_id = 0;
    std::size_t label = 0;
    double score = 0.0;
    bool applicable = false;  // score > 0
    double gamma1_hat = std::numeric_limits<double>::quiet_NaN();
    double gamma2_hat = std::numeric_limits<double>::quiet_NaN();
    double gamma3 = std::numeric_limits<double>::quiet_NaN();
    double gamma4 = std::numeric_limits<double>::quiet_NaN();
    double empirical_margin_ub = std::numeric_limits<double>::quiet_NaN();
    double local_sup = std::numeric_limits<double>::quiet_NaN();  // gamma1 denominator
    double jac_spec = 0.0;                                          // ||J(x_i)||_2
    std::size_t neighborhood_samples = 0;
};

/// Report for one sample in isolation; the global set is the sample and
/// its ball witnesses.
MarginReport margin_bounds(const Network& net, const Sample& s, const NeighborhoodConfig& config = {});

struct MarginAnalysis {
    std::vector<MarginReport> reports;
    NormProducts products;
    double global_sup = 0.0;  // gamma2 denominator
    std::size_t global_samples = 0;
    double min_score = 0.0;
    double max_jac_spec = 0.0;
};

/// Margin reports for every sample of `data`. Every sample's final ball
/// witnesses are included in the global set, so gamma1_hat >= gamma2_hat.
/// `with_empirical` runs the directional search too.
MarginAnalysis analyze_margins(const Network& net, const Dataset& data, const NeighborhoodConfig& config = {},
                               bool with_empirical = true, const MarginSearchConfig& search = {},
                               std::size_t jobs = 1);

/// Upper bound on the distance from x to the nearest point with a
/// different predicted label. Zero when the score is not positive;
/// +inf when no label change is found within the search radius.
double empirical_margin(const Network& net, const Sample& s, const MarginSearchConfig& config = {},
                        const Dataset* data = nullptr);

struct CurveSpec {
    std::vector<Vector> points;

    void validate() const;
    double length() const;
};

/// lhs = ||f(c(1)) - f(c(0))||, rhs = max over curve samples of ||J||_2
/// times the polyline length.
std::pair<double, double> geodesic_expansion_check(const Network& net, const CurveSpec& curve);

void write_margin_csv(const std::vector<MarginReport>& reports, const std::filesystem::path& path);

}  // namespace marginlab
