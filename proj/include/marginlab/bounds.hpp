#pragma once

#include "marginlab/covering.hpp"
#include "marginlab/margin.hpp"
#include "marginlab/network.hpp"

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

namespace marginlab {

/// eps + M sqrt((2 K log 2 + 2 log(1/delta)) / m). delta = 1 drops the
/// confidence term.
double ge_bound_general(double k, double eps, double loss_bound, std::size_t m, double delta);

struct GeBoundInputs {
    std::size_t m = 1;
    std::size_t num_classes = 2;
    double delta = 0.1;
    double loss_bound = 1.0;
    double gamma = 1.0;
    CoveringModel covering;

    void validate() const;
};

/// Large-margin robustness: K = N_Y * N(X; gamma/2), eps = 0.
double ge_bound_margin(const GeBoundInputs& in);

/// sqrt(log2 N_Y 2^(k+1) C_M^k / (gamma^k m)) + sqrt(2 log(1/delta) / m);
/// `neglect_delta` drops the second term.
double ge_bound_manifold(const GeBoundInputs& in, bool neglect_delta = false);

struct ExpandedBound {
    int variant = 0;  // 1: local sup, 2: global sup, 3: prod spectral, 4: prod Frobenius
    bool applicable = false;
    std::vector<std::size_t> offending;  // samples with score <= 0
    double numerator = 0.0;              // at the attaining sample
    double min_score = 0.0;
    double gamma_b = 0.0;                // min over samples of score / numerator
    std::size_t attaining_sample = 0;
    double value = 0.0;
    bool vacuous = false;  // value > 1
};

/// sqrt(2 log2 N_Y N(X; gamma_b/2) / m) (+ the delta term unless
/// neglected), with gamma_b from the selected numerator. For a manifold
/// model this is C C_M^(k/2) m^(-1/2) max(num/o)^(k/2).
ExpandedBound ge_bound_expanded(const MarginAnalysis& analysis, int variant, const CoveringModel& covering,
                                std::size_t m, std::size_t num_classes, double delta = 1.0,
                                bool neglect_delta = true);

/// (1/sqrt(m)) 2^(L-1) prod ||W_l||_F over the L weight matrices.
double rademacher_reference_bound(const Network& net, std::size_t m);

struct BoundTable {
    std::vector<ExpandedBound> rows;
    double rademacher = 0.0;
    CoveringModel covering;
    std::size_t m = 0;
};

BoundTable bound_table(const Network& net, const MarginAnalysis& analysis, const CoveringModel& covering,
                       std::size_t m, std::size_t num_classes, double delta = 1.0, bool neglect_delta = true);

/// Columns: variant,numerator,min_score,k,C_M,m,bound_value,attaining_sample
/// plus applicable and vacuous flags; the reference bound is the last row.
void write_bound_csv(const BoundTable& table, const std::filesystem::path& path);
nlohmann::json bound_table_json(const BoundTable& table);

}  // namespace marginlab
