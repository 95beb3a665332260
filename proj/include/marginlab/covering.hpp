#pragma once

#include <cstddef>
#include <json.hpp>
#include <string>

namespace marginlab {

enum class CoveringKind { gmm, k_sparse, manifold };

/// Data model with a closed-form covering number in the Euclidean metric.
struct CoveringModel {
    CoveringKind kind = CoveringKind::manifold;
    std::size_t atoms = 1;  // L: Gaussians (gmm) or dictionary atoms (k_sparse)
    std::size_t k = 1;      // intrinsic dimension / rank / sparsity
    double c_m = 1.0;       // manifold regularity constant

    static CoveringModel gmm(std::size_t components, std::size_t rank);
    static CoveringModel k_sparse(std::size_t atoms, std::size_t sparsity);
    static CoveringModel manifold(double c_m, std::size_t dim);

    void validate() const;
};

std::string to_string(CoveringKind kind);
CoveringKind parse_covering_kind(const std::string& s);

/// Natural log of N(X; d, rho); stays finite where the value itself would overflow.
double log_covering_number(const CoveringModel& model, double rho);
double covering_number(const CoveringModel& model, double rho);

nlohmann::json covering_to_json(const CoveringModel& model);
CoveringModel covering_from_json(const nlohmann::json& j);

}  // namespace marginlab
