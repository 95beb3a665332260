#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace marginlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when an argument violates a documented precondition
/// (dimension mismatch, non-finite entries, out-of-range label, ...).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SpectralOptions {
    double tol = 1e-6;
    int max_iters = 1000;
    /// Seed for the single random restart.
    std::uint64_t seed = 0x5eed;
};

struct SpectralEstimate {
    double value = 0.0;
    bool converged = true;
    int iterations = 0;
};

/// Largest singular value by power iteration on the Gram matrix.
///
/// Two runs are made: one from the normalized all-ones vector and one from
/// a random unit vector drawn from `opts.seed`; the larger estimate wins.
/// Power iteration approaches the top singular value from below, so the
/// estimate never exceeds the true norm by more than rounding.
SpectralEstimate spectral_norm_estimate(const Matrix& m, const SpectralOptions& opts = {});

/// Convenience wrapper returning only the value.
double spectral_norm(const Matrix& m, const SpectralOptions& opts = {});

double frobenius_norm(const Matrix& m);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

void require_finite(const Matrix& m, const std::string& what);
void require_finite(const Vector& v, const std::string& what);

}  // namespace marginlab
