#include "marginlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace marginlab {

namespace {

// Gram matrices up to this order are formed explicitly; larger ones are
// applied as M^T (M v) on the fly.
constexpr Eigen::Index kExplicitGramLimit = 512;

class GramOperator {
public:
    explicit GramOperator(const Matrix& m) : m_(m), wide_(m.rows() < m.cols()) {
        if (dim() <= kExplicitGramLimit) {
            gram_ = wide_ ? Matrix(m * m.transpose()) : Matrix(m.transpose() * m);
            explicit_ = true;
        }
    }

    Eigen::Index dim() const { return wide_ ? m_.rows() : m_.cols(); }

    Vector apply(const Vector& v) const {
        if (explicit_) return gram_ * v;
        if (wide_) return m_ * (m_.transpose() * v);
        return m_.transpose() * (m_ * v);
    }

private:
    const Matrix& m_;
    bool wide_;
    bool explicit_ = false;
    Matrix gram_;
};

SpectralEstimate power_run(const GramOperator& gram, Vector v, const SpectralOptions& opts) {
    SpectralEstimate est;
    est.converged = false;
    v.normalize();
    double sigma_prev = -1.0;
    for (int it = 1; it <= opts.max_iters; ++it) {
        Vector w = gram.apply(v);
        const double rayleigh = v.dot(w);
        const double sigma = std::sqrt(std::max(rayleigh, 0.0));
        est.iterations = it;
        est.value = std::max(est.value, sigma);
        const double wn = w.norm();
        if (wn == 0.0) {
            // v lies in the null space; the estimate from this start is 0.
            est.converged = true;
            break;
        }
        v = w / wn;
        if (sigma_prev >= 0.0 && std::abs(sigma - sigma_prev) <= 0.1 * opts.tol * sigma) {
            est.converged = true;
            // one more Rayleigh quotient with the refined vector
            est.value = std::max(est.value, std::sqrt(std::max(v.dot(gram.apply(v)), 0.0)));
            break;
        }
        sigma_prev = sigma;
    }
    return est;
}

}  // namespace

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

void require_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) throw InvalidInput(what + ": non-finite entry");
}

void require_finite(const Vector& v, const std::string& what) {
    if (!v.allFinite()) throw InvalidInput(what + ": non-finite entry");
}

SpectralEstimate spectral_norm_estimate(const Matrix& m, const SpectralOptions& opts) {
    if (m.rows() == 0 || m.cols() == 0) throw InvalidInput("spectral_norm: empty matrix");
    if (!(opts.tol > 0.0)) throw InvalidInput("spectral_norm: tol must be positive");
    require_finite(m, "spectral_norm");
    if (m.isZero(0.0)) return {0.0, true, 0};

    GramOperator gram(m);
    const Eigen::Index n = gram.dim();

    SpectralEstimate fixed = power_run(gram, Vector::Ones(n), opts);

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal;
    Vector start(n);
    for (Eigen::Index i = 0; i < n; ++i) start[i] = normal(rng);
    SpectralEstimate restart = power_run(gram, start, opts);

    SpectralEstimate best = fixed.value >= restart.value ? fixed : restart;
    best.converged = fixed.converged && restart.converged;
    best.iterations = fixed.iterations + restart.iterations;
    return best;
}

double spectral_norm(const Matrix& m, const SpectralOptions& opts) {
    return spectral_norm_estimate(m, opts).value;
}

double frobenius_norm(const Matrix& m) {
    require_finite(m, "frobenius_norm");
    return m.norm();
}

}  // namespace marginlab
