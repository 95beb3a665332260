#include "helpers.hpp"
#include "oracles.hpp"

#include "marginlab/init.hpp"
#include "marginlab/linalg.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace marginlab;

TEST_CASE("spectral norm of simple matrices") {
    CHECK(spectral_norm(Matrix::Identity(4, 4)) == doctest::Approx(1.0).epsilon(1e-12));
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 3;
    d(1, 1) = 1;
    CHECK(spectral_norm(d) == doctest::Approx(3.0));
    CHECK(spectral_norm(Matrix::Zero(3, 2)) == 0.0);
}

TEST_CASE("spectral norm agrees with a Jacobi SVD") {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
        const Eigen::Index r = 1 + static_cast<Eigen::Index>(rng() % 8);
        const Eigen::Index c = 1 + static_cast<Eigen::Index>(rng() % 8);
        const Matrix m = gaussian_matrix(r, c, 1.0, rng);
        const double ref = oracle::jacobi_singular_values(m).front();
        CHECK(std::abs(spectral_norm(m, {1e-14, 100000, 3}) - ref) <= 1e-8 * std::max(1.0, ref));
    }
    std::mt19937_64 rng2(11);
    const Matrix m = gaussian_matrix(5, 4, 1.0, rng2);
    CHECK(std::abs(spectral_norm(m, {1e-14, 100000, 3}) - oracle::jacobi_singular_values(m).front()) <= 1e-8);
}

TEST_CASE("spectral norm flags non-convergence and rejects non-finite input") {
    std::mt19937_64 rng(3);
    const Matrix m = gaussian_matrix(8, 8, 1.0, rng);
    const auto est = spectral_norm_estimate(m, {1e-16, 1, 1});
    CHECK_FALSE(est.converged);
    CHECK(est.value > 0.0);
    Matrix bad = Matrix::Ones(2, 2);
    bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(spectral_norm(bad), InvalidInput);
}

TEST_CASE("frobenius norm") {
    CHECK(frobenius_norm(Matrix::Identity(5, 5)) == doctest::Approx(std::sqrt(5.0)));
    CHECK(frobenius_norm(Matrix::Zero(3, 3)) == 0.0);
    Matrix row(1, 2);
    row << 3, 4;
    CHECK(frobenius_norm(row) == 5.0);
}
