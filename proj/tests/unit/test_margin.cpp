#include "helpers.hpp"
#include "oracles.hpp"

#include "marginlab/init.hpp"
#include "marginlab/margin.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace marginlab;
using testing::linear_net;
using testing::vec;

namespace {

Matrix random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(n, n, 1.0, rng));
    return qr.householderQ();
}

}  // namespace

TEST_CASE("score") {
    CHECK(score_from_output(vec({1, 0}), 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(score_from_output(vec({1, 0}), 0, true) == doctest::Approx(std::sqrt(2.0)));
    CHECK(score_from_output(vec({0.4, 0.4, 0.2}), 0) == 0.0);

    std::mt19937_64 rng(1);
    for (int t = 0; t < 50; ++t) {
        const Vector f = gaussian_vector(3, 1.0, rng);
        const std::size_t y = static_cast<std::size_t>(t % 3);
        double ref = 1e300;
        for (std::size_t j = 0; j < 3; ++j)
            if (j != y) ref = std::min(ref, (f[static_cast<Eigen::Index>(y)] - f[static_cast<Eigen::Index>(j)]) / std::sqrt(2.0));
        CHECK(score_from_output(f, y) == doctest::Approx(ref).epsilon(1e-15));
    }
}

TEST_CASE("certified bounds on simple networks") {
    const Network twice = linear_net(2.0 * Matrix::Identity(2, 2), Vector::Zero(2));
    // f = (2x0, 2x1); o = 1 at x0 - x1 = 1/sqrt(2).
    const Sample s{vec({1.0 / std::sqrt(2.0), 0.0}), 0};
    const MarginReport r = margin_bounds(twice, s);
    CHECK(r.score == doctest::Approx(1.0));
    CHECK(r.gamma3 == doctest::Approx(0.5));

    std::mt19937_64 rng(16);
    const std::size_t m = 16;
    std::vector<Layer> layers;
    for (int l = 0; l < 2; ++l) layers.push_back(DenseLayer{random_orthogonal(m, rng), Vector::Zero(m), Activation::relu});
    layers.push_back(HeadLayer{HeadKind::linear, random_orthogonal(m, rng), Vector::Zero(m)});
    const Network ortho(m, layers);
    const NormProducts p = norm_products(ortho);
    CHECK(p.spectral == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.frobenius == doctest::Approx(std::pow(16.0, 1.5)).epsilon(1e-12));

    const Network net = init_mlp({4, {8, 8}, Activation::relu, HeadKind::linear, 3}, 5);
    for (int t = 0; t < 20; ++t) {
        const Vector x = gaussian_vector(4, 1.0, rng);
        const MarginReport q = margin_bounds(net, {x, classify(net, x)});
        if (!q.applicable) continue;
        CHECK(q.gamma3 >= q.gamma4);
        CHECK(q.gamma1_hat >= q.gamma2_hat);
        CHECK(q.gamma2_hat >= q.gamma3 * (1 - 1e-12));
    }
}

TEST_CASE("misclassified samples are marked inapplicable") {
    const Network id = linear_net(Matrix::Identity(2, 2), Vector::Zero(2));
    const MarginReport r = margin_bounds(id, {vec({0, 1}), 0});
    CHECK_FALSE(r.applicable);
    CHECK(r.score < 0);
    CHECK(empirical_margin(id, {vec({0, 1}), 0}) == 0.0);
}

TEST_CASE("empirical margin of a linear classifier") {
    Matrix w(2, 2);
    w << 1, 0, -1, 0;
    const Network lin = linear_net(w, Vector::Zero(2));
    CHECK(empirical_margin(lin, {vec({2, 0}), 0}) == doctest::Approx(2.0).epsilon(1e-5));
    CHECK(empirical_margin(lin, {vec({0, 3}), 0}) == 0.0);
}

TEST_CASE("empirical margin matches a grid oracle on the identity network") {
    const Network id = linear_net(Matrix::Identity(2, 2), Vector::Zero(2));
    const double lo = -3, hi = 3, cell = (hi - lo) / 399;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int t = 0; t < 10; ++t) {
        const Vector x = vec({u(rng), u(rng)});
        const std::size_t y = classify(id, x);
        const double ref = oracle::grid_margin(id, x, y, lo, hi);
        CHECK(std::abs(empirical_margin(id, {x, y}) - ref) <= cell);
        CHECK(std::abs(empirical_margin(id, {x, y}) - std::abs(x[0] - x[1]) / std::sqrt(2.0)) <= 1e-5);
    }
}

TEST_CASE("geodesic expansion check") {
    const Network net = init_mlp({2, {8}, Activation::relu, HeadKind::linear, 2}, 1);
    const auto [l0, r0] = geodesic_expansion_check(net, CurveSpec{{vec({1, 1}), vec({1, 1})}});
    CHECK(l0 == 0.0);
    CHECK(r0 == 0.0);

    std::mt19937_64 rng(4);
    const Matrix w = gaussian_matrix(2, 2, 1.0, rng);
    const Network lin = linear_net(w, Vector::Zero(2));
    Eigen::JacobiSVD<Matrix> svd(w, Eigen::ComputeFullV);
    const Vector v = svd.matrixV().col(0);
    CurveSpec seg;
    for (int i = 0; i <= 10; ++i) seg.points.push_back(0.3 * i * v);
    const auto [ls, rs] = geodesic_expansion_check(lin, seg);
    CHECK(ls == doctest::Approx(rs).epsilon(1e-8));

    CurveSpec semi;
    for (int i = 0; i < 512; ++i) {
        const double th = std::numbers::pi * i / 511.0;
        semi.points.push_back(vec({std::cos(th), std::sin(th)}));
    }
    const auto [lh, rh] = geodesic_expansion_check(net, semi);
    CHECK(lh <= rh + 1e-8);
    CHECK_THROWS_AS(geodesic_expansion_check(net, CurveSpec{{vec({1, 1})}}), InvalidInput);
}
