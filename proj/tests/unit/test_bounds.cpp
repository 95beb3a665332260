#include "helpers.hpp"

#include "marginlab/bounds.hpp"
#include "marginlab/covering.hpp"
#include "marginlab/init.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace marginlab;
using testing::linear_net;
using testing::vec;

TEST_CASE("covering numbers") {
    CHECK(covering_number(CoveringModel::gmm(2, 1), 1.0) == doctest::Approx(6.0));
    CHECK(covering_number(CoveringModel::manifold(1.0, 3), 1.0) == doctest::Approx(1.0));
    CHECK(covering_number(CoveringModel::k_sparse(4, 2), 2.0) == doctest::Approx(24.0));
    CHECK(std::isfinite(log_covering_number(CoveringModel::manifold(10.0, 400), 1e-3)));
    CHECK_THROWS_AS(covering_number(CoveringModel::gmm(2, 1), 0.0), InvalidInput);
}

TEST_CASE("manifold bound arithmetic") {
    GeBoundInputs in;
    in.m = 1000;
    in.num_classes = 2;
    in.delta = 0.5;
    in.gamma = 1.0;
    in.covering = CoveringModel::manifold(1.0, 1);
    // sqrt(log2 * 2 * 4 / 1000) + sqrt(2 log 2 / 1000)
    const double first = std::sqrt(std::log(2.0) * 8.0 / 1000.0);
    const double second = std::sqrt(2.0 * std::log(2.0) / 1000.0);
    CHECK(first == doctest::Approx(0.07446).epsilon(1e-4));
    CHECK(ge_bound_manifold(in) == doctest::Approx(0.11169).epsilon(1e-4));
    CHECK(std::abs(ge_bound_manifold(in) - (first + second)) <= 1e-15);

    GeBoundInputs four = in;
    four.m = 4000;
    CHECK(ge_bound_manifold(four) == doctest::Approx(ge_bound_manifold(in) / 2).epsilon(1e-14));
}

TEST_CASE("general bound arithmetic") {
    const double k = 1000.0 / (2.0 * std::log(2.0));
    CHECK(ge_bound_general(k, 0.0, 1.0, 1000, 1.0) == doctest::Approx(1.0).epsilon(1e-14));
    const double kgmm = 2.0 * covering_number(CoveringModel::gmm(2, 1), 0.5);
    CHECK(kgmm == doctest::Approx(20.0));
    const double ref = std::sqrt((2 * 20 * std::log(2.0) + 2 * std::log(10.0)) / 100);
    CHECK(ge_bound_general(kgmm, 0.0, 1.0, 100, 0.1) == doctest::Approx(ref).epsilon(1e-14));
    CHECK(ref == doctest::Approx(0.5686).epsilon(1e-4));
    CHECK_THROWS_AS(ge_bound_general(0.5, 0, 1, 10, 0.1), InvalidInput);
    CHECK_THROWS_AS(ge_bound_general(2, 0, 1, 10, 0.0), InvalidInput);
}

TEST_CASE("margin bound agrees with the manifold bound without the delta term") {
    GeBoundInputs in;
    in.m = 500;
    in.num_classes = 3;
    in.delta = 1.0;
    in.gamma = 0.3;
    in.covering = CoveringModel::manifold(1.5, 2);
    CHECK(std::abs(ge_bound_margin(in) - ge_bound_manifold(in, true)) <= 1e-12);
}

TEST_CASE("expanded bounds") {
    const Network id = linear_net(Matrix::Identity(2, 2), Vector::Zero(2));
    Dataset d;
    d.input_dim = 2;
    d.num_classes = 2;
    d.samples = {{vec({std::sqrt(2.0), 0}), 0}};
    const MarginAnalysis a = analyze_margins(id, d, {}, false);
    const auto b3 = ge_bound_expanded(a, 3, CoveringModel::manifold(2.0, 2), 100, 2);
    CHECK(b3.applicable);
    CHECK(b3.value == doctest::Approx(std::sqrt(std::log(2.0) * 2 * 8) * 2.0 / 10.0).epsilon(1e-12));
    CHECK(b3.value == doctest::Approx(0.666).epsilon(1e-3));

    const Network net = init_mlp({3, {6, 6}, Activation::relu, HeadKind::linear, 2}, 2);
    Dataset e;
    e.input_dim = 3;
    e.num_classes = 2;
    std::mt19937_64 rng(2);
    for (int i = 0; i < 30; ++i) {
        const Vector x = gaussian_vector(3, 1.0, rng);
        const Sample s{x, classify(net, x)};
        if (score(net, s) > 1e-9) e.samples.push_back(s);
    }
    const MarginAnalysis ea = analyze_margins(net, e, {}, false);
    const BoundTable t = bound_table(net, ea, CoveringModel::manifold(1.0, 2), 30, 2);
    REQUIRE(t.rows.size() == 4);
    for (int v = 0; v < 3; ++v) CHECK(t.rows[v].value <= t.rows[v + 1].value * (1 + 1e-12));

    e.samples[0].label = 1 - e.samples[0].label;
    const MarginAnalysis bad = analyze_margins(net, e, {}, false);
    const auto inap = ge_bound_expanded(bad, 3, CoveringModel::manifold(1.0, 2), 30, 2);
    CHECK_FALSE(inap.applicable);
    CHECK(inap.offending.front() == 0);

    testing::TempDir dir("bounds");
    write_bound_csv(t, dir.path / "b.csv");
    std::ifstream in(dir.path / "b.csv");
    std::string line;
    int rows = 0;
    std::string last;
    while (std::getline(in, line)) {
        ++rows;
        last = line;
    }
    CHECK(rows == 6);
    CHECK(last.rfind("rademacher,", 0) == 0);
}

TEST_CASE("orthonormal rows give a depth-independent variant 3") {
    std::mt19937_64 rng(3);
    for (int depth : {1, 2, 3}) {
        std::vector<Layer> layers;
        for (int l = 0; l < depth - 1; ++l) {
            Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(4, 4, 1.0, rng));
            layers.push_back(DenseLayer{qr.householderQ(), Vector::Constant(4, 10.0), Activation::relu});
        }
        layers.push_back(HeadLayer{HeadKind::linear, Matrix::Identity(2, 4) * 1.0, Vector::Zero(2)});
        // The head is 2 x 4 with orthonormal rows; ReLU stays in its linear region via the bias.
        const Network net(4, layers);
        Dataset d;
        d.input_dim = 4;
        d.num_classes = 2;
        for (int i = 0; i < 10; ++i) {
            Vector x = gaussian_vector(4, 0.1, rng);
            const Vector f = evaluate(net, x);
            d.samples.push_back({x, f[0] > f[1] ? 0u : 1u});
        }
        const MarginAnalysis a = analyze_margins(net, d, {}, false);
        const auto b = ge_bound_expanded(a, 3, CoveringModel::manifold(1.0, 2), 100, 2);
        const double c = std::sqrt(std::log(2.0) * 2 * 8);
        CHECK(b.value == doctest::Approx(c * std::pow(1.0 / a.min_score, 1.0) / 10.0).epsilon(1e-10));
    }
}

TEST_CASE("reference bound") {
    Matrix w(1, 2);
    w << 0.6, 0.8;
    CHECK(rademacher_reference_bound(linear_net(w, Vector::Zero(1)), 1) == doctest::Approx(1.0));
    const Network two(2, {DenseLayer{Matrix::Identity(2, 2), Vector::Zero(2), Activation::relu},
                          HeadLayer{HeadKind::linear, w, Vector::Zero(1)}});
    CHECK(rademacher_reference_bound(two, 1) == doctest::Approx(2.0 * std::sqrt(2.0)));
}
