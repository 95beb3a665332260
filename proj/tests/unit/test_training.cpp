#include "helpers.hpp"

#include "marginlab/data.hpp"
#include "marginlab/init.hpp"
#include "marginlab/training.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace marginlab;
using testing::linear_net;
using testing::vec;

namespace {

Dataset two_blobs(std::size_t m, std::uint64_t seed, double sep = 4.0) {
    GmmSpec g;
    g.seed = seed;
    g.components = {{vec({sep / 2, 0}), Matrix::Identity(2, 1) * 0.5, 0},
                    {vec({-sep / 2, 0}), Matrix::Identity(2, 1) * 0.5, 1}};
    g.components[0].factor = (Matrix(2, 1) << 0, 0.5).finished();
    g.components[1].factor = g.components[0].factor;
    return sample_gmm(g, m);
}

}  // namespace

TEST_CASE("loss values") {
    const Network sm = linear_net(Matrix::Zero(2, 2), Vector::Zero(2), HeadKind::softmax);
    const std::vector<Sample> s{{vec({1, 1}), 1}};
    CHECK(loss_value(sm, s, {}) == doctest::Approx(std::log(2.0)));

    const Network big = linear_net(Matrix::Zero(2, 1), vec({30, -30}), HeadKind::softmax);
    const std::vector<Sample> t{{vec({0}), 0}};
    CHECK(loss_value(big, t, {}) <= 1e-6);

    const Network lin = linear_net(Matrix::Zero(2, 1), vec({2, 0}));
    CHECK(loss_value(lin, t, {LossKind::hinge, 1.0}) == 0.0);
    CHECK_THROWS_AS(loss_value(lin, t, {}), InvalidInput);
}

TEST_CASE("Jacobian penalty on a linear network") {
    std::mt19937_64 rng(2);
    const Matrix w = gaussian_matrix(3, 4, 1.0, rng);
    const Network lin = linear_net(w, Vector::Zero(3));
    const std::vector<Sample> batch{{gaussian_vector(4, 1.0, rng), 0}, {gaussian_vector(4, 1.0, rng), 2}};
    CHECK(jacobian_penalty(lin, batch) == doctest::Approx(w.squaredNorm()).epsilon(1e-14));

    // The penalty gradient is the difference from the unregularized one.
    const RegSpec jac{RegKind::jacobian, 1.0};
    const Gradients with = gradients(lin, batch, {LossKind::hinge}, jac);
    const Gradients without = gradients(lin, batch, {LossKind::hinge}, {});
    CHECK((with[0].weight - without[0].weight - 2.0 * w).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("sampled-row penalty over every row equals the Frobenius penalty") {
    RandomNetSpec spec;
    spec.num_classes = 3;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Network net = random_network(spec, seed);
        std::mt19937_64 rng(seed);
        std::vector<Sample> batch;
        for (int i = 0; i < 4; ++i) batch.push_back({gaussian_vector(6, 1.0, rng), static_cast<std::size_t>(i % 3)});
        const RowSelection rows = all_rows(batch.size(), 3);
        CHECK(3.0 * sampled_row_penalty(net, batch, rows) == doctest::Approx(jacobian_penalty(net, batch)).epsilon(1e-13));
    }
}

TEST_CASE("SGD with momentum") {
    Network net = linear_net(Matrix::Constant(1, 2, 2.0), vec({1}));
    OptimizerState st = make_optimizer_state(net);
    Gradients g = zero_gradients(net);
    g[0].weight = Matrix::Constant(1, 2, 2.0);
    g[0].bias = vec({1});
    sgd_step(st, net, g, 1.0, 0.0);
    CHECK(net.parameters()[0].weight->isZero());
    CHECK(net.parameters()[0].bias->isZero());

    st.velocity[0].weight = Matrix::Constant(1, 2, 0.5);
    sgd_step(st, net, zero_gradients(net), 0.1, 0.9);
    CHECK(st.velocity[0].weight.isApprox(Matrix::Constant(1, 2, 0.45)));
    CHECK(net.parameters()[0].weight->isApprox(Matrix::Constant(1, 2, 0.45)));

    // v1 = -r g1, p1 = p0 + v1; v2 = mu v1 - r g2, p2 = p1 + v2.
    Network n2 = linear_net(Matrix::Constant(1, 1, 1.0), vec({0}));
    OptimizerState s2 = make_optimizer_state(n2);
    Gradients g1 = zero_gradients(n2), g2 = zero_gradients(n2);
    g1[0].weight(0, 0) = 0.3;
    g2[0].weight(0, 0) = -0.7;
    sgd_step(s2, n2, g1, 0.1, 0.9);
    sgd_step(s2, n2, g2, 0.1, 0.9);
    const double v1 = -0.1 * 0.3, p1 = 1.0 + v1, v2 = 0.9 * v1 - 0.1 * -0.7;
    CHECK((*n2.parameters()[0].weight)(0, 0) == p1 + v2);
}

TEST_CASE("learning-rate schedule") {
    const Schedule s = step_schedule(0.1, 10, 5, 15);
    CHECK(rate_at(s, 0) == doctest::Approx(0.1));
    CHECK(rate_at(s, 5) == doctest::Approx(0.01));
    CHECK(rate_at(s, 14) == doctest::Approx(0.001));
    CHECK(rate_at(s, 100) == doctest::Approx(0.001));
}

TEST_CASE("gradient checks over losses and regularizers") {
    RandomNetSpec spec;
    for (auto head : {HeadKind::softmax, HeadKind::linear}) {
        spec.heads = {head};
        const LossSpec loss{head == HeadKind::softmax ? LossKind::cross_entropy : LossKind::hinge};
        for (auto reg : {RegKind::none, RegKind::weight_decay, RegKind::jacobian, RegKind::jacobian_row}) {
            for (auto act : {Activation::relu, Activation::sigmoid, Activation::tanh}) {
                spec.activations = {act};
                const Network net = random_network(spec, 31 + static_cast<std::uint64_t>(reg));
                std::mt19937_64 rng(5);
                std::vector<Sample> batch;
                for (int i = 0; i < 3; ++i) batch.push_back({gaussian_vector(6, 1.0, rng), static_cast<std::size_t>(i)});
                const RowSelection rows = draw_rows(batch.size(), 3, 2, rng);
                const auto r = grad_check(net, batch, loss, {reg, 0.1, 2}, &rows);
                CAPTURE(to_string(reg));
                CAPTURE(to_string(act));
                CHECK(r.checked > 0);
                CHECK(r.max_rel_error <= (act == Activation::relu ? 1e-5 : 1e-6));
            }
        }
    }
}

TEST_CASE("gradient check catches a corrupted gradient") {
    const Network net = init_mlp({3, {5}, Activation::tanh, HeadKind::softmax, 2}, 3);
    const std::vector<Sample> batch{{vec({0.1, -0.2, 0.3}), 1}};
    GradCheckOptions opts;
    opts.tamper = [](Gradients& g) { g[0].weight *= 1.1; };
    CHECK(grad_check(net, batch, {}, {}, nullptr, opts).max_rel_error > 1e-2);
}

TEST_CASE("training a separable problem") {
    const Dataset data = two_blobs(200, 1);
    const Network net = init_mlp({2, {8}, Activation::relu, HeadKind::softmax, 2}, 1);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 3;
    const TrainResult a = train(net, data, nullptr, cfg);
    CHECK(a.history.back().train_acc == 1.0);

    const TrainResult b = train(net, data, nullptr, cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].mean_jac_frob == b.history[i].mean_jac_frob);
    }
}

TEST_CASE("huge Jacobian penalty collapses the Jacobian") {
    const Dataset data = two_blobs(64, 2);
    const Network net = init_mlp({2, {8}, Activation::relu, HeadKind::softmax, 2}, 2);
    const JacobianStats before = jacobian_stats(net, data);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.reg = {RegKind::jacobian, 1e6};
    cfg.clip_norm = 1.0;
    const TrainResult r = train(net, data, nullptr, cfg);
    const JacobianStats after = jacobian_stats(r.net, data);
    for (std::size_t i = 0; i < data.size(); ++i) CHECK(after.frob[i] < before.frob[i]);
}

TEST_CASE("weight-norm training keeps unit rows") {
    const Dataset data = two_blobs(64, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.weight_norm = true;
    const TrainResult r = train(init_mlp({2, {6, 6}, Activation::relu, HeadKind::softmax, 2}, 1), data, nullptr, cfg);
    for (const auto& p : r.net.parameters())
        for (Eigen::Index i = 0; i < p.weight->rows(); ++i) CHECK(p.weight->row(i).norm() == doctest::Approx(1.0));
}

TEST_CASE("history CSV") {
    testing::TempDir dir("hist");
    write_history_csv({EpochRecord{0, 0.1, 0.5, 0.75, 0.7, 1.0, 2.0}}, dir.path / "h.csv");
    std::ifstream in(dir.path / "h.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,lr,train_loss,train_acc,test_acc,mean_jac_frob,max_jac_spec");
}

TEST_CASE("invalid configurations") {
    CHECK_THROWS_AS(parse_reg_kind("l1"), InvalidInput);
    CHECK(parse_reg_kind("jac-row") == RegKind::jacobian_row);
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    RegSpec r{RegKind::jacobian, -1.0};
    CHECK_THROWS_AS(r.validate(), InvalidInput);
}
