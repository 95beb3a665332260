#include "marginlab/verify.hpp"

#include "marginlab/bounds.hpp"
#include "marginlab/init.hpp"
#include "marginlab/margin.hpp"
#include "marginlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

namespace marginlab {

namespace {

struct Context {
    const VerifyOptions& opts;
    bool corrupt_jacobian = false;

    Matrix jac(const Network& net, const Vector& x) const {
        Matrix j = network_jacobian(net, x);
        if (corrupt_jacobian) j(0, 0) += 1e-3 * (1.0 + std::abs(j(0, 0)));
        return j;
    }
};

struct Tracker {
    SuiteResult r;
    Tracker(std::string name, double threshold) {
        r.name = std::move(name);
        r.threshold = threshold;
    }
    void observe(double v, const std::string& where) {
        // NaN compares false and is kept as the worst case.
        if (r.cases++ == 0 || !(v <= r.worst)) {
            r.worst = v;
            r.detail = where;
        }
    }
    SuiteResult finish() {
        r.passed = std::isfinite(r.worst) && r.worst <= r.threshold;
        return r;
    }
};

Vector central_fd_column(const Network& net, const Vector& x, Eigen::Index k, double h) {
    Vector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    return (evaluate(net, xp) - evaluate(net, xm)) / (2.0 * h);
}

bool smooth_around(const Network& net, const Vector& x, double h) {
    const auto base = switching_pattern(net, forward(net, x));
    for (Eigen::Index k = 0; k < x.size(); ++k)
        for (double s : {h, -h}) {
            Vector y = x;
            y[k] += s;
            if (switching_pattern(net, forward(net, y)) != base) return false;
        }
    return true;
}

std::string tag(std::size_t trial) { return "trial " + std::to_string(trial); }

SuiteResult suite_jacobian_fd(const Context& c) {
    Tracker t("jacobian_fd", 1e-5);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        RandomNetSpec spec;
        const Network net = random_network(spec, c.opts.seed * 1000 + i);
        std::mt19937_64 rng(c.opts.seed + 17 * i);
        Vector x = gaussian_vector(static_cast<Eigen::Index>(spec.input_dim), 1.0, rng);
        for (int tries = 0; tries < 20 && !smooth_around(net, x, 1e-4); ++tries)
            x = gaussian_vector(static_cast<Eigen::Index>(spec.input_dim), 1.0, rng);
        const Matrix j = c.jac(net, x);
        Matrix fd(j.rows(), j.cols());
        for (Eigen::Index k = 0; k < x.size(); ++k) fd.col(k) = central_fd_column(net, x, k, 1e-5);
        const double scale = std::max(j.cwiseAbs().maxCoeff(), 1e-8);
        t.observe((j - fd).cwiseAbs().maxCoeff() / scale, tag(i));
    }
    return t.finish();
}

SuiteResult suite_average_jacobian(const Context& c) {
    Tracker t("average_jacobian", 1e-6);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        RandomNetSpec spec;
        spec.activations = {Activation::tanh, Activation::sigmoid};
        spec.allow_pooling = false;
        const Network net = random_network(spec, c.opts.seed * 2000 + i);
        std::mt19937_64 rng(c.opts.seed + 31 * i);
        const Vector x = gaussian_vector(static_cast<Eigen::Index>(spec.input_dim), 1.0, rng);
        const Vector x2 = x + gaussian_vector(x.size(), 0.02, rng);
        const int steps = 64;
        Matrix avg = Matrix::Zero(static_cast<Eigen::Index>(spec.num_classes), x.size());
        for (int k = 0; k <= steps; ++k) {
            const double w = (k == 0 || k == steps) ? 0.5 : 1.0;
            avg += w * c.jac(net, Vector(x + (static_cast<double>(k) / steps) * (x2 - x)));
        }
        avg /= steps;
        const Vector d = x2 - x;
        t.observe((evaluate(net, x2) - evaluate(net, x) - avg * d).norm() / d.norm(), tag(i));
    }
    return t.finish();
}

SuiteResult suite_linear_expansion(const Context& c) {
    Tracker t("linear_expansion", 1e-8);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        RandomNetSpec spec;
        const Network net = random_network(spec, c.opts.seed * 3000 + i);
        std::mt19937_64 rng(c.opts.seed + 37 * i);
        const Vector x = gaussian_vector(static_cast<Eigen::Index>(spec.input_dim), 1.0, rng);
        const Vector x2 = gaussian_vector(x.size(), 1.0, rng);
        double sup = 0.0;
        for (int k = 0; k < 200; ++k)
            sup = std::max(sup, spectral_norm(c.jac(net, Vector(x + (k / 199.0) * (x2 - x))), {1e-12, 20000, 1}));
        const double lhs = (evaluate(net, x2) - evaluate(net, x)).norm();
        // Violation relative to the segment length.
        t.observe((lhs - sup * (x2 - x).norm()) / (x2 - x).norm(), tag(i));
    }
    return t.finish();
}

SuiteResult suite_softmax_spectral(const Context& c) {
    Tracker t("softmax_spectral", 1.0 + 1e-8);
    std::mt19937_64 rng(c.opts.seed);
    std::uniform_int_distribution<int> dim(2, 10);
    for (int i = 0; i < 1000; ++i) {
        const Vector z = gaussian_vector(dim(rng), 3.0, rng);
        t.observe(spectral_norm(softmax_jacobian(softmax(z)), {1e-12, 20000, 1}), "logits " + std::to_string(i));
    }
    return t.finish();
}

SuiteResult suite_layer_spectral(const Context& c) {
    Tracker t("layer_spectral", 1e-8);
    std::mt19937_64 rng(c.opts.seed);
    for (std::size_t i = 0; i < c.opts.trials * 5; ++i) {
        for (Activation a : {Activation::relu, Activation::sigmoid, Activation::tanh}) {
            DenseLayer d;
            d.weight = gaussian_matrix(5, 4, 1.0, rng);
            d.bias = gaussian_vector(5, 1.0, rng);
            d.activation = a;
            const Vector x = gaussian_vector(4, 1.0, rng);
            const double jn = spectral_norm(layer_jacobian(Layer(d), x), {1e-12, 20000, 1});
            const double wn = spectral_norm(d.weight, {1e-12, 20000, 1});
            const double bound = a == Activation::sigmoid ? 0.25 * wn : wn;
            t.observe(jn - bound, to_string(a) + " " + tag(i));
        }
    }
    return t.finish();
}

SuiteResult suite_pooling_spectral(const Context& c) {
    Tracker t("pooling_spectral", 1e-8);
    std::mt19937_64 rng(c.opts.seed);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        const ImageShape shape{1, 4, 4};
        for (PoolKind k : {PoolKind::downsample, PoolKind::max, PoolKind::average}) {
            PoolingLayer p;
            p.kind = k;
            p.input_dim = shape.size();
            p.regions = square_pool_regions(shape, 2);
            const Vector x = gaussian_vector(static_cast<Eigen::Index>(shape.size()), 1.0, rng);
            const double n = spectral_norm(pooling_matrix(p, x), {1e-12, 20000, 1});
            // Equality for down-sampling and max pooling, <= 1 for averaging.
            const double v = k == PoolKind::average ? n - 1.0 : std::abs(n - 1.0);
            t.observe(v, to_string(k) + " " + tag(i));
        }
    }
    return t.finish();
}

SuiteResult suite_resnet(const Context& c) {
    Tracker t("resnet_expansion", 1e-10);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        ResNetSpec spec;
        spec.input_dim = 4;
        spec.blocks = 1 + i % 4;
        spec.inner_depth = 1 + i % 2;
        spec.num_classes = 3;
        const Network net = init_resnet(spec, c.opts.seed * 4000 + i);
        std::mt19937_64 rng(c.opts.seed + i);
        const Vector x = gaussian_vector(4, 1.0, rng);
        const Matrix a = resnet_jacobian_expansion(net, x);
        const Matrix b = c.jac(net, x);
        t.observe((a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff()), tag(i));
    }
    return t.finish();
}

SuiteResult suite_batch_norm(const Context& c) {
    Tracker t("batch_norm", 1e-10);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        MlpSpec spec{5, {8, 6}, Activation::relu, HeadKind::softmax, 3};
        Network net = init_mlp(spec, c.opts.seed * 5000 + i);
        std::mt19937_64 rng(c.opts.seed + i);
        for (auto p : net.parameters()) *p.bias = gaussian_vector(p.bias->size(), 0.3, rng);
        std::vector<Vector> batch;
        for (int k = 0; k < 32; ++k) batch.push_back(gaussian_vector(5, 1.0, rng));
        const auto expected = batch_normalized_forward(net, batch);
        const Network eq = batch_norm_equivalent(net, batch);
        double worst = 0.0;
        for (std::size_t k = 0; k < batch.size(); ++k)
            worst = std::max(worst, (evaluate(eq, batch[k]) - expected[k]).cwiseAbs().maxCoeff());
        t.observe(worst, tag(i));
    }
    return t.finish();
}

SuiteResult suite_weight_norm(const Context& c) {
    Tracker t("weight_norm", 1e-12);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        RandomNetSpec spec;
        const Network net = weight_normalize(random_network(spec, c.opts.seed * 6000 + i));
        const Network again = weight_normalize(net);
        double worst = 0.0;
        const auto a = weight_matrices(net);
        const auto b = weight_matrices(again);
        for (std::size_t k = 0; k < a.size(); ++k) {
            worst = std::max(worst, (*a[k] - *b[k]).cwiseAbs().maxCoeff());
            worst = std::max(worst, std::abs(frobenius_norm(*a[k]) - std::sqrt(static_cast<double>(a[k]->rows()))));
        }
        t.observe(worst, tag(i));
    }
    return t.finish();
}

Dataset two_blob_data(std::uint64_t seed, std::size_t m, std::size_t dim) {
    GmmSpec g;
    g.rank = 1;
    g.seed = seed;
    for (int s : {1, -1}) {
        GmmComponent comp;
        comp.mean = Vector::Zero(static_cast<Eigen::Index>(dim));
        comp.mean[0] = 2.0 * s;
        comp.factor = Matrix::Zero(static_cast<Eigen::Index>(dim), 1);
        comp.factor(1, 0) = 1.0;
        comp.label = s > 0 ? 0 : 1;
        g.components.push_back(comp);
    }
    return sample_gmm(g, m);
}

SuiteResult suite_margin_chain(const Context& c) {
    Tracker t("margin_chain", 1e-6);
    const std::size_t nets = std::max<std::size_t>(1, c.opts.trials / 4);
    for (std::size_t i = 0; i < nets; ++i) {
        const Dataset data = two_blob_data(c.opts.seed + i, 24, 3);
        MlpSpec spec{3, {8, 8}, Activation::relu, HeadKind::softmax, 2};
        TrainConfig cfg;
        cfg.epochs = 30;
        cfg.batch_size = 8;
        cfg.seed = c.opts.seed + i;
        cfg.schedule = {{0.05, 0}};
        cfg.track_jacobian = false;
        const Network net = train(init_mlp(spec, c.opts.seed + i), data, nullptr, cfg).net;
        NeighborhoodConfig nc;
        nc.k1 = 8;
        nc.convex_samples = 16;
        MarginSearchConfig sc;
        sc.directions = 16;
        sc.target_points = 8;
        const MarginAnalysis a = analyze_margins(net, data, nc, true, sc, c.opts.jobs);
        for (const auto& r : a.reports) {
            if (!r.applicable) continue;
            const std::string where = "net " + std::to_string(i) + " sample " + std::to_string(r.sample_id);
            t.observe(r.gamma3 - r.empirical_margin_ub, where + " empirical < gamma3");
            t.observe(r.gamma4 - r.gamma3, where + " gamma4 > gamma3");
            t.observe((r.gamma2_hat - r.gamma1_hat) / r.gamma1_hat, where + " gamma2 > gamma1");
            t.observe((r.gamma3 - r.gamma2_hat) / r.gamma2_hat, where + " gamma3 > gamma2");
        }
    }
    return t.finish();
}

SuiteResult suite_geodesic(const Context& c) {
    Tracker t("geodesic", 1e-8);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        RandomNetSpec spec;
        spec.input_dim = 2;
        spec.allow_pooling = false;
        const Network net = random_network(spec, c.opts.seed * 7000 + i);
        std::mt19937_64 rng(c.opts.seed + i);
        std::uniform_real_distribution<double> u(0.0, 2.0 * 3.141592653589793);
        const Vector center = gaussian_vector(2, 1.0, rng);
        const double r = 0.5 + u(rng) / 6.0;
        const double a0 = u(rng);
        CurveSpec curve;
        for (int k = 0; k < 512; ++k) {
            const double a = a0 + 3.141592653589793 * k / 511.0;
            curve.points.push_back(center + r * Vector((Vector(2) << std::cos(a), std::sin(a)).finished()));
        }
        const auto [lhs, rhs] = geodesic_expansion_check(net, curve);
        t.observe(lhs - rhs, tag(i));
    }
    return t.finish();
}

SuiteResult suite_gradients(const Context& c) {
    Tracker t("gradients", 1e-5);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        RandomNetSpec spec;
        const Network net = random_network(spec, c.opts.seed * 8000 + i);
        std::mt19937_64 rng(c.opts.seed + i);
        std::vector<Sample> batch;
        for (std::size_t k = 0; k < 4; ++k)
            batch.push_back({gaussian_vector(static_cast<Eigen::Index>(spec.input_dim), 1.0, rng), k % spec.num_classes});
        const LossSpec loss{net.head().kind == HeadKind::softmax ? LossKind::cross_entropy : LossKind::hinge, 1.0};
        const RowSelection rows = draw_rows(batch.size(), spec.num_classes, 2, rng);
        for (RegKind rk : {RegKind::none, RegKind::weight_decay, RegKind::jacobian, RegKind::jacobian_row}) {
            GradCheckOptions go;
            go.seed = c.opts.seed + i;
            const auto res = grad_check(net, batch, loss, RegSpec{rk, 0.3, 2}, &rows, go);
            t.observe(res.max_rel_error, to_string(rk) + " " + tag(i));
        }
    }
    return t.finish();
}

SuiteResult suite_sampled_row(const Context& c) {
    Tracker t("sampled_row", 1e-10);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        RandomNetSpec spec;
        const Network net = random_network(spec, c.opts.seed * 9000 + i);
        std::mt19937_64 rng(c.opts.seed + i);
        std::vector<Sample> batch;
        for (std::size_t k = 0; k < 4; ++k)
            batch.push_back({gaussian_vector(static_cast<Eigen::Index>(spec.input_dim), 1.0, rng), 0});
        const double full = jacobian_penalty(net, batch);
        double sum = 0.0;
        for (std::size_t r = 0; r < spec.num_classes; ++r)
            sum += sampled_row_penalty(net, batch, RowSelection(batch.size(), std::vector<std::size_t>{r}));
        t.observe(std::abs(sum - full) / std::max(full, 1e-300), tag(i));
    }
    return t.finish();
}

SuiteResult suite_ge_consistency(const Context& c) {
    Tracker t("ge_consistency", 1e-12);
    std::mt19937_64 rng(c.opts.seed);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    for (std::size_t i = 0; i < c.opts.trials; ++i) {
        GeBoundInputs in;
        in.m = 100 + 97 * i;
        in.num_classes = 2 + i % 5;
        in.covering = CoveringModel::manifold(u(rng), 1 + i % 3);
        in.gamma = u(rng) * in.covering.c_m / 2.0;
        const double manifold = ge_bound_manifold(in, true);
        const double k = static_cast<double>(in.num_classes) *
                         std::pow(in.covering.c_m / (in.gamma / 2.0), static_cast<double>(in.covering.k));
        const double general = ge_bound_general(k, 0.0, 1.0, in.m, 1.0);
        t.observe(std::abs(manifold - general) / general, tag(i));
    }
    return t.finish();
}

using SuiteFn = std::function<SuiteResult(const Context&)>;

struct SuiteEntry {
    std::string name;
    SuiteFn fn;
    std::string alias{};  // extra filter token accepted by --filter
};

const std::vector<SuiteEntry>& registry() {
    static const std::vector<SuiteEntry> r = {
        {"jacobian_fd", suite_jacobian_fd},
        {"average_jacobian", suite_average_jacobian, "theorem3"},
        {"linear_expansion", suite_linear_expansion},
        {"softmax_spectral", suite_softmax_spectral},
        {"layer_spectral", suite_layer_spectral},
        {"pooling_spectral", suite_pooling_spectral},
        {"resnet_expansion", suite_resnet},
        {"batch_norm", suite_batch_norm},
        {"weight_norm", suite_weight_norm},
        {"margin_chain", suite_margin_chain},
        {"geodesic", suite_geodesic},
        {"gradients", suite_gradients},
        {"sampled_row", suite_sampled_row},
        {"ge_consistency", suite_ge_consistency},
    };
    return r;
}

}  // namespace

std::vector<std::string> verify_suite_names() {
    std::vector<std::string> names;
    for (const auto& e : registry()) names.push_back(e.name);
    return names;
}

std::vector<SuiteResult> run_verify(const VerifyOptions& options) {
    if (!options.fault.empty() && options.fault != "jacobian")
        throw InvalidInput("unknown fault '" + options.fault + "' (expected: jacobian)");
    if (options.trials < 1) throw InvalidInput("verify: trials must be at least 1");
    Context ctx{options, options.fault == "jacobian"};
    std::vector<SuiteResult> out;
    for (const auto& e : registry()) {
        const bool match = options.filter.empty() || e.name.find(options.filter) != std::string::npos ||
                           (!e.alias.empty() && e.alias.find(options.filter) != std::string::npos);
        if (!match) continue;
        out.push_back(e.fn(ctx));
    }
    if (out.empty()) throw InvalidInput("verify: filter '" + options.filter + "' matches no suite");
    return out;
}

}  // namespace marginlab
