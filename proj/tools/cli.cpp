#include "cli.hpp"

#include "marginlab/bounds.hpp"
#include "marginlab/data.hpp"
#include "marginlab/init.hpp"
#include "marginlab/margin.hpp"
#include "marginlab/parallel.hpp"
#include "marginlab/serialize.hpp"
#include "marginlab/training.hpp"
#include "marginlab/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>

#ifndef MARGINLAB_VERSION
#define MARGINLAB_VERSION "unknown"
#endif

namespace marginlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Raised for argument combinations CLI11 cannot check on its own.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::uint64_t seed = 1;
    std::string out = "marginlab_out";
    std::size_t jobs = 0;
};

struct DatagenOpts {
    std::string kind = "gmm";
    std::string name = "data";
    std::size_t m = 500;
    std::size_t test_m = 0;
    std::size_t dim = 2;
    std::size_t classes = 2;
    double separation = 4.0;
    std::size_t rank = 1;
    double noise = 1.0;
    std::string chart = "circle";
    double c_m = 1.0;
    double radius_step = 1.0;
    std::size_t patch_dim = 2;
    bool stratified = false;
};

struct TrainOpts {
    std::string data;
    std::string test;
    std::string resume;
    std::vector<std::size_t> hidden{64};
    std::string activation = "relu";
    std::string head = "softmax";
    std::string loss;
    double init_gain = 1.0;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double lr = 0.01;
    std::size_t lr_step = 0;
    double lr_factor = 10.0;
    double momentum = 0.9;
    std::string reg = "none";
    double lambda = 0.0;
    std::size_t rows_per_sample = 1;
    bool weight_norm = false;
    double clip_norm = 0.0;
    bool no_jacobian_tracking = false;
};

struct MarginOpts {
    std::string model;
    std::string data;
    std::string test;
    std::size_t k1 = 32;
    std::size_t convex = 64;
    std::size_t directions = 64;
    std::size_t targets = 32;
    bool literal_sqrt2 = false;
    bool no_empirical = false;
    bool batch_norm = false;
};

struct BoundOpts {
    std::string model;
    std::string data;
    double delta = 0.1;
    bool include_delta = false;
    std::string covering_kind;
    std::size_t k = 0;
    double c_m = 0.0;
    std::size_t atoms = 0;
    std::size_t m = 0;
    std::size_t k1 = 32;
    std::size_t convex = 64;
    bool batch_norm = false;
};

struct VerifyOpts {
    std::string filter;
    std::string fault;
    std::size_t trials = 20;
};

fs::path sidecar_path(const fs::path& data) {
    fs::path p = data;
    return p.replace_extension(".json");
}

Dataset load_data(const std::string& path, json& fingerprints) {
    if (path.empty()) throw ConfigError("a dataset path is required");
    Dataset d = load_dataset(path);
    const fs::path side = sidecar_path(path);
    if (fs::exists(side)) load_dataset_sidecar(d, side);
    fingerprints[path] = file_fingerprint(path);
    return d;
}

Network load_model(const std::string& path) {
    if (path.empty()) throw ConfigError("--model is required");
    if (!fs::exists(path)) throw ConfigError("model file '" + path + "' does not exist");
    return load_network(path);
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

void write_manifest(const Common& c, const std::string& sub, const CLI::App& app, const std::vector<std::string>& args,
                    const json& fingerprints, const json& outputs) {
    json m = {{"tool", "marginlab"},
              {"version", MARGINLAB_VERSION},
              {"subcommand", sub},
              {"seed", c.seed},
              {"jobs", effective_jobs(c.jobs)},
              {"command_line", args},
              {"config", app.config_to_str(true, false)},
              {"dataset_fingerprints", fingerprints},
              {"outputs", outputs}};
    write_json(fs::path(c.out) / (sub + "_manifest.json"), m);
}

Matrix orthonormal_columns(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const Matrix g = gaussian_matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols), 1.0, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    return qr.householderQ() * Matrix::Identity(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Dataset generate(const DatagenOpts& o, std::uint64_t seed, std::size_t m) {
    if (o.classes < 2) throw ConfigError("datagen: --classes must be at least 2");
    if (o.kind == "gmm") {
        if (o.dim < 1) throw ConfigError("datagen: --dim must be at least 1");
        if (o.classes > 2 && o.dim < o.classes) throw ConfigError("datagen: --dim must be >= --classes for gmm");
        if (o.rank < 1 || o.rank > o.dim) throw ConfigError("datagen: --rank must lie in [1, dim]");
        std::mt19937_64 rng(seed ^ 0x9d3a);
        GmmSpec g;
        g.rank = o.rank;
        g.seed = seed;
        g.num_classes = o.classes;
        for (std::size_t c = 0; c < o.classes; ++c) {
            GmmComponent comp;
            comp.mean = Vector::Zero(static_cast<Eigen::Index>(o.dim));
            if (o.classes == 2)
                comp.mean[0] = (c == 0 ? 0.5 : -0.5) * o.separation;
            else
                comp.mean[static_cast<Eigen::Index>(c)] = o.separation;
            comp.factor = o.noise * orthonormal_columns(o.dim, o.rank, rng);
            comp.label = c;
            g.components.push_back(std::move(comp));
        }
        return sample_gmm(g, m);
    }
    if (o.kind == "manifold") {
        ManifoldSpec s;
        s.c_m = o.c_m;
        s.seed = seed;
        s.stratified = o.stratified;
        s.num_classes = o.classes;
        const ChartKind chart = parse_chart_kind(o.chart);
        for (std::size_t c = 0; c < o.classes; ++c) {
            ManifoldComponent comp;
            comp.chart = chart;
            comp.label = c;
            const double r = o.radius_step * static_cast<double>(c + 1);
            if (chart == ChartKind::circle) comp.radii = {r};
            if (chart == ChartKind::torus) comp.radii = {r, 0.5 * r};
            if (chart == ChartKind::affine_bump) {
                comp.radii = {1.0};
                comp.patch_dim = o.patch_dim;
                comp.bump_height = 0.25;
                comp.center = Vector::Zero(static_cast<Eigen::Index>(o.patch_dim + 1));
                comp.center[static_cast<Eigen::Index>(o.patch_dim)] = o.radius_step * static_cast<double>(c);
            }
            s.components.push_back(std::move(comp));
        }
        const std::size_t chart_dim = s.chart_dim();
        if (o.dim > chart_dim) {
            std::mt19937_64 rng(seed ^ 0xe4b);
            s.embedding = orthonormal_columns(o.dim, chart_dim, rng);
        } else if (o.dim != chart_dim && o.dim != 0) {
            throw ConfigError("datagen: --dim must be 0 or >= the chart dimension " + std::to_string(chart_dim));
        }
        return sample_manifold(s, m);
    }
    throw ConfigError("datagen: --kind must be gmm or manifold, got '" + o.kind + "'");
}

int cmd_datagen(const Common& c, const DatagenOpts& o, const CLI::App& app, const std::vector<std::string>& args,
                std::ostream& out) {
    if (o.m < 1) throw ConfigError("datagen: --m must be at least 1");
    fs::create_directories(c.out);
    json fingerprints = json::object(), outputs = json::array();
    auto emit = [&](const Dataset& d, const std::string& stem) {
        const fs::path p = fs::path(c.out) / (stem + ".mlds");
        save_dataset(d, p);
        save_dataset_sidecar(d, sidecar_path(p));
        fingerprints[p.string()] = dataset_fingerprint(d);
        outputs.push_back(p.string());
        outputs.push_back(sidecar_path(p).string());
        out << "wrote " << p.string() << " (m=" << d.size() << ", dim=" << d.input_dim
            << ", fingerprint=" << dataset_fingerprint(d) << ")\n";
    };
    emit(generate(o, c.seed, o.m), o.name);
    if (o.test_m > 0) emit(generate(o, c.seed ^ 0x7e57ULL, o.test_m), o.name + "_test");
    write_manifest(c, "datagen", app, args, fingerprints, outputs);
    return kExitOk;
}

int cmd_train(const Common& c, const TrainOpts& o, const CLI::App& app, const std::vector<std::string>& args,
              std::ostream& out) {
    json fingerprints = json::object();
    const Dataset train_set = load_data(o.data, fingerprints);
    Dataset test_set;
    if (!o.test.empty()) test_set = load_data(o.test, fingerprints);

    Network net;
    if (!o.resume.empty()) {
        net = load_model(o.resume);
    } else {
        MlpSpec spec;
        spec.input_dim = train_set.input_dim;
        spec.hidden = o.hidden;
        spec.activation = parse_activation(o.activation);
        spec.head = parse_head_kind(o.head);
        spec.num_classes = train_set.num_classes;
        net = init_mlp(spec, c.seed, o.init_gain);
    }

    TrainConfig cfg;
    cfg.batch_size = o.batch_size;
    cfg.epochs = o.epochs;
    cfg.seed = c.seed;
    cfg.loss.kind = o.loss.empty()
                        ? (net.head().kind == HeadKind::softmax ? LossKind::cross_entropy : LossKind::hinge)
                        : parse_loss_kind(o.loss);
    cfg.reg = {parse_reg_kind(o.reg), o.lambda, o.rows_per_sample};
    cfg.schedule = o.lr_step > 0 ? step_schedule(o.lr, o.lr_factor, o.lr_step, o.epochs) : Schedule{{o.lr, 0}};
    cfg.momentum = o.momentum;
    cfg.weight_norm = o.weight_norm;
    cfg.clip_norm = o.clip_norm;
    cfg.jobs = c.jobs;
    cfg.track_jacobian = !o.no_jacobian_tracking;

    const TrainResult res = train(net, train_set, test_set.empty() ? nullptr : &test_set, cfg);
    fs::create_directories(c.out);
    const fs::path model = fs::path(c.out) / "model.json";
    const fs::path hist = fs::path(c.out) / "history.csv";
    save_network(res.net, model);
    write_history_csv(res.history, hist);
    const auto& last = res.history.back();
    out << "epochs=" << res.history.size() << " train_loss=" << last.train_loss << " train_acc=" << last.train_acc;
    if (!test_set.empty()) out << " test_acc=" << last.test_acc;
    out << "\nwrote " << model.string() << " and " << hist.string() << "\n";
    write_manifest(c, "train", app, args, fingerprints, json::array({model.string(), hist.string()}));
    return kExitOk;
}

json analysis_summary(const MarginAnalysis& a) {
    return {{"min_score", a.min_score},
            {"max_jac_spec", a.max_jac_spec},
            {"spectral_product", a.products.spectral},
            {"frobenius_product", a.products.frobenius},
            {"global_sup", a.global_sup},
            {"global_samples", a.global_samples}};
}

std::vector<Vector> inputs_of(const Dataset& d) {
    std::vector<Vector> xs;
    for (const auto& s : d.samples) xs.push_back(s.x);
    return xs;
}

int cmd_margins(const Common& c, const MarginOpts& o, const CLI::App& app, const std::vector<std::string>& args,
                std::ostream& out) {
    Network net = load_model(o.model);
    json fingerprints = json::object();
    const Dataset train_set = load_data(o.data, fingerprints);
    if (o.batch_norm) net = batch_norm_equivalent(net, inputs_of(train_set));
    NeighborhoodConfig nc;
    nc.k1 = o.k1;
    nc.convex_samples = o.convex;
    nc.seed = c.seed;
    nc.literal_sqrt2 = o.literal_sqrt2;
    MarginSearchConfig sc;
    sc.directions = o.directions;
    sc.target_points = o.targets;
    sc.seed = c.seed;

    fs::create_directories(c.out);
    json summary = json::object();
    json outputs = json::array();
    auto run_one = [&](const Dataset& d, const std::string& tag) {
        const MarginAnalysis a = analyze_margins(net, d, nc, !o.no_empirical, sc, c.jobs);
        const fs::path csv = fs::path(c.out) / ("margins_" + tag + ".csv");
        write_margin_csv(a.reports, csv);
        outputs.push_back(csv.string());
        summary[tag] = analysis_summary(a);
        out << tag << ": min_score=" << a.min_score << " max_jac_spec=" << a.max_jac_spec
            << " prod_spectral=" << a.products.spectral << " prod_frobenius=" << a.products.frobenius << "\n";
    };
    run_one(train_set, "train");
    if (!o.test.empty()) run_one(load_data(o.test, fingerprints), "test");
    const fs::path sp = fs::path(c.out) / "margins_summary.json";
    write_json(sp, summary);
    outputs.push_back(sp.string());
    write_manifest(c, "margins", app, args, fingerprints, outputs);
    return kExitOk;
}

int cmd_bounds(const Common& c, const BoundOpts& o, const CLI::App& app, const std::vector<std::string>& args,
               std::ostream& out) {
    Network net = load_model(o.model);
    json fingerprints = json::object();
    const Dataset data = load_data(o.data, fingerprints);
    if (o.batch_norm) net = batch_norm_equivalent(net, inputs_of(data));

    CoveringModel cov = data.covering.value_or(CoveringModel::manifold(1.0, 1));
    if (!data.covering && o.covering_kind.empty() && o.k == 0)
        throw ConfigError("bounds: dataset has no covering model; pass --covering-kind and --k");
    if (!o.covering_kind.empty()) cov.kind = parse_covering_kind(o.covering_kind);
    if (o.k > 0) cov.k = o.k;
    if (o.c_m > 0.0) cov.c_m = o.c_m;
    if (o.atoms > 0) cov.atoms = o.atoms;
    cov.validate();

    NeighborhoodConfig nc;
    nc.k1 = o.k1;
    nc.convex_samples = o.convex;
    nc.seed = c.seed;
    const MarginAnalysis a = analyze_margins(net, data, nc, false, {}, c.jobs);
    const std::size_t m = o.m > 0 ? o.m : data.size();
    const BoundTable t = bound_table(net, a, cov, m, net.num_classes(), o.delta, !o.include_delta);

    fs::create_directories(c.out);
    const fs::path csv = fs::path(c.out) / "bounds.csv";
    const fs::path js = fs::path(c.out) / "bounds.json";
    write_bound_csv(t, csv);
    write_json(js, bound_table_json(t));
    out << "covering " << to_string(cov.kind) << " k=" << cov.k << " C_M=" << cov.c_m << " m=" << m << "\n";
    for (const auto& r : t.rows) {
        out << "variant " << r.variant << ": ";
        if (!r.applicable) {
            out << "inapplicable (" << r.offending.size() << " samples with score <= 0)\n";
            continue;
        }
        out << std::setprecision(6) << r.value << (r.vacuous ? " (vacuous)" : "") << " attained at sample "
            << r.attaining_sample << "\n";
    }
    out << "rademacher reference: " << t.rademacher << (t.rademacher > 1.0 ? " (vacuous)" : "") << "\n";
    write_manifest(c, "bounds", app, args, fingerprints, json::array({csv.string(), js.string()}));
    return kExitOk;
}

int cmd_verify(const Common& c, const VerifyOpts& o, const CLI::App& app, const std::vector<std::string>& args,
               std::ostream& out) {
    VerifyOptions vo;
    vo.seed = c.seed;
    vo.filter = o.filter;
    vo.fault = o.fault;
    vo.trials = o.trials;
    vo.jobs = c.jobs;
    const auto results = run_verify(vo);
    bool ok = true;
    json rows = json::array();
    for (const auto& r : results) {
        ok = ok && r.passed;
        out << (r.passed ? "PASS " : "FAIL ") << r.name << " worst=" << r.worst << " threshold=" << r.threshold
            << " cases=" << r.cases << (r.passed ? "" : " at " + r.detail) << "\n";
        rows.push_back({{"suite", r.name},
                        {"passed", r.passed},
                        {"worst", r.worst},
                        {"threshold", r.threshold},
                        {"cases", r.cases},
                        {"detail", r.detail}});
    }
    fs::create_directories(c.out);
    const fs::path rp = fs::path(c.out) / "verify.json";
    write_json(rp, rows);
    write_manifest(c, "verify", app, args, json::object(), json::array({rp.string()}));
    return ok ? kExitOk : kExitVerifyFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"marginlab: Jacobians, margin bounds and generalization bounds for small deep networks"};
    app.set_config("--config", "", "INI/TOML file; [section] names match subcommands, flags win");
    app.require_subcommand(1);
    app.set_version_flag("--version", MARGINLAB_VERSION);

    Common common;
    app.add_option("--seed", common.seed, "Run seed")->capture_default_str();
    app.add_option("--out", common.out, "Output directory")->capture_default_str();
    app.add_option("--jobs", common.jobs, "Worker threads (0: MARGINLAB_THREADS or 1)")->capture_default_str();

    DatagenOpts dg;
    auto* datagen = app.add_subcommand("datagen", "Generate a synthetic dataset and its covering-model sidecar");
    datagen->add_option("--kind", dg.kind, "gmm | manifold")->capture_default_str();
    datagen->add_option("--name", dg.name, "Output file stem")->capture_default_str();
    datagen->add_option("--m", dg.m, "Training samples")->capture_default_str();
    datagen->add_option("--test-m", dg.test_m, "Test samples (0: none)")->capture_default_str();
    datagen->add_option("--dim", dg.dim, "Ambient dimension")->capture_default_str();
    datagen->add_option("--classes", dg.classes, "Number of classes")->capture_default_str();
    datagen->add_option("--separation", dg.separation, "gmm: distance between class means")->capture_default_str();
    datagen->add_option("--rank", dg.rank, "gmm: covariance rank k")->capture_default_str();
    datagen->add_option("--noise", dg.noise, "gmm: scale of the covariance factor")->capture_default_str();
    datagen->add_option("--chart", dg.chart, "manifold: circle | torus | affine_bump")->capture_default_str();
    datagen->add_option("--c-m", dg.c_m, "manifold: declared C_M")->capture_default_str();
    datagen->add_option("--radius-step", dg.radius_step, "manifold: radius / offset increment per class")
        ->capture_default_str();
    datagen->add_option("--patch-dim", dg.patch_dim, "manifold: affine_bump intrinsic dimension")->capture_default_str();
    datagen->add_flag("--stratified", dg.stratified, "manifold: evenly spaced first chart parameter");

    TrainOpts tr;
    auto* train_cmd = app.add_subcommand("train", "Train an MLP with SGD and momentum");
    train_cmd->add_option("--data", tr.data, "Training dataset (.mlds)");
    train_cmd->add_option("--test", tr.test, "Test dataset (.mlds)");
    train_cmd->add_option("--resume", tr.resume, "Start from this model file");
    train_cmd->add_option("--hidden", tr.hidden, "Hidden widths, comma separated")->delimiter(',')->capture_default_str();
    train_cmd->add_option("--activation", tr.activation, "relu | sigmoid | tanh")->capture_default_str();
    train_cmd->add_option("--head", tr.head, "softmax | linear")->capture_default_str();
    train_cmd->add_option("--loss", tr.loss, "cross_entropy | hinge (default follows the head)");
    train_cmd->add_option("--init-gain", tr.init_gain, "Initialization variance gain")->capture_default_str();
    train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
    train_cmd->add_option("--batch-size", tr.batch_size)->capture_default_str();
    train_cmd->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str();
    train_cmd->add_option("--lr-step", tr.lr_step, "Divide the rate by --lr-factor every N epochs (0: constant)")
        ->capture_default_str();
    train_cmd->add_option("--lr-factor", tr.lr_factor)->capture_default_str();
    train_cmd->add_option("--momentum", tr.momentum)->capture_default_str();
    train_cmd->add_option("--reg", tr.reg, "none | wd | jac | jac-row")->capture_default_str();
    train_cmd->add_option("--lambda", tr.lambda, "Regularization factor")->capture_default_str();
    train_cmd->add_option("--rows-per-sample", tr.rows_per_sample, "jac-row: rows drawn per sample")
        ->capture_default_str();
    train_cmd->add_flag("--weight-norm", tr.weight_norm, "Project weights onto unit-norm rows after every step");
    train_cmd->add_option("--clip-norm", tr.clip_norm, "Global gradient-norm clip (0: off)")->capture_default_str();
    train_cmd->add_flag("--no-jacobian-tracking", tr.no_jacobian_tracking, "Skip per-epoch Jacobian statistics");

    MarginOpts mg;
    auto* margins = app.add_subcommand("margins", "Per-sample scores, margin bounds and empirical margins");
    margins->add_option("--model", mg.model, "Model file");
    margins->add_option("--data", mg.data, "Training dataset (.mlds)");
    margins->add_option("--test", mg.test, "Test dataset (.mlds)");
    margins->add_option("--k1", mg.k1, "Ball samples per fixed-point iteration")->capture_default_str();
    margins->add_option("--convex", mg.convex, "Random convex combinations in the global set")->capture_default_str();
    margins->add_option("--directions", mg.directions, "Random search directions")->capture_default_str();
    margins->add_option("--targets", mg.targets, "Nearest differently labeled points used as directions")
        ->capture_default_str();
    margins->add_flag("--literal-sqrt2", mg.literal_sqrt2, "Score with the sqrt(2)(e_y - e_j) direction");
    margins->add_flag("--no-empirical", mg.no_empirical, "Skip the directional margin search");
    margins->add_flag("--batch-norm", mg.batch_norm, "Analyze the batch-normalized equivalent on --data");

    BoundOpts bd;
    auto* bounds = app.add_subcommand("bounds", "Expanded generalization bounds (variants 1-4) and the reference bound");
    bounds->add_option("--model", bd.model, "Model file");
    bounds->add_option("--data", bd.data, "Training dataset (.mlds)");
    bounds->add_option("--delta", bd.delta)->capture_default_str();
    bounds->add_flag("--include-delta", bd.include_delta, "Add the sqrt(2 log(1/delta)/m) term");
    bounds->add_option("--covering-kind", bd.covering_kind, "gmm | k_sparse | manifold (default: dataset sidecar)");
    bounds->add_option("--k", bd.k, "Intrinsic dimension override");
    bounds->add_option("--c-m", bd.c_m, "C_M override");
    bounds->add_option("--atoms", bd.atoms, "L override");
    bounds->add_option("--m", bd.m, "Sample count override (default: dataset size)");
    bounds->add_option("--k1", bd.k1)->capture_default_str();
    bounds->add_option("--convex", bd.convex)->capture_default_str();
    bounds->add_flag("--batch-norm", bd.batch_norm, "Analyze the batch-normalized equivalent on --data");

    VerifyOpts vf;
    auto* verify = app.add_subcommand("verify", "Run the property suites on seeded random networks");
    verify->add_option("--filter", vf.filter, "Run suites whose name contains this string");
    verify->add_option("--inject-fault", vf.fault, "jacobian: corrupt the Jacobian seen by the suites");
    verify->add_option("--trials", vf.trials, "Random networks per suite")->capture_default_str();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*datagen) return cmd_datagen(common, dg, *datagen, args, out);
        if (*train_cmd) return cmd_train(common, tr, *train_cmd, args, out);
        if (*margins) return cmd_margins(common, mg, *margins, args, out);
        if (*bounds) return cmd_bounds(common, bd, *bounds, args, out);
        if (*verify) return cmd_verify(common, vf, *verify, args, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const InvalidInput& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitConfig;
}

}  // namespace marginlab::cli
