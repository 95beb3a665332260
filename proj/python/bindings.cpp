#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "marginlab/bounds.hpp"
#include "marginlab/data.hpp"
#include "marginlab/init.hpp"
#include "marginlab/margin.hpp"
#include "marginlab/serialize.hpp"
#include "marginlab/training.hpp"
#include "marginlab/verify.hpp"

namespace py = pybind11;
using namespace marginlab;

namespace {

Dataset to_dataset(const Matrix& x, const std::vector<std::size_t>& y, std::size_t num_classes) {
    if (static_cast<std::size_t>(x.rows()) != y.size()) throw InvalidInput("X has " + std::to_string(x.rows()) +
                                                                          " rows but y has " + std::to_string(y.size()));
    Dataset d;
    d.input_dim = static_cast<std::size_t>(x.cols());
    d.num_classes = num_classes;
    for (std::size_t i = 0; i < y.size(); ++i) d.samples.push_back({x.row(static_cast<Eigen::Index>(i)).transpose(), y[i]});
    d.validate();
    return d;
}

py::dict report_dict(const MarginReport& r) {
    py::dict d;
    d["sample_id"] = r.sample_id;
    d["label"] = r.label;
    d["score"] = r.score;
    d["applicable"] = r.applicable;
    d["gamma1_hat"] = r.gamma1_hat;
    d["gamma2_hat"] = r.gamma2_hat;
    d["gamma3"] = r.gamma3;
    d["gamma4"] = r.gamma4;
    d["empirical_margin_ub"] = r.empirical_margin_ub;
    d["jac_spec"] = r.jac_spec;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Jacobians, margin bounds and generalization bounds for small deep networks";
    m.attr("__version__") = MARGINLAB_VERSION;

    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);

    m.def("spectral_norm", [](const Matrix& a) { return spectral_norm(a); }, py::arg("matrix"));
    m.def("frobenius_norm", &frobenius_norm, py::arg("matrix"));

    py::class_<Network>(m, "Network")
        .def_property_readonly("input_dim", &Network::input_dim)
        .def_property_readonly("num_classes", &Network::num_classes)
        .def_property_readonly("parameter_count", &Network::parameter_count)
        .def("evaluate", [](const Network& n, const Vector& x) { return evaluate(n, x); }, py::arg("x"))
        .def("classify", [](const Network& n, const Vector& x) { return classify(n, x); }, py::arg("x"))
        .def("jacobian", [](const Network& n, const Vector& x) { return network_jacobian(n, x); }, py::arg("x"))
        .def("average_jacobian", &average_jacobian, py::arg("x"), py::arg("x2"), py::arg("steps") = 64)
        .def("weight_matrices",
             [](const Network& n) {
                 std::vector<Matrix> out;
                 for (const Matrix* w : weight_matrices(n)) out.push_back(*w);
                 return out;
             })
        .def("weight_normalized", &weight_normalize)
        .def("to_json", [](const Network& n) { return network_to_json(n).dump(); })
        .def_static("from_json", [](const std::string& s) { return network_from_json(nlohmann::json::parse(s)); })
        .def("save", [](const Network& n, const std::filesystem::path& p) { save_network(n, p); }, py::arg("path"))
        .def_static("load", [](const std::filesystem::path& p) { return load_network(p); }, py::arg("path"));

    m.def(
        "mlp",
        [](std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes, const std::string& activation,
           const std::string& head, std::uint64_t seed) {
            return init_mlp({input_dim, std::move(hidden), parse_activation(activation), parse_head_kind(head), num_classes},
                            seed);
        },
        py::arg("input_dim"), py::arg("hidden"), py::arg("num_classes"), py::arg("activation") = "relu",
        py::arg("head") = "softmax", py::arg("seed") = 0);

    m.def(
        "score", [](const Network& n, const Vector& x, std::size_t y) { return score(n, {x, y}); }, py::arg("net"),
        py::arg("x"), py::arg("label"));
    m.def(
        "margin_bounds", [](const Network& n, const Vector& x, std::size_t y) { return report_dict(margin_bounds(n, {x, y})); },
        py::arg("net"), py::arg("x"), py::arg("label"));
    m.def(
        "empirical_margin",
        [](const Network& n, const Vector& x, std::size_t y, std::size_t directions) {
            MarginSearchConfig c;
            c.directions = directions;
            return empirical_margin(n, {x, y}, c);
        },
        py::arg("net"), py::arg("x"), py::arg("label"), py::arg("directions") = 64);
    m.def(
        "analyze_margins",
        [](const Network& n, const Matrix& x, const std::vector<std::size_t>& y, bool empirical) {
            const MarginAnalysis a = analyze_margins(n, to_dataset(x, y, n.num_classes()), {}, empirical);
            py::list reports;
            for (const auto& r : a.reports) reports.append(report_dict(r));
            py::dict out;
            out["reports"] = reports;
            out["min_score"] = a.min_score;
            out["max_jac_spec"] = a.max_jac_spec;
            out["spectral_product"] = a.products.spectral;
            out["frobenius_product"] = a.products.frobenius;
            return out;
        },
        py::arg("net"), py::arg("X"), py::arg("y"), py::arg("empirical") = false);

    m.def(
        "train",
        [](const Network& n, const Matrix& x, const std::vector<std::size_t>& y, std::size_t epochs, double lr,
           const std::string& reg, double lam, std::size_t batch_size, double momentum, bool weight_norm,
           std::uint64_t seed) {
            TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.schedule = {{lr, 0}};
            cfg.reg = {parse_reg_kind(reg), lam};
            cfg.batch_size = batch_size;
            cfg.momentum = momentum;
            cfg.weight_norm = weight_norm;
            cfg.seed = seed;
            cfg.loss.kind = n.head().kind == HeadKind::softmax ? LossKind::cross_entropy : LossKind::hinge;
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(n, to_dataset(x, y, n.num_classes()), nullptr, cfg);
            }
            py::list hist;
            for (const auto& e : r.history) {
                py::dict d;
                d["epoch"] = e.epoch;
                d["lr"] = e.lr;
                d["train_loss"] = e.train_loss;
                d["train_acc"] = e.train_acc;
                d["mean_jac_frob"] = e.mean_jac_frob;
                d["max_jac_spec"] = e.max_jac_spec;
                hist.append(d);
            }
            return py::make_tuple(r.net, hist);
        },
        py::arg("net"), py::arg("X"), py::arg("y"), py::arg("epochs") = 10, py::arg("lr") = 0.01,
        py::arg("reg") = "none", py::arg("lam") = 0.0, py::arg("batch_size") = 32, py::arg("momentum") = 0.9,
        py::arg("weight_norm") = false, py::arg("seed") = 0);

    m.def(
        "sample_gmm",
        [](const std::vector<Vector>& means, const std::vector<Matrix>& factors, std::size_t m, std::uint64_t seed) {
            if (means.size() != factors.size()) throw InvalidInput("means and factors differ in length");
            GmmSpec g;
            g.seed = seed;
            for (std::size_t c = 0; c < means.size(); ++c) {
                g.components.push_back({means[c], factors[c], c});
                g.rank = std::max<std::size_t>(g.rank, static_cast<std::size_t>(factors[c].cols()));
            }
            const Dataset d = sample_gmm(g, m);
            Matrix x(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.input_dim));
            std::vector<std::size_t> y;
            for (std::size_t i = 0; i < d.size(); ++i) {
                x.row(static_cast<Eigen::Index>(i)) = d.samples[i].x.transpose();
                y.push_back(d.samples[i].label);
            }
            return py::make_tuple(x, y);
        },
        py::arg("means"), py::arg("factors"), py::arg("m"), py::arg("seed") = 0);

    m.def(
        "covering_number",
        [](const std::string& kind, std::size_t k, double rho, std::size_t atoms, double c_m) {
            CoveringModel c;
            c.kind = parse_covering_kind(kind);
            c.k = k;
            c.atoms = atoms;
            c.c_m = c_m;
            c.validate();
            return covering_number(c, rho);
        },
        py::arg("kind"), py::arg("k"), py::arg("rho"), py::arg("atoms") = 1, py::arg("c_m") = 1.0);
    m.def("ge_bound_general", &ge_bound_general, py::arg("k"), py::arg("eps"), py::arg("loss_bound"), py::arg("m"),
          py::arg("delta"));
    m.def(
        "ge_bound_manifold",
        [](std::size_t m, std::size_t num_classes, double gamma, double c_m, std::size_t k, double delta, bool neglect) {
            GeBoundInputs in;
            in.m = m;
            in.num_classes = num_classes;
            in.gamma = gamma;
            in.delta = delta;
            in.covering = CoveringModel::manifold(c_m, k);
            return ge_bound_manifold(in, neglect);
        },
        py::arg("m"), py::arg("num_classes"), py::arg("gamma"), py::arg("c_m"), py::arg("k"), py::arg("delta"),
        py::arg("neglect_delta") = false);

    m.def(
        "verify",
        [](const std::string& filter, std::size_t trials, std::uint64_t seed) {
            VerifyOptions o;
            o.filter = filter;
            o.trials = trials;
            o.seed = seed;
            std::vector<SuiteResult> res;
            {
                py::gil_scoped_release release;
                res = run_verify(o);
            }
            py::list out;
            for (const auto& r : res) {
                py::dict d;
                d["name"] = r.name;
                d["passed"] = r.passed;
                d["worst"] = r.worst;
                d["threshold"] = r.threshold;
                out.append(d);
            }
            return out;
        },
        py::arg("filter") = "", py::arg("trials") = 20, py::arg("seed") = 1);
}
