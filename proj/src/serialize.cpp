#include "marginlab/serialize.hpp"

#include <fstream>

namespace marginlab {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "marginlab.network";

json vector_to_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

Vector vector_from_json(const json& j, Eigen::Index n, const std::string& what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
        throw InvalidInput(what + ": expected an array of " + std::to_string(n) + " numbers");
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

json dense_to_json(const Matrix& w, const Vector& b) {
    return {{"rows", w.rows()}, {"cols", w.cols()}, {"weight", matrix_to_json(w)}, {"bias", vector_to_json(b)}};
}

void dense_from_json(const json& j, Matrix& w, Vector& b, const std::string& what) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    w = matrix_from_json(j.at("weight"), rows, cols, what + " weight");
    b = vector_from_json(j.at("bias"), rows, what + " bias");
}

json layer_to_json(const Layer& layer) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        json j = dense_to_json(d->weight, d->bias);
        j["type"] = "dense";
        j["activation"] = to_string(d->activation);
        return j;
    }
    if (const auto* h = std::get_if<HeadLayer>(&layer)) {
        json j = dense_to_json(h->weight, h->bias);
        j["type"] = "head";
        j["head"] = to_string(h->kind);
        return j;
    }
    if (const auto* p = std::get_if<PoolingLayer>(&layer))
        return {{"type", "pooling"}, {"pool", to_string(p->kind)}, {"input_dim", p->input_dim}, {"regions", p->regions}};
    const auto& r = std::get<ResidualBlock>(layer);
    json inner = json::array();
    for (const auto& d : r.inner) inner.push_back(layer_to_json(d));
    return {{"type", "residual"}, {"inner", inner}};
}

DenseLayer dense_layer_from_json(const json& j, const std::string& what) {
    DenseLayer d;
    dense_from_json(j, d.weight, d.bias, what);
    d.activation = parse_activation(j.at("activation").get<std::string>());
    return d;
}

Layer layer_from_json(const json& j, const std::string& what) {
    const auto type = j.at("type").get<std::string>();
    if (type == "dense") return dense_layer_from_json(j, what);
    if (type == "head") {
        HeadLayer h;
        dense_from_json(j, h.weight, h.bias, what);
        h.kind = parse_head_kind(j.at("head").get<std::string>());
        return h;
    }
    if (type == "pooling") {
        PoolingLayer p;
        p.kind = parse_pool_kind(j.at("pool").get<std::string>());
        p.input_dim = j.at("input_dim").get<std::size_t>();
        p.regions = j.at("regions").get<std::vector<std::vector<std::size_t>>>();
        return p;
    }
    if (type == "residual") {
        ResidualBlock r;
        for (std::size_t k = 0; k < j.at("inner").size(); ++k)
            r.inner.push_back(dense_layer_from_json(j["inner"][k], what + " inner " + std::to_string(k)));
        return r;
    }
    throw InvalidInput(what + ": unknown layer type '" + type + "'");
}

}  // namespace

json matrix_to_json(const Matrix& m) {
    json arr = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
    return arr;
}

Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows * cols)
        throw InvalidInput(what + ": expected " + std::to_string(rows * cols) + " row-major entries");
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[k++].get<double>();
    return m;
}

json network_to_json(const Network& net) {
    json layers = json::array();
    for (const auto& l : net.layers()) layers.push_back(layer_to_json(l));
    return {{"format", kFormatTag},
            {"version", kNetworkFormatVersion},
            {"input_dim", net.input_dim()},
            {"num_classes", net.num_classes()},
            {"layers", layers}};
}

Network network_from_json(const json& doc) {
    try {
        if (doc.value("format", std::string{}) != kFormatTag)
            throw InvalidInput("not a marginlab network document");
        const int version = doc.at("version").get<int>();
        if (version != kNetworkFormatVersion)
            throw InvalidInput("unsupported network format version " + std::to_string(version));
        std::vector<Layer> layers;
        for (std::size_t l = 0; l < doc.at("layers").size(); ++l)
            layers.push_back(layer_from_json(doc["layers"][l], "layer " + std::to_string(l)));
        Network net(doc.at("input_dim").get<std::size_t>(), std::move(layers));
        if (net.num_classes() != doc.at("num_classes").get<std::size_t>())
            throw InvalidInput("num_classes does not match the head");
        return net;
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("malformed network document: ") + e.what());
    }
}

void save_network(const Network& net, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << network_to_json(net).dump(1) << '\n';
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open network file '" + path.string() + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
    return network_from_json(doc);
}

}  // namespace marginlab
