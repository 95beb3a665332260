#include "marginlab/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace marginlab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string dims(Eigen::Index r, Eigen::Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

void validate_dense(const DenseLayer& d, std::size_t in, const std::string& where) {
    if (d.weight.cols() != static_cast<Eigen::Index>(in))
        throw InvalidInput(where + ": weight is " + dims(d.weight.rows(), d.weight.cols()) +
                           " but input dimension is " + std::to_string(in));
    if (d.weight.rows() == 0) throw InvalidInput(where + ": weight has no rows");
    if (d.bias.size() != d.weight.rows())
        throw InvalidInput(where + ": bias length " + std::to_string(d.bias.size()) +
                           " does not match " + std::to_string(d.weight.rows()) + " rows");
    require_finite(d.weight, where + " weight");
    require_finite(d.bias, where + " bias");
}

Vector dense_pre(const Matrix& w, const Vector& b, const Vector& z) {
    Vector pre = b;
    pre.noalias() += w * z;
    return pre;
}

Vector apply_activation(Activation a, const Vector& pre) {
    return pre.unaryExpr([a](double v) { return activate(a, v); });
}

Vector activation_derivatives(Activation a, const Vector& pre) {
    return pre.unaryExpr([a](double v) { return activation_derivative(a, v); });
}

std::size_t select_index(PoolKind kind, const std::vector<std::size_t>& region, const Vector& z) {
    if (kind == PoolKind::downsample) return region.front();
    // max pooling on |entry|; strict comparison keeps the lowest index on ties
    std::size_t best = region.front();
    for (std::size_t j : region) {
        if (std::abs(z[static_cast<Eigen::Index>(j)]) > std::abs(z[static_cast<Eigen::Index>(best)]) ||
            (std::abs(z[static_cast<Eigen::Index>(j)]) == std::abs(z[static_cast<Eigen::Index>(best)]) &&
             j < best))
            best = j;
    }
    return best;
}

Vector forward_dense(const DenseLayer& d, const Vector& z, LayerTrace& t) {
    t.preactivation = dense_pre(d.weight, d.bias, z);
    return apply_activation(d.activation, t.preactivation);
}

Vector forward_layer(const Layer& layer, const Vector& z, LayerTrace& t) {
    return std::visit(
        overloaded{
            [&](const DenseLayer& d) { return forward_dense(d, z, t); },
            [&](const HeadLayer& h) -> Vector {
                t.preactivation = dense_pre(h.weight, h.bias, z);
                if (h.kind == HeadKind::softmax) return softmax(t.preactivation);
                return t.preactivation;
            },
            [&](const PoolingLayer& p) -> Vector {
                Vector out(static_cast<Eigen::Index>(p.regions.size()));
                if (p.kind == PoolKind::average) {
                    for (std::size_t i = 0; i < p.regions.size(); ++i) {
                        double s = 0.0;
                        for (std::size_t j : p.regions[i]) s += z[static_cast<Eigen::Index>(j)];
                        out[static_cast<Eigen::Index>(i)] = s / static_cast<double>(p.regions[i].size());
                    }
                } else {
                    t.selection.resize(p.regions.size());
                    for (std::size_t i = 0; i < p.regions.size(); ++i) {
                        t.selection[i] = select_index(p.kind, p.regions[i], z);
                        out[static_cast<Eigen::Index>(i)] = z[static_cast<Eigen::Index>(t.selection[i])];
                    }
                }
                return out;
            },
            [&](const ResidualBlock& r) -> Vector {
                t.inner.assign(r.inner.size(), LayerTrace{});
                t.inner_activations.clear();
                t.inner_activations.push_back(z);
                for (std::size_t k = 0; k < r.inner.size(); ++k)
                    t.inner_activations.push_back(forward_dense(r.inner[k], t.inner_activations.back(), t.inner[k]));
                return z + t.inner_activations.back();
            },
        },
        layer);
}

Matrix apply_dense_left(const DenseLayer& d, const LayerTrace& t, const Matrix& rows) {
    const Vector deriv = activation_derivatives(d.activation, t.preactivation);
    Matrix scaled = rows * deriv.asDiagonal();
    return scaled * d.weight;
}

Matrix inner_chain_left(const ResidualBlock& r, const LayerTrace& t, const Matrix& rows) {
    Matrix acc = rows;
    for (std::size_t k = r.inner.size(); k-- > 0;) acc = apply_dense_left(r.inner[k], t.inner[k], acc);
    return acc;
}

void check_input(const Network& net, const Vector& x) {
    if (x.size() != static_cast<Eigen::Index>(net.input_dim()))
        throw InvalidInput("input has dimension " + std::to_string(x.size()) + ", network expects " +
                           std::to_string(net.input_dim()));
    require_finite(x, "network input");
}

void normalize_rows(Matrix& w, std::size_t layer_index) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        const double n = w.row(r).norm();
        if (n == 0.0) throw DegenerateRow(layer_index, static_cast<std::size_t>(r));
        w.row(r) /= n;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// enums

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

std::string to_string(PoolKind k) {
    switch (k) {
        case PoolKind::downsample: return "downsample";
        case PoolKind::max: return "max";
        case PoolKind::average: return "average";
    }
    return "?";
}

std::string to_string(HeadKind k) { return k == HeadKind::linear ? "linear" : "softmax"; }

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "tanh") return Activation::tanh;
    throw InvalidInput("unknown activation '" + s + "'");
}

PoolKind parse_pool_kind(const std::string& s) {
    if (s == "downsample") return PoolKind::downsample;
    if (s == "max") return PoolKind::max;
    if (s == "average") return PoolKind::average;
    throw InvalidInput("unknown pooling kind '" + s + "'");
}

HeadKind parse_head_kind(const std::string& s) {
    if (s == "linear") return HeadKind::linear;
    if (s == "softmax") return HeadKind::softmax;
    throw InvalidInput("unknown head kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// structure

std::size_t layer_input_dim(const Layer& layer) {
    return std::visit(overloaded{
                          [](const DenseLayer& d) { return static_cast<std::size_t>(d.weight.cols()); },
                          [](const HeadLayer& h) { return static_cast<std::size_t>(h.weight.cols()); },
                          [](const PoolingLayer& p) { return p.input_dim; },
                          [](const ResidualBlock& r) {
                              return r.inner.empty() ? std::size_t{0}
                                                     : static_cast<std::size_t>(r.inner.front().weight.cols());
                          },
                      },
                      layer);
}

std::size_t layer_output_dim(const Layer& layer) {
    return std::visit(overloaded{
                          [](const DenseLayer& d) { return static_cast<std::size_t>(d.weight.rows()); },
                          [](const HeadLayer& h) { return static_cast<std::size_t>(h.weight.rows()); },
                          [](const PoolingLayer& p) { return p.regions.size(); },
                          [](const ResidualBlock& r) {
                              return r.inner.empty() ? std::size_t{0}
                                                     : static_cast<std::size_t>(r.inner.front().weight.cols());
                          },
                      },
                      layer);
}

Network::Network(std::size_t input_dim, std::vector<Layer> layers)
    : input_dim_(input_dim), layers_(std::move(layers)) {
    if (input_dim_ == 0) throw InvalidInput("network input dimension must be positive");
    if (layers_.empty()) throw InvalidInput("network has no layers");
    std::size_t dim = input_dim_;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string where = "layer " + std::to_string(l);
        const bool last = l + 1 == layers_.size();
        std::visit(overloaded{
                       [&](const DenseLayer& d) { validate_dense(d, dim, where); },
                       [&](const HeadLayer& h) {
                           if (!last) throw InvalidInput(where + ": head must be the final layer");
                           validate_dense(DenseLayer{h.weight, h.bias, Activation::relu}, dim, where);
                       },
                       [&](const PoolingLayer& p) {
                           if (p.input_dim != dim)
                               throw InvalidInput(where + ": pooling input dimension " +
                                                  std::to_string(p.input_dim) + " != " + std::to_string(dim));
                           if (p.regions.empty()) throw InvalidInput(where + ": pooling has no regions");
                           std::vector<char> used(dim, 0);
                           for (const auto& region : p.regions) {
                               if (region.empty()) throw InvalidInput(where + ": empty pooling region");
                               for (std::size_t j : region) {
                                   if (j >= dim)
                                       throw InvalidInput(where + ": pooling index " + std::to_string(j) +
                                                          " out of range");
                                   if (used[j])
                                       throw InvalidInput(where + ": pooling regions overlap at index " +
                                                          std::to_string(j));
                                   used[j] = 1;
                               }
                           }
                       },
                       [&](const ResidualBlock& r) {
                           if (r.inner.empty()) throw InvalidInput(where + ": residual block is empty");
                           std::size_t inner_dim = dim;
                           for (std::size_t k = 0; k < r.inner.size(); ++k) {
                               validate_dense(r.inner[k], inner_dim, where + " inner " + std::to_string(k));
                               inner_dim = static_cast<std::size_t>(r.inner[k].weight.rows());
                           }
                           if (inner_dim != dim)
                               throw InvalidInput(where + ": residual block maps " + std::to_string(dim) + " to " +
                                                  std::to_string(inner_dim));
                       },
                   },
                   layers_[l]);
        if (last && !std::holds_alternative<HeadLayer>(layers_[l]))
            throw InvalidInput("final layer must be a linear or softmax head");
        dim = layer_output_dim(layers_[l]);
    }
    num_classes_ = dim;
    if (num_classes_ < 1) throw InvalidInput("network has an empty output");
}

std::vector<ParameterRef> Network::parameters() {
    std::vector<ParameterRef> out;
    for (auto& layer : layers_) {
        std::visit(overloaded{
                       [&](DenseLayer& d) { out.push_back({&d.weight, &d.bias}); },
                       [&](HeadLayer& h) { out.push_back({&h.weight, &h.bias}); },
                       [&](PoolingLayer&) {},
                       [&](ResidualBlock& r) {
                           for (auto& d : r.inner) out.push_back({&d.weight, &d.bias});
                       },
                   },
                   layer);
    }
    return out;
}

std::vector<ConstParameterRef> Network::parameters() const {
    std::vector<ConstParameterRef> out;
    for (auto& p : const_cast<Network*>(this)->parameters()) out.push_back({p.weight, p.bias});
    return out;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += static_cast<std::size_t>(p.weight->size() + p.bias->size());
    return n;
}

std::vector<const Matrix*> weight_matrices(const Network& net) {
    std::vector<const Matrix*> out;
    for (const auto& p : net.parameters()) out.push_back(p.weight);
    return out;
}

// ---------------------------------------------------------------------------
// pointwise maps

double activate(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Activation::tanh: return std::tanh(x);
    }
    return 0.0;
}

double activation_derivative(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 - s);
        }
        case Activation::tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
    }
    return 0.0;
}

double activation_second_derivative(Activation a, double x) {
    switch (a) {
        case Activation::relu: return 0.0;
        case Activation::sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 - s) * (1.0 - 2.0 * s);
        }
        case Activation::tanh: {
            const double t = std::tanh(x);
            return -2.0 * t * (1.0 - t * t);
        }
    }
    return 0.0;
}

Vector softmax(const Vector& logits) {
    const double mx = logits.maxCoeff();
    Vector e = (logits.array() - mx).exp().matrix();
    return e / e.sum();
}

Matrix softmax_jacobian(const Vector& p) {
    Matrix j = -p * p.transpose();
    j.diagonal() += p;
    return j;
}

// ---------------------------------------------------------------------------
// forward / Jacobians

ForwardTrace forward(const Network& net, const Vector& x) {
    check_input(net, x);
    ForwardTrace trace;
    trace.activations.reserve(net.layers().size() + 1);
    trace.layers.resize(net.layers().size());
    trace.activations.push_back(x);
    for (std::size_t l = 0; l < net.layers().size(); ++l)
        trace.activations.push_back(forward_layer(net.layers()[l], trace.activations.back(), trace.layers[l]));
    return trace;
}

Vector evaluate(const Network& net, const Vector& x) { return forward(net, x).output(); }

std::size_t classify(const Network& net, const Vector& x) {
    const Vector out = evaluate(net, x);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < out.size(); ++i)
        if (out[i] > out[best]) best = i;
    return static_cast<std::size_t>(best);
}

std::vector<std::int64_t> switching_pattern(const Network& net, const ForwardTrace& trace) {
    std::vector<std::int64_t> out;
    auto relu_bits = [&](const DenseLayer& d, const LayerTrace& t) {
        if (d.activation != Activation::relu) return;
        for (Eigen::Index i = 0; i < t.preactivation.size(); ++i) out.push_back(t.preactivation[i] > 0.0);
    };
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        const LayerTrace& t = trace.layers[l];
        std::visit(overloaded{
                       [&](const DenseLayer& d) { relu_bits(d, t); },
                       [&](const ResidualBlock& r) {
                           for (std::size_t k = 0; k < r.inner.size(); ++k) relu_bits(r.inner[k], t.inner[k]);
                       },
                       [&](const PoolingLayer&) {
                           for (std::size_t s : t.selection) out.push_back(static_cast<std::int64_t>(s));
                       },
                       [&](const HeadLayer&) {},
                   },
                   net.layers()[l]);
    }
    return out;
}

Matrix apply_jacobian_left(const Layer& layer, const LayerTrace& t, const Matrix& rows) {
    return std::visit(
        overloaded{
            [&](const DenseLayer& d) { return apply_dense_left(d, t, rows); },
            [&](const HeadLayer& h) -> Matrix {
                if (h.kind == HeadKind::linear) return rows * h.weight;
                const Matrix s = softmax_jacobian(softmax(t.preactivation));
                return (rows * s) * h.weight;
            },
            [&](const PoolingLayer& p) -> Matrix {
                Matrix out = Matrix::Zero(rows.rows(), static_cast<Eigen::Index>(p.input_dim));
                for (std::size_t i = 0; i < p.regions.size(); ++i) {
                    const auto col = rows.col(static_cast<Eigen::Index>(i));
                    if (p.kind == PoolKind::average) {
                        const double w = 1.0 / static_cast<double>(p.regions[i].size());
                        for (std::size_t j : p.regions[i]) out.col(static_cast<Eigen::Index>(j)) += w * col;
                    } else {
                        out.col(static_cast<Eigen::Index>(t.selection[i])) += col;
                    }
                }
                return out;
            },
            [&](const ResidualBlock& r) -> Matrix { return rows + inner_chain_left(r, t, rows); },
        },
        layer);
}

Matrix layer_jacobian(const Layer& layer, const Vector& input) {
    if (input.size() != static_cast<Eigen::Index>(layer_input_dim(layer)))
        throw InvalidInput("layer_jacobian: input dimension " + std::to_string(input.size()) + " != " +
                           std::to_string(layer_input_dim(layer)));
    LayerTrace t;
    forward_layer(layer, input, t);
    const auto out = static_cast<Eigen::Index>(layer_output_dim(layer));
    return apply_jacobian_left(layer, t, Matrix::Identity(out, out));
}

Matrix pooling_matrix(const PoolingLayer& layer, const Vector& input) { return layer_jacobian(layer, input); }

Matrix jacobian_rows(const Network& net, const ForwardTrace& trace, const Matrix& seed) {
    if (seed.cols() != static_cast<Eigen::Index>(net.num_classes()))
        throw InvalidInput("jacobian_rows: seed must have N_Y columns");
    Matrix rows = seed;
    for (std::size_t l = net.layers().size(); l-- > 0;)
        rows = apply_jacobian_left(net.layers()[l], trace.layers[l], rows);
    return rows;
}

Matrix network_jacobian(const Network& net, const ForwardTrace& trace) {
    const auto k = static_cast<Eigen::Index>(net.num_classes());
    return jacobian_rows(net, trace, Matrix::Identity(k, k));
}

Matrix network_jacobian(const Network& net, const Vector& x) { return network_jacobian(net, forward(net, x)); }

Matrix average_jacobian(const Network& net, const Vector& x, const Vector& x2, int steps) {
    if (steps < 2) throw InvalidInput("average_jacobian: steps must be at least 2");
    check_input(net, x);
    check_input(net, x2);
    const Vector delta = x2 - x;
    if (delta.isZero(0.0)) return network_jacobian(net, x);
    Matrix acc = Matrix::Zero(static_cast<Eigen::Index>(net.num_classes()), static_cast<Eigen::Index>(net.input_dim()));
    const double h = 1.0 / steps;
    for (int i = 0; i <= steps; ++i) {
        const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
        acc += w * network_jacobian(net, Vector(x + (h * i) * delta));
    }
    return acc * h;
}

Matrix resnet_jacobian_expansion(const Network& net, const Vector& x) {
    const auto& layers = net.layers();
    const std::size_t blocks = layers.size() - 1;
    for (std::size_t l = 0; l < blocks; ++l)
        if (!std::holds_alternative<ResidualBlock>(layers[l]))
            throw UnsupportedArchitecture("resnet_jacobian_expansion: layer " + std::to_string(l) +
                                          " is not a residual block");
    if (blocks > 20) throw UnsupportedArchitecture("resnet_jacobian_expansion: too many blocks to enumerate");

    const ForwardTrace trace = forward(net, x);
    const auto n = static_cast<Eigen::Index>(net.input_dim());
    std::vector<Matrix> block_jac;
    block_jac.reserve(blocks);
    for (std::size_t l = 0; l < blocks; ++l)
        block_jac.push_back(inner_chain_left(std::get<ResidualBlock>(layers[l]), trace.layers[l], Matrix::Identity(n, n)));

    // Each non-empty subset of blocks is one sub-network path.
    Matrix sum = Matrix::Identity(n, n);
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << blocks); ++mask) {
        Matrix path = Matrix::Identity(n, n);
        for (std::size_t l = 0; l < blocks; ++l)
            if (mask & (std::uint64_t{1} << l)) path = block_jac[l] * path;
        sum += path;
    }
    const auto k = static_cast<Eigen::Index>(net.num_classes());
    const Matrix head = apply_jacobian_left(layers.back(), trace.layers.back(), Matrix::Identity(k, k));
    return head * sum;
}

// ---------------------------------------------------------------------------
// normalization

DegenerateRow::DegenerateRow(std::size_t layer_, std::size_t row_)
    : InvalidInput("weight matrix " + std::to_string(layer_) + " has a zero row at index " + std::to_string(row_)),
      layer(layer_),
      row(row_) {}

void weight_normalize_in_place(Network& net) {
    std::size_t idx = 0;
    for (auto& p : net.parameters()) normalize_rows(*p.weight, idx++);
}

Network weight_normalize(const Network& net) {
    Network out = net;
    weight_normalize_in_place(out);
    return out;
}

namespace {

void require_batch_norm_form(const Network& net, std::span<const Vector> batch) {
    if (batch.empty()) throw InvalidInput("batch normalization needs a non-empty batch");
    const auto& layers = net.layers();
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const auto* d = std::get_if<DenseLayer>(&layers[l]);
        if (d == nullptr)
            throw UnsupportedArchitecture("batch normalization: layer " + std::to_string(l) +
                                          " is not a dense layer");
        if (d->activation != Activation::relu)
            throw UnsupportedArchitecture("batch normalization: layer " + std::to_string(l) +
                                          " uses " + to_string(d->activation) + ", only relu commutes");
    }
    for (const auto& x : batch) check_input(net, x);
}

Vector batch_scale(const std::vector<Vector>& pre, std::size_t layer) {
    Vector sq = Vector::Zero(pre.front().size());
    for (const auto& p : pre) sq += p.cwiseAbs2();
    for (Eigen::Index r = 0; r < sq.size(); ++r)
        if (!(sq[r] > 0.0))
            throw DegenerateStatistics("batch normalization: layer " + std::to_string(layer) + " row " +
                                       std::to_string(r) + " has zero second moment");
    return sq.cwiseSqrt().cwiseInverse();
}

}  // namespace

std::vector<Vector> batch_normalized_forward(const Network& net, std::span<const Vector> batch) {
    require_batch_norm_form(net, batch);
    std::vector<Vector> z(batch.begin(), batch.end());
    const auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Matrix& w = l + 1 < layers.size() ? std::get<DenseLayer>(layers[l]).weight : net.head().weight;
        const Vector& b = l + 1 < layers.size() ? std::get<DenseLayer>(layers[l]).bias : net.head().bias;
        std::vector<Vector> pre;
        pre.reserve(z.size());
        for (const auto& v : z) pre.push_back(dense_pre(w, b, v));
        const Vector n = batch_scale(pre, l);
        for (std::size_t i = 0; i < z.size(); ++i) {
            Vector scaled = n.cwiseProduct(pre[i]);
            if (l + 1 < layers.size())
                z[i] = apply_activation(Activation::relu, scaled);
            else
                z[i] = net.head().kind == HeadKind::softmax ? softmax(scaled) : scaled;
        }
    }
    return z;
}

Network batch_norm_equivalent(const Network& net, std::span<const Vector> batch) {
    require_batch_norm_form(net, batch);
    const auto& layers = net.layers();
    std::vector<Layer> out;
    out.reserve(layers.size());

    // Hidden activations of the transformed net; the batch-normalized
    // activations equal carry (.) u.
    std::vector<Vector> u(batch.begin(), batch.end());
    Vector carry = Vector::Ones(static_cast<Eigen::Index>(net.input_dim()));

    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const auto& d = std::get<DenseLayer>(layers[l]);
        Matrix w = d.weight * carry.asDiagonal();
        Vector b = d.bias;
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            const double n = w.row(r).norm();
            if (n == 0.0) throw DegenerateRow(l, static_cast<std::size_t>(r));
            w.row(r) /= n;
            b[r] /= n;
        }
        std::vector<Vector> pre;
        pre.reserve(u.size());
        for (const auto& v : u) pre.push_back(dense_pre(w, b, v));
        carry = batch_scale(pre, l);
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = apply_activation(Activation::relu, pre[i]);
        out.emplace_back(DenseLayer{std::move(w), std::move(b), Activation::relu});
    }

    const HeadLayer& h = net.head();
    Matrix w = h.weight * carry.asDiagonal();
    std::vector<Vector> pre;
    pre.reserve(u.size());
    for (const auto& v : u) pre.push_back(dense_pre(w, h.bias, v));
    const Vector n = batch_scale(pre, layers.size() - 1);
    out.emplace_back(HeadLayer{h.kind, n.asDiagonal() * w, n.cwiseProduct(h.bias)});
    return Network(net.input_dim(), std::move(out));
}

// ---------------------------------------------------------------------------
// convolution

ImageShape conv_output_shape(const ConvFilters& f, const ImageShape& in, std::size_t stride, std::size_t padding) {
    if (stride == 0) throw InvalidInput("convolution stride must be positive");
    if (in.height > kMaxConvImageSide || in.width > kMaxConvImageSide)
        throw InvalidInput("convolution input " + std::to_string(in.height) + "x" + std::to_string(in.width) +
                           " exceeds the " + std::to_string(kMaxConvImageSide) + "x" +
                           std::to_string(kMaxConvImageSide) + " dense-materialization cap");
    if (f.in_channels != in.channels)
        throw InvalidInput("convolution filters expect " + std::to_string(f.in_channels) + " channels, input has " +
                           std::to_string(in.channels));
    if (f.values.size() != f.out_channels * f.in_channels * f.kernel_h * f.kernel_w)
        throw InvalidInput("convolution filter tensor has the wrong number of values");
    if (f.kernel_h == 0 || f.kernel_w == 0 || in.height + 2 * padding < f.kernel_h ||
        in.width + 2 * padding < f.kernel_w)
        throw InvalidInput("convolution kernel does not fit the padded input");
    return {f.out_channels, (in.height + 2 * padding - f.kernel_h) / stride + 1,
            (in.width + 2 * padding - f.kernel_w) / stride + 1};
}

Matrix conv_as_dense(const ConvFilters& f, const ImageShape& in, std::size_t stride, std::size_t padding) {
    const ImageShape out = conv_output_shape(f, in, stride, padding);
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(out.size()), static_cast<Eigen::Index>(in.size()));
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    for (std::size_t o = 0; o < out.channels; ++o)
        for (std::size_t r = 0; r < out.height; ++r)
            for (std::size_t c = 0; c < out.width; ++c) {
                const auto row = static_cast<Eigen::Index>((o * out.height + r) * out.width + c);
                for (std::size_t i = 0; i < in.channels; ++i)
                    for (std::size_t kr = 0; kr < f.kernel_h; ++kr)
                        for (std::size_t kc = 0; kc < f.kernel_w; ++kc) {
                            const auto y = static_cast<std::ptrdiff_t>(r * stride + kr) - pad;
                            const auto xx = static_cast<std::ptrdiff_t>(c * stride + kc) - pad;
                            if (y < 0 || xx < 0 || y >= static_cast<std::ptrdiff_t>(in.height) ||
                                xx >= static_cast<std::ptrdiff_t>(in.width))
                                continue;
                            const auto col = static_cast<Eigen::Index>(
                                (i * in.height + static_cast<std::size_t>(y)) * in.width + static_cast<std::size_t>(xx));
                            m(row, col) += f.at(o, i, kr, kc);
                        }
            }
    return m;
}

std::vector<std::vector<std::size_t>> square_pool_regions(const ImageShape& in, std::size_t p) {
    if (p == 0 || in.height % p != 0 || in.width % p != 0)
        throw InvalidInput("pool size must divide the image sides");
    std::vector<std::vector<std::size_t>> regions;
    for (std::size_t ch = 0; ch < in.channels; ++ch)
        for (std::size_t br = 0; br < in.height / p; ++br)
            for (std::size_t bc = 0; bc < in.width / p; ++bc) {
                std::vector<std::size_t> region;
                for (std::size_t r = 0; r < p; ++r)
                    for (std::size_t c = 0; c < p; ++c)
                        region.push_back((ch * in.height + br * p + r) * in.width + bc * p + c);
                regions.push_back(std::move(region));
            }
    return regions;
}

}  // namespace marginlab
