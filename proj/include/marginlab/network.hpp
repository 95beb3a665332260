#pragma once

#include "marginlab/linalg.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace marginlab {

enum class Activation { relu, sigmoid, tanh };
enum class PoolKind { downsample, max, average };
enum class HeadKind { linear, softmax };

std::string to_string(Activation a);
std::string to_string(PoolKind k);
std::string to_string(HeadKind k);
Activation parse_activation(const std::string& s);
PoolKind parse_pool_kind(const std::string& s);
HeadKind parse_head_kind(const std::string& s);

/// z = sigma(W z_prev + b).
struct DenseLayer {
    Matrix weight;
    Vector bias;
    Activation activation = Activation::relu;
};

/// z_i = p_i(z_prev)^T z_prev over the region list. Regions must be pairwise
/// disjoint; down-sampling picks the first listed index of each region.
struct PoolingLayer {
    PoolKind kind = PoolKind::max;
    std::size_t input_dim = 0;
    std::vector<std::vector<std::size_t>> regions;
};

/// z = z_prev + phi(z_prev) with phi a chain of dense layers.
struct ResidualBlock {
    std::vector<DenseLayer> inner;
};

/// Final layer mapping to class scores; softmax heads emit probabilities.
struct HeadLayer {
    HeadKind kind = HeadKind::softmax;
    Matrix weight;
    Vector bias;
};

using Layer = std::variant<DenseLayer, PoolingLayer, ResidualBlock, HeadLayer>;

std::size_t layer_input_dim(const Layer& layer);
std::size_t layer_output_dim(const Layer& layer);

/// Mutable view of one weight/bias pair, in network traversal order
/// (residual inner layers are visited in place).
struct ParameterRef {
    Matrix* weight;
    Vector* bias;
};

struct ConstParameterRef {
    const Matrix* weight;
    const Vector* bias;
};

class Network {
public:
    Network() = default;
    /// Validates the dimension chain; the last layer must be the only head.
    Network(std::size_t input_dim, std::vector<Layer> layers);

    std::size_t input_dim() const { return input_dim_; }
    std::size_t num_classes() const { return num_classes_; }
    const std::vector<Layer>& layers() const { return layers_; }
    const HeadLayer& head() const { return std::get<HeadLayer>(layers_.back()); }

    std::vector<ParameterRef> parameters();
    std::vector<ConstParameterRef> parameters() const;
    std::size_t parameter_count() const;

private:
    std::size_t input_dim_ = 0;
    std::size_t num_classes_ = 0;
    std::vector<Layer> layers_;
};

/// Per-layer record of a forward pass.
struct LayerTrace {
    Vector preactivation;                  // dense and head layers
    std::vector<std::size_t> selection;    // pooling: chosen input index per region
    std::vector<Vector> inner_activations; // residual: z0..zn of the inner chain
    std::vector<LayerTrace> inner;         // residual: traces of inner layers
};

struct ForwardTrace {
    std::vector<Vector> activations;  // z^0 = x ... z^L = f(x)
    std::vector<LayerTrace> layers;

    const Vector& output() const { return activations.back(); }
};

double activate(Activation a, double x);
/// ReLU derivative at exactly 0 is 0.
double activation_derivative(Activation a, double x);
double activation_second_derivative(Activation a, double x);

Vector softmax(const Vector& logits);
/// diag(p) - p p^T.
Matrix softmax_jacobian(const Vector& probabilities);

ForwardTrace forward(const Network& net, const Vector& x);
Vector evaluate(const Network& net, const Vector& x);
/// argmax of the output; ties go to the lowest class index.
std::size_t classify(const Network& net, const Vector& x);

/// ReLU sign bits and max-pool selections of a traced forward pass; the
/// network is smooth in any neighbourhood where this stays constant.
std::vector<std::int64_t> switching_pattern(const Network& net, const ForwardTrace& trace);

/// Computes R * J_layer for the traced layer without forming J_layer.
Matrix apply_jacobian_left(const Layer& layer, const LayerTrace& trace, const Matrix& rows);

/// Evaluates one layer at `input` and returns its exact Jacobian.
Matrix layer_jacobian(const Layer& layer, const Vector& input);
/// Explicit pooling matrix P(z) for the given input.
Matrix pooling_matrix(const PoolingLayer& layer, const Vector& input);

/// d f / d x as the chain product of layer Jacobians, N_Y x input_dim.
Matrix network_jacobian(const Network& net, const Vector& x);
Matrix network_jacobian(const Network& net, const ForwardTrace& trace);
/// seed * J for an arbitrary row seed (k x N_Y).
Matrix jacobian_rows(const Network& net, const ForwardTrace& trace, const Matrix& seed);

/// Composite trapezoid approximation of the integral of J along [x, x2].
Matrix average_jacobian(const Network& net, const Vector& x, const Vector& x2, int steps = 64);

/// Jacobian of a residual network assembled as J_head (I + sum over every
/// non-empty ordered subset of blocks of the product of block Jacobians).
/// Requires residual blocks followed by a head.
Matrix resnet_jacobian_expansion(const Network& net, const Vector& x);

/// Raised by weight_normalize when a weight row has zero norm.
class DegenerateRow : public InvalidInput {
public:
    DegenerateRow(std::size_t layer, std::size_t row);
    std::size_t layer;
    std::size_t row;
};

/// Raised by batch_norm_equivalent on a zero batch second moment.
class DegenerateStatistics : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

class UnsupportedArchitecture : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

/// Rescales every weight row to unit Euclidean norm; biases are untouched.
Network weight_normalize(const Network& net);
void weight_normalize_in_place(Network& net);

/// Outputs of the batch-normalized computation in which every layer's
/// pre-activation W z + b is scaled per row by
/// (sum over the batch of (W z_i + b)_r^2)^(-1/2) before the nonlinearity.
std::vector<Vector> batch_normalized_forward(const Network& net, std::span<const Vector> batch);

/// Plain network reproducing batch_normalized_forward on `batch`: hidden
/// weights are row-normalized and each layer's diagonal normalization is
/// absorbed into the next layer, leaving the explicit factor on the head.
/// Requires ReLU dense layers followed by a head.
Network batch_norm_equivalent(const Network& net, std::span<const Vector> batch);

struct ImageShape {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t size() const { return channels * height * width; }
};

/// Filters indexed [out_channel][in_channel][row][col].
struct ConvFilters {
    std::size_t out_channels = 0;
    std::size_t in_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::vector<double> values;

    double at(std::size_t o, std::size_t i, std::size_t r, std::size_t c) const {
        return values[((o * in_channels + i) * kernel_h + r) * kernel_w + c];
    }
};

constexpr std::size_t kMaxConvImageSide = 32;

ImageShape conv_output_shape(const ConvFilters& filters, const ImageShape& input, std::size_t stride,
                             std::size_t padding);

/// Dense matrix of a zero-padded strided 2-D cross-correlation acting on
/// channel-major flattened images.
Matrix conv_as_dense(const ConvFilters& filters, const ImageShape& input, std::size_t stride,
                     std::size_t padding);

/// Non-overlapping p x p pooling regions over a channel-major image.
std::vector<std::vector<std::size_t>> square_pool_regions(const ImageShape& input, std::size_t p);

/// All weight matrices in traversal order (pooling contributes none).
std::vector<const Matrix*> weight_matrices(const Network& net);

}  // namespace marginlab
