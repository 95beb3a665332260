#pragma once

#include "marginlab/network.hpp"

#include <cstdint>
#include <random>

namespace marginlab {

struct MlpSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    Activation activation = Activation::relu;
    HeadKind head = HeadKind::softmax;
    std::size_t num_classes = 2;
};

/// Gaussian init with variance gain / fan_in (2/fan_in for relu), zero biases.
Network init_mlp(const MlpSpec& spec, std::uint64_t seed, double gain = 1.0);

struct ResNetSpec {
    std::size_t input_dim = 0;
    std::size_t blocks = 1;
    std::size_t inner_depth = 1;
    std::size_t inner_width = 0;  // 0: same as input_dim
    Activation activation = Activation::relu;
    HeadKind head = HeadKind::softmax;
    std::size_t num_classes = 2;
    double inner_scale = 0.5;
};

Network init_resnet(const ResNetSpec& spec, std::uint64_t seed);

struct RandomNetSpec {
    std::size_t input_dim = 6;
    std::size_t num_classes = 3;
    std::size_t min_layers = 2;  // hidden layers plus the head
    std::size_t max_layers = 5;
    std::size_t max_width = 16;
    std::vector<Activation> activations{Activation::relu, Activation::sigmoid, Activation::tanh};
    bool allow_pooling = true;
    bool allow_residual = true;
    std::vector<HeadKind> heads{HeadKind::linear, HeadKind::softmax};
    double bias_scale = 0.5;
};

/// Random architecture and weights drawn from `seed`: dense layers,
/// disjoint-region pooling and residual blocks in any order, then a head.
Network random_network(const RandomNetSpec& spec, std::uint64_t seed);

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);
Vector gaussian_vector(Eigen::Index n, double stddev, std::mt19937_64& rng);

}  // namespace marginlab
