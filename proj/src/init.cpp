#include "marginlab/init.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace marginlab {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    return m;
}

Vector gaussian_vector(Eigen::Index n, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
}

namespace {

double init_stddev(Activation a, std::size_t fan_in, double gain) {
    const double base = a == Activation::relu ? 2.0 : 1.0;
    return std::sqrt(gain * base / static_cast<double>(fan_in));
}

}  // namespace

Network init_mlp(const MlpSpec& spec, std::uint64_t seed, double gain) {
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    std::size_t prev = spec.input_dim;
    for (std::size_t width : spec.hidden) {
        DenseLayer d;
        d.weight = gaussian_matrix(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(prev),
                                   init_stddev(spec.activation, prev, gain), rng);
        d.bias = Vector::Zero(static_cast<Eigen::Index>(width));
        d.activation = spec.activation;
        layers.emplace_back(std::move(d));
        prev = width;
    }
    HeadLayer h;
    h.kind = spec.head;
    h.weight = gaussian_matrix(static_cast<Eigen::Index>(spec.num_classes), static_cast<Eigen::Index>(prev),
                               std::sqrt(gain / static_cast<double>(prev)), rng);
    h.bias = Vector::Zero(static_cast<Eigen::Index>(spec.num_classes));
    layers.emplace_back(std::move(h));
    return Network(spec.input_dim, std::move(layers));
}

Network init_resnet(const ResNetSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = spec.input_dim;
    const std::size_t width = spec.inner_width == 0 ? n : spec.inner_width;
    std::vector<Layer> layers;
    for (std::size_t b = 0; b < spec.blocks; ++b) {
        ResidualBlock block;
        std::size_t prev = n;
        for (std::size_t k = 0; k < spec.inner_depth; ++k) {
            const std::size_t out = k + 1 == spec.inner_depth ? n : width;
            DenseLayer d;
            d.weight = gaussian_matrix(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(prev),
                                       spec.inner_scale / std::sqrt(static_cast<double>(prev)), rng);
            d.bias = gaussian_vector(static_cast<Eigen::Index>(out), 0.1, rng);
            d.activation = spec.activation;
            block.inner.push_back(std::move(d));
            prev = out;
        }
        layers.emplace_back(std::move(block));
    }
    HeadLayer h;
    h.kind = spec.head;
    h.weight = gaussian_matrix(static_cast<Eigen::Index>(spec.num_classes), static_cast<Eigen::Index>(n),
                               1.0 / std::sqrt(static_cast<double>(n)), rng);
    h.bias = Vector::Zero(static_cast<Eigen::Index>(spec.num_classes));
    layers.emplace_back(std::move(h));
    return Network(n, std::move(layers));
}

Network random_network(const RandomNetSpec& spec, std::uint64_t seed) {
    if (spec.input_dim < 1 || spec.num_classes < 2 || spec.min_layers < 1 || spec.max_layers < spec.min_layers ||
        spec.max_width < 2 || spec.activations.empty() || spec.heads.empty())
        throw InvalidInput("random_network: invalid spec");
    std::mt19937_64 rng(seed);
    auto uniform = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    auto act = [&] { return spec.activations[uniform(0, spec.activations.size() - 1)]; };
    auto dense = [&](std::size_t in, std::size_t out, Activation a) {
        DenseLayer d;
        d.weight = gaussian_matrix(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in),
                                   std::sqrt(2.0 / static_cast<double>(in)), rng);
        d.bias = gaussian_vector(static_cast<Eigen::Index>(out), spec.bias_scale, rng);
        d.activation = a;
        return d;
    };

    const std::size_t total = uniform(spec.min_layers, spec.max_layers);
    std::vector<Layer> layers;
    std::size_t dim = spec.input_dim;
    for (std::size_t l = 0; l + 1 < total; ++l) {
        const std::size_t kind = uniform(0, 3);
        if (kind == 2 && spec.allow_pooling && dim >= 4) {
            PoolingLayer p;
            p.kind = static_cast<PoolKind>(uniform(0, 2));
            p.input_dim = dim;
            std::vector<std::size_t> idx(dim);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::shuffle(idx.begin(), idx.end(), rng);
            // Drop up to a quarter of the indices, then cut into groups of 1-3.
            idx.resize(dim - uniform(0, dim / 4));
            for (std::size_t i = 0; i < idx.size();) {
                const std::size_t g = std::min(uniform(1, 3), idx.size() - i);
                std::vector<std::size_t> region(idx.begin() + static_cast<std::ptrdiff_t>(i),
                                                idx.begin() + static_cast<std::ptrdiff_t>(i + g));
                std::sort(region.begin(), region.end());
                p.regions.push_back(std::move(region));
                i += g;
            }
            dim = p.regions.size();
            layers.emplace_back(std::move(p));
        } else if (kind == 3 && spec.allow_residual) {
            ResidualBlock r;
            const std::size_t depth = uniform(1, 2);
            std::size_t prev = dim;
            for (std::size_t k = 0; k < depth; ++k) {
                const std::size_t out = k + 1 == depth ? dim : uniform(2, spec.max_width);
                DenseLayer d = dense(prev, out, act());
                d.weight *= 0.5;
                r.inner.push_back(std::move(d));
                prev = out;
            }
            layers.emplace_back(std::move(r));
        } else {
            const std::size_t out = uniform(2, spec.max_width);
            layers.emplace_back(dense(dim, out, act()));
            dim = out;
        }
    }
    HeadLayer h;
    h.kind = spec.heads[uniform(0, spec.heads.size() - 1)];
    h.weight = gaussian_matrix(static_cast<Eigen::Index>(spec.num_classes), static_cast<Eigen::Index>(dim),
                               1.0 / std::sqrt(static_cast<double>(dim)), rng);
    h.bias = gaussian_vector(static_cast<Eigen::Index>(spec.num_classes), spec.bias_scale, rng);
    layers.emplace_back(std::move(h));
    return Network(spec.input_dim, std::move(layers));
}

}  // namespace marginlab
