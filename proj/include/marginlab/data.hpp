#pragma once

#include "marginlab/covering.hpp"
#include "marginlab/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace marginlab {

/// Labels are zero-based class indices in [0, N_Y).
struct Sample {
    Vector x;
    std::size_t label = 0;
};

struct Dataset {
    std::vector<Sample> samples;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::string provenance;
    std::optional<CoveringModel> covering;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    /// Throws InvalidInput on ragged inputs, non-finite values or bad labels.
    void validate() const;
};

/// Raised by the binary loaders; carries the byte offset of the problem.
class FormatError : public InvalidInput {
public:
    FormatError(const std::string& what, std::uint64_t offset);
    std::uint64_t offset;
};

// ---- synthetic generators --------------------------------------------------

struct GmmComponent {
    Vector mean;
    Matrix factor;  // ambient_dim x r, r <= rank
    std::size_t label = 0;
};

struct GmmSpec {
    std::vector<GmmComponent> components;
    std::size_t rank = 1;
    std::size_t num_classes = 0;  // 0: one past the largest component label
    std::uint64_t seed = 0;

    void validate() const;
};

/// Component drawn uniformly, x = mean + factor * N(0, I).
Dataset sample_gmm(const GmmSpec& spec, std::size_t m);

enum class ChartKind { circle, torus, affine_bump };

std::string to_string(ChartKind kind);
ChartKind parse_chart_kind(const std::string& s);

/// One labeled piece of the data manifold. The chart maps [0,1]^k into
/// R^chart_dim; `embedding` (ambient x chart_dim, optional) then places it.
struct ManifoldComponent {
    ChartKind chart = ChartKind::circle;
    std::vector<double> radii{1.0};  // circle: {r}; torus: {r1, r2}
    Vector center;                   // chart-space offset, empty for origin
    std::size_t patch_dim = 2;       // affine_bump: k
    double bump_height = 0.0;        // affine_bump: height along the extra axis
    std::size_t label = 0;
};

struct ManifoldSpec {
    std::vector<ManifoldComponent> components;
    double c_m = 1.0;  // declared regularity constant
    Matrix embedding;  // empty: identity
    bool stratified = false;
    std::size_t num_classes = 0;
    std::uint64_t seed = 0;

    std::size_t intrinsic_dim() const;
    std::size_t chart_dim() const;
    void validate() const;
};

Vector evaluate_chart(const ManifoldComponent& component, std::span<const double> params);

/// Uniform (or stratified) parameter draws pushed through the charts.
Dataset sample_manifold(const ManifoldSpec& spec, std::size_t m);

// ---- binary formats ----------------------------------------------------------

/// Unsigned-byte IDX tensor (magic 0x000008NN, NN = number of dimensions).
struct IdxTensor {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

IdxTensor load_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxTensor& tensor);

/// Images (n x rows x cols) and labels (n) into a dataset scaled to [0,1].
Dataset idx_to_dataset(const IdxTensor& images, const IdxTensor& labels, std::size_t num_classes = 10);
Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// CIFAR-10 binary batch: 1 label byte + 3072 pixel bytes (R, G, B planes).
Dataset load_cifar10_bin(const std::filesystem::path& path, bool standardize = false);

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

/// Per-channel zero-mean unit-variance transform over channel-major inputs.
ChannelStats standardize_channels(Dataset& data, std::size_t channels);

// ---- container ---------------------------------------------------------------

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

/// "MLDS" magic, version, m, dim, N_Y (little-endian), row-major float64
/// inputs, uint32 labels.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& data);

/// FNV-1a 64 of the container encoding, as 16 hex digits.
std::string dataset_fingerprint(const Dataset& data);
std::string file_fingerprint(const std::filesystem::path& path);

/// Sidecar JSON with the covering model and provenance.
void save_dataset_sidecar(const Dataset& data, const std::filesystem::path& path);
void load_dataset_sidecar(Dataset& data, const std::filesystem::path& path);

// ---- helpers -------------------------------------------------------------------

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);
/// Seeded shuffle then split; the first part holds `first_count` samples.
std::pair<Dataset, Dataset> split(const Dataset& data, std::size_t first_count, std::uint64_t seed);

/// Horizontal flip with probability 1/2 and a random crop from a 4-pixel
/// zero-padded copy of a channel-major image.
Vector augment_flip_crop(const Vector& image, std::size_t channels, std::size_t height, std::size_t width,
                         std::uint64_t seed);

}  // namespace marginlab
