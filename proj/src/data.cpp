#include "marginlab/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace marginlab {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

template <class T>
void put_le(std::vector<std::uint8_t>& b, T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
    b.insert(b.end(), std::begin(raw), std::end(raw));
}

template <class T>
T get_le(const std::vector<std::uint8_t>& b, std::size_t& off, const std::string& what) {
    if (off + sizeof(T) > b.size()) throw FormatError(what + ": truncated", off);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, b.data() + off, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
    off += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::size_t infer_classes(std::size_t declared, std::size_t max_label) {
    return declared != 0 ? declared : std::max<std::size_t>(2, max_label + 1);
}

}  // namespace

FormatError::FormatError(const std::string& what, std::uint64_t offset_)
    : InvalidInput(what + " (byte offset " + std::to_string(offset_) + ")"), offset(offset_) {}

void Dataset::validate() const {
    if (num_classes < 2) throw InvalidInput("dataset needs at least two classes");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.x.size() != static_cast<Eigen::Index>(input_dim))
            throw InvalidInput("sample " + std::to_string(i) + " has dimension " + std::to_string(s.x.size()) +
                               ", dataset declares " + std::to_string(input_dim));
        if (s.label >= num_classes)
            throw InvalidInput("sample " + std::to_string(i) + " label " + std::to_string(s.label) +
                               " outside [0, " + std::to_string(num_classes) + ")");
        require_finite(s.x, "sample " + std::to_string(i));
    }
}

// ---- GMM ---------------------------------------------------------------------

void GmmSpec::validate() const {
    if (components.empty()) throw InvalidInput("gmm: no components");
    if (rank < 1) throw InvalidInput("gmm: rank must be at least 1");
    const Eigen::Index dim = components.front().mean.size();
    if (dim == 0) throw InvalidInput("gmm: empty mean");
    for (std::size_t c = 0; c < components.size(); ++c) {
        const auto& comp = components[c];
        const std::string where = "gmm component " + std::to_string(c);
        if (comp.mean.size() != dim) throw InvalidInput(where + ": mean dimension mismatch");
        if (comp.factor.size() != 0 && comp.factor.rows() != dim)
            throw InvalidInput(where + ": factor has " + std::to_string(comp.factor.rows()) + " rows, expected " +
                               std::to_string(dim));
        if (comp.factor.cols() > static_cast<Eigen::Index>(rank))
            throw InvalidInput(where + ": factor has " + std::to_string(comp.factor.cols()) +
                               " columns, exceeding rank " + std::to_string(rank));
        if (num_classes != 0 && comp.label >= num_classes) throw InvalidInput(where + ": label out of range");
        require_finite(comp.mean, where + " mean");
        require_finite(comp.factor, where + " factor");
    }
}

Dataset sample_gmm(const GmmSpec& spec, std::size_t m) {
    spec.validate();
    if (m < 1) throw InvalidInput("gmm: sample count must be at least 1");
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<std::size_t> pick(0, spec.components.size() - 1);
    std::normal_distribution<double> normal;

    Dataset out;
    out.input_dim = static_cast<std::size_t>(spec.components.front().mean.size());
    std::size_t max_label = 0;
    for (const auto& c : spec.components) max_label = std::max(max_label, c.label);
    out.num_classes = infer_classes(spec.num_classes, max_label);
    out.samples.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& comp = spec.components[pick(rng)];
        Vector x = comp.mean;
        if (comp.factor.cols() > 0) {
            Vector z(comp.factor.cols());
            for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = normal(rng);
            x.noalias() += comp.factor * z;
        }
        out.samples.push_back({std::move(x), comp.label});
    }
    out.covering = CoveringModel::gmm(spec.components.size(), spec.rank);
    out.provenance = "synthetic gmm seed=" + std::to_string(spec.seed) + " m=" + std::to_string(m);
    return out;
}

// ---- manifolds -------------------------------------------------------------------

std::string to_string(ChartKind kind) {
    switch (kind) {
        case ChartKind::circle: return "circle";
        case ChartKind::torus: return "torus";
        case ChartKind::affine_bump: return "affine_bump";
    }
    return "?";
}

ChartKind parse_chart_kind(const std::string& s) {
    if (s == "circle") return ChartKind::circle;
    if (s == "torus") return ChartKind::torus;
    if (s == "affine_bump") return ChartKind::affine_bump;
    throw InvalidInput("unknown chart '" + s + "'");
}

namespace {

std::size_t chart_param_dim(const ManifoldComponent& c) {
    switch (c.chart) {
        case ChartKind::circle: return 1;
        case ChartKind::torus: return 2;
        case ChartKind::affine_bump: return c.patch_dim;
    }
    return 0;
}

std::size_t chart_space_dim(const ManifoldComponent& c) {
    switch (c.chart) {
        case ChartKind::circle: return 2;
        case ChartKind::torus: return 4;
        case ChartKind::affine_bump: return c.patch_dim + 1;
    }
    return 0;
}

}  // namespace

std::size_t ManifoldSpec::intrinsic_dim() const {
    return components.empty() ? 0 : chart_param_dim(components.front());
}

std::size_t ManifoldSpec::chart_dim() const {
    return components.empty() ? 0 : chart_space_dim(components.front());
}

void ManifoldSpec::validate() const {
    if (components.empty()) throw InvalidInput("manifold: no components");
    if (!(c_m > 0.0)) throw InvalidInput("manifold: C_M must be positive");
    for (std::size_t c = 0; c < components.size(); ++c) {
        const auto& comp = components[c];
        const std::string where = "manifold component " + std::to_string(c);
        if (chart_param_dim(comp) != intrinsic_dim() || chart_space_dim(comp) != chart_dim())
            throw InvalidInput(where + ": all components must share the chart dimensions");
        if (chart_param_dim(comp) < 1) throw InvalidInput(where + ": k must be at least 1");
        const std::size_t need = comp.chart == ChartKind::torus ? 2 : 1;
        if (comp.radii.size() < need) throw InvalidInput(where + ": missing radii");
        if (comp.center.size() != 0 && comp.center.size() != static_cast<Eigen::Index>(chart_dim()))
            throw InvalidInput(where + ": center dimension mismatch");
        if (num_classes != 0 && comp.label >= num_classes) throw InvalidInput(where + ": label out of range");
    }
    if (embedding.size() != 0 && embedding.cols() != static_cast<Eigen::Index>(chart_dim()))
        throw InvalidInput("manifold: embedding must have " + std::to_string(chart_dim()) + " columns");
}

Vector evaluate_chart(const ManifoldComponent& c, std::span<const double> u) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    Vector p(static_cast<Eigen::Index>(chart_space_dim(c)));
    switch (c.chart) {
        case ChartKind::circle:
            p << c.radii[0] * std::cos(two_pi * u[0]), c.radii[0] * std::sin(two_pi * u[0]);
            break;
        case ChartKind::torus:
            p << c.radii[0] * std::cos(two_pi * u[0]), c.radii[0] * std::sin(two_pi * u[0]),
                c.radii[1] * std::cos(two_pi * u[1]), c.radii[1] * std::sin(two_pi * u[1]);
            break;
        case ChartKind::affine_bump: {
            double r2 = 0.0;
            for (std::size_t i = 0; i < c.patch_dim; ++i) {
                p[static_cast<Eigen::Index>(i)] = c.radii[0] * u[i];
                r2 += (u[i] - 0.5) * (u[i] - 0.5);
            }
            p[static_cast<Eigen::Index>(c.patch_dim)] = c.bump_height * std::exp(-8.0 * r2);
            break;
        }
    }
    if (!p.allFinite()) throw InvalidInput("chart evaluation produced a non-finite point");
    if (c.center.size() != 0) p += c.center;
    return p;
}

Dataset sample_manifold(const ManifoldSpec& spec, std::size_t m) {
    spec.validate();
    if (m < 1) throw InvalidInput("manifold: sample count must be at least 1");
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, spec.components.size() - 1);

    const std::size_t k = spec.intrinsic_dim();
    const std::size_t ncomp = spec.components.size();
    const std::size_t per_comp = (m + ncomp - 1) / ncomp;

    Dataset out;
    out.input_dim = spec.embedding.size() != 0 ? static_cast<std::size_t>(spec.embedding.rows()) : spec.chart_dim();
    std::size_t max_label = 0;
    for (const auto& c : spec.components) max_label = std::max(max_label, c.label);
    out.num_classes = infer_classes(spec.num_classes, max_label);
    out.samples.reserve(m);
    std::vector<double> u(k);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t ci;
        if (spec.stratified) {
            ci = i % ncomp;
            u[0] = static_cast<double>(i / ncomp) / static_cast<double>(per_comp);
            for (std::size_t j = 1; j < k; ++j) u[j] = unit(rng);
        } else {
            ci = pick(rng);
            for (auto& v : u) v = unit(rng);
        }
        Vector p = evaluate_chart(spec.components[ci], u);
        if (spec.embedding.size() != 0) p = spec.embedding * p;
        out.samples.push_back({std::move(p), spec.components[ci].label});
    }
    out.covering = CoveringModel::manifold(spec.c_m, k);
    out.provenance = "synthetic manifold seed=" + std::to_string(spec.seed) + " m=" + std::to_string(m);
    return out;
}

// ---- IDX ---------------------------------------------------------------------------

IdxTensor load_idx(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 4) throw FormatError(path.string() + ": file shorter than the IDX magic", bytes.size());
    const std::uint32_t magic = read_be32(bytes, 0);
    const std::uint32_t ndims = magic & 0xFF;
    if ((magic & 0xFFFFFF00u) != 0x00000800u || ndims == 0 || ndims > 4)
        throw FormatError(path.string() + ": bad IDX magic 0x" + hex64(magic).substr(8), 0);
    IdxTensor t;
    std::size_t off = 4;
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
        if (off + 4 > bytes.size()) throw FormatError(path.string() + ": truncated IDX header", bytes.size());
        t.dims.push_back(read_be32(bytes, off));
        count *= t.dims.back();
        off += 4;
    }
    if (bytes.size() - off < count)
        throw FormatError(path.string() + ": IDX payload truncated, expected " + std::to_string(count) +
                              " bytes after the header",
                          bytes.size());
    t.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                  bytes.begin() + static_cast<std::ptrdiff_t>(off + count));
    return t;
}

void write_idx(const std::filesystem::path& path, const IdxTensor& t) {
    std::uint64_t count = 1;
    for (auto d : t.dims) count *= d;
    if (t.dims.empty() || t.dims.size() > 4 || count != t.data.size())
        throw InvalidInput("write_idx: dims do not match payload");
    std::vector<std::uint8_t> bytes;
    put_be32(bytes, 0x00000800u | static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_be32(bytes, d);
    bytes.insert(bytes.end(), t.data.begin(), t.data.end());
    write_file(path, bytes);
}

Dataset idx_to_dataset(const IdxTensor& images, const IdxTensor& labels, std::size_t num_classes) {
    if (images.dims.size() < 2) throw InvalidInput("IDX images need at least two dimensions");
    if (labels.dims.size() != 1) throw InvalidInput("IDX labels must be one-dimensional");
    const std::size_t n = images.dims[0];
    if (labels.dims[0] != n) throw InvalidInput("IDX image and label counts differ");
    const std::size_t dim = images.data.size() / std::max<std::size_t>(n, 1);
    Dataset out;
    out.input_dim = dim;
    out.num_classes = num_classes;
    out.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vector x(static_cast<Eigen::Index>(dim));
        for (std::size_t j = 0; j < dim; ++j) x[static_cast<Eigen::Index>(j)] = images.data[i * dim + j] / 255.0;
        if (labels.data[i] >= num_classes)
            throw FormatError("IDX label " + std::to_string(labels.data[i]) + " out of range", 8 + i);
        out.samples.push_back({std::move(x), labels.data[i]});
    }
    return out;
}

Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const IdxTensor img = load_idx(images);
    const IdxTensor lab = load_idx(labels);
    if (img.dims.size() != 3) throw FormatError(images.string() + ": expected magic 0x00000803", 0);
    if (lab.dims.size() != 1) throw FormatError(labels.string() + ": expected magic 0x00000801", 0);
    Dataset d = idx_to_dataset(img, lab, 10);
    d.provenance = "mnist " + file_fingerprint(images) + " " + file_fingerprint(labels);
    return d;
}

// ---- CIFAR-10 ------------------------------------------------------------------------

Dataset load_cifar10_bin(const std::filesystem::path& path, bool standardize) {
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
        throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of " +
                              std::to_string(kCifarRecordBytes),
                          bytes.size() - bytes.size() % kCifarRecordBytes);
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    Dataset out;
    out.input_dim = kCifarRecordBytes - 1;
    out.num_classes = 10;
    out.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = i * kCifarRecordBytes;
        if (bytes[base] >= 10)
            throw FormatError(path.string() + ": label " + std::to_string(bytes[base]) + " out of range", base);
        Vector x(static_cast<Eigen::Index>(out.input_dim));
        for (std::size_t j = 0; j < out.input_dim; ++j) x[static_cast<Eigen::Index>(j)] = bytes[base + 1 + j] / 255.0;
        out.samples.push_back({std::move(x), bytes[base]});
    }
    out.provenance = "cifar10 " + hex64(fnv1a(bytes));
    if (standardize) standardize_channels(out, 3);
    return out;
}

ChannelStats standardize_channels(Dataset& data, std::size_t channels) {
    if (channels == 0 || data.input_dim % channels != 0)
        throw InvalidInput("standardize: input dimension not divisible by channel count");
    if (data.empty()) throw InvalidInput("standardize: empty dataset");
    const std::size_t plane = data.input_dim / channels;
    ChannelStats st{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0)};
    const double count = static_cast<double>(plane * data.size());
    for (const auto& s : data.samples)
        for (std::size_t c = 0; c < channels; ++c)
            st.mean[c] += s.x.segment(static_cast<Eigen::Index>(c * plane), static_cast<Eigen::Index>(plane)).sum();
    for (auto& m : st.mean) m /= count;
    for (const auto& s : data.samples)
        for (std::size_t c = 0; c < channels; ++c)
            st.stddev[c] += (s.x.segment(static_cast<Eigen::Index>(c * plane), static_cast<Eigen::Index>(plane))
                                 .array() -
                             st.mean[c])
                                .square()
                                .sum();
    for (auto& v : st.stddev) v = std::sqrt(v / count);
    for (auto& s : data.samples)
        for (std::size_t c = 0; c < channels; ++c) {
            auto seg = s.x.segment(static_cast<Eigen::Index>(c * plane), static_cast<Eigen::Index>(plane));
            const double sd = st.stddev[c] > 0.0 ? st.stddev[c] : 1.0;
            seg = ((seg.array() - st.mean[c]) / sd).matrix();
        }
    return st;
}

// ---- container ----------------------------------------------------------------------

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
    std::vector<std::uint8_t> b;
    b.reserve(32 + data.size() * (data.input_dim * 8 + 4));
    for (char c : std::string("MLDS")) b.push_back(static_cast<std::uint8_t>(c));
    put_le<std::uint32_t>(b, kDatasetFormatVersion);
    put_le<std::uint64_t>(b, data.size());
    put_le<std::uint64_t>(b, data.input_dim);
    put_le<std::uint64_t>(b, data.num_classes);
    for (const auto& s : data.samples)
        for (Eigen::Index j = 0; j < s.x.size(); ++j) put_le<double>(b, s.x[j]);
    for (const auto& s : data.samples) put_le<std::uint32_t>(b, static_cast<std::uint32_t>(s.label));
    return b;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
    data.validate();
    write_file(path, encode_dataset(data));
}

Dataset load_dataset(const std::filesystem::path& path) {
    const auto b = read_file(path);
    const std::string what = path.string();
    if (b.size() < 4 || std::memcmp(b.data(), "MLDS", 4) != 0) throw FormatError(what + ": bad dataset magic", 0);
    std::size_t off = 4;
    const auto version = get_le<std::uint32_t>(b, off, what);
    if (version != kDatasetFormatVersion)
        throw FormatError(what + ": unsupported dataset version " + std::to_string(version), 4);
    Dataset d;
    const auto m = get_le<std::uint64_t>(b, off, what);
    d.input_dim = get_le<std::uint64_t>(b, off, what);
    d.num_classes = get_le<std::uint64_t>(b, off, what);
    const std::uint64_t need = m * (d.input_dim * 8 + 4);
    if (b.size() - off < need)
        throw FormatError(what + ": payload truncated, expected " + std::to_string(need) + " bytes", b.size());
    d.samples.resize(m);
    for (auto& s : d.samples) {
        s.x.resize(static_cast<Eigen::Index>(d.input_dim));
        for (Eigen::Index j = 0; j < s.x.size(); ++j) s.x[j] = get_le<double>(b, off, what);
    }
    for (auto& s : d.samples) s.label = get_le<std::uint32_t>(b, off, what);
    d.provenance = "file " + hex64(fnv1a(b));
    d.validate();
    return d;
}

std::string dataset_fingerprint(const Dataset& data) { return hex64(fnv1a(encode_dataset(data))); }

std::string file_fingerprint(const std::filesystem::path& path) { return hex64(fnv1a(read_file(path))); }

void save_dataset_sidecar(const Dataset& data, const std::filesystem::path& path) {
    nlohmann::json j = {{"format", "marginlab.dataset-sidecar"},
                        {"version", 1},
                        {"provenance", data.provenance},
                        {"fingerprint", dataset_fingerprint(data)},
                        {"m", data.size()},
                        {"input_dim", data.input_dim},
                        {"num_classes", data.num_classes}};
    if (data.covering) j["covering"] = covering_to_json(*data.covering);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

void load_dataset_sidecar(Dataset& data, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open sidecar '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
    if (j.contains("covering")) data.covering = covering_from_json(j["covering"]);
    data.provenance = j.value("provenance", data.provenance);
}

// ---- helpers ------------------------------------------------------------------------

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
    Dataset out;
    out.input_dim = data.input_dim;
    out.num_classes = data.num_classes;
    out.covering = data.covering;
    out.provenance = data.provenance;
    out.samples.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= data.size())
            throw InvalidInput("subset: index " + std::to_string(i) + " outside a dataset of " +
                               std::to_string(data.size()));
        out.samples.push_back(data.samples[i]);
    }
    return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, std::size_t first_count, std::uint64_t seed) {
    if (first_count > data.size()) throw InvalidInput("split: first part larger than the dataset");
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::span<const std::size_t> all(idx);
    return {subset(data, all.first(first_count)), subset(data, all.subspan(first_count))};
}

Vector augment_flip_crop(const Vector& image, std::size_t channels, std::size_t height, std::size_t width,
                         std::uint64_t seed) {
    if (image.size() != static_cast<Eigen::Index>(channels * height * width))
        throw InvalidInput("augment: image size does not match the shape");
    constexpr std::ptrdiff_t pad = 4;
    std::mt19937_64 rng(seed);
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    const auto dy = std::uniform_int_distribution<std::ptrdiff_t>(-pad, pad)(rng);
    const auto dx = std::uniform_int_distribution<std::ptrdiff_t>(-pad, pad)(rng);
    Vector out = Vector::Zero(image.size());
    const auto h = static_cast<std::ptrdiff_t>(height);
    const auto w = static_cast<std::ptrdiff_t>(width);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::ptrdiff_t r = 0; r < h; ++r)
            for (std::ptrdiff_t col = 0; col < w; ++col) {
                const std::ptrdiff_t sr = r + dy;
                std::ptrdiff_t sc = col + dx;
                if (sr < 0 || sr >= h || sc < 0 || sc >= w) continue;
                if (flip) sc = w - 1 - sc;
                out[static_cast<Eigen::Index>((static_cast<std::ptrdiff_t>(c) * h + r) * w + col)] =
                    image[static_cast<Eigen::Index>((static_cast<std::ptrdiff_t>(c) * h + sr) * w + sc)];
            }
    return out;
}

}  // namespace marginlab
