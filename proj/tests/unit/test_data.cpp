#include "helpers.hpp"

#include "marginlab/data.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace marginlab;
using testing::vec;

namespace {

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("GMM sampling") {
    GmmSpec one;
    one.components = {{vec({1, 2}), Matrix::Zero(2, 1), 0}};
    one.num_classes = 1;
    for (const auto& s : sample_gmm(one, 10).samples) CHECK(s.x == vec({1, 2}));

    GmmSpec two;
    two.seed = 3;
    two.components = {{vec({10, 0}), (Matrix(2, 1) << 0, 1).finished(), 0},
                      {vec({-10, 0}), (Matrix(2, 1) << 0, 1).finished(), 1}};
    const Dataset d = sample_gmm(two, 200);
    double gap = 1e300;
    for (const auto& a : d.samples)
        for (const auto& b : d.samples)
            if (a.label != b.label) gap = std::min(gap, std::abs(a.x[0] - b.x[0]));
    CHECK(gap >= 5.0);
    CHECK(dataset_fingerprint(d) == dataset_fingerprint(sample_gmm(two, 200)));
    two.seed = 4;
    CHECK(dataset_fingerprint(d) != dataset_fingerprint(sample_gmm(two, 200)));
    REQUIRE(d.covering);
    CHECK(d.covering->kind == CoveringKind::gmm);

    GmmSpec bad = two;
    bad.components[1].mean = vec({1, 2, 3});
    CHECK_THROWS_AS(sample_gmm(bad, 5), InvalidInput);
}

TEST_CASE("manifold sampling") {
    ManifoldSpec circle;
    circle.components = {ManifoldComponent{}};
    circle.stratified = true;
    circle.num_classes = 1;
    const Dataset d = sample_manifold(circle, 4);
    const double pts[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    for (int i = 0; i < 4; ++i) {
        CHECK(std::abs(d.samples[i].x[0] - pts[i][0]) <= 1e-12);
        CHECK(std::abs(d.samples[i].x[1] - pts[i][1]) <= 1e-12);
    }

    // Radii 1 and 2: any boundary crosses the gap, and every point of the
    // middle circle is within about 0.5 of a sample.
    ManifoldSpec rings;
    rings.components = {ManifoldComponent{ChartKind::circle, {1.0}, {}, 2, 0.0, 0},
                        ManifoldComponent{ChartKind::circle, {2.0}, {}, 2, 0.0, 1}};
    const Dataset r = sample_manifold(rings, 100);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
        const double th = 2 * 3.141592653589793 * i / 200;
        const Vector mid = vec({1.5 * std::cos(th), 1.5 * std::sin(th)});
        double nearest = 1e300;
        for (const auto& s : r.samples) nearest = std::min(nearest, (s.x - mid).norm());
        worst = std::max(worst, nearest);
    }
    CHECK(worst <= 0.5 + 0.1);
    REQUIRE(r.covering);
    CHECK(r.covering->kind == CoveringKind::manifold);
}

TEST_CASE("IDX round trip and errors") {
    testing::TempDir dir("idx");
    IdxTensor img{{4, 2, 3}, {}};
    for (int i = 0; i < 24; ++i) img.data.push_back(static_cast<std::uint8_t>(i * 10));
    IdxTensor lab{{4}, {1, 0, 7, 9}};
    write_idx(dir.path / "img", img);
    write_idx(dir.path / "lab", lab);
    const IdxTensor back = load_idx(dir.path / "img");
    CHECK(back.dims == img.dims);
    CHECK(back.data == img.data);
    const Dataset d = load_mnist(dir.path / "img", dir.path / "lab");
    CHECK(d.size() == 4);
    CHECK(d.input_dim == 6);
    CHECK(d.samples[2].label == 7);
    CHECK(d.samples[0].x[1] == doctest::Approx(10.0 / 255.0));

    std::vector<std::uint8_t> b;
    put_be32(b, 0x00000803);
    put_be32(b, 1);
    put_be32(b, 28);
    put_be32(b, 28);
    b.resize(b.size() + 784, 0);
    write_bytes(dir.path / "ok", b);
    CHECK(load_idx(dir.path / "ok").dims == std::vector<std::uint32_t>{1, 28, 28});

    b.resize(16 + 100);
    write_bytes(dir.path / "short", b);
    try {
        load_idx(dir.path / "short");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == 116);
    }
    std::vector<std::uint8_t> bad;
    put_be32(bad, 0x00000903);
    write_bytes(dir.path / "magic", bad);
    CHECK_THROWS_AS(load_idx(dir.path / "magic"), FormatError);
}

TEST_CASE("CIFAR-10 binary records") {
    testing::TempDir dir("cifar");
    std::vector<std::uint8_t> rec(kCifarRecordBytes, 128);
    rec[0] = 7;
    write_bytes(dir.path / "one.bin", rec);
    const Dataset d = load_cifar10_bin(dir.path / "one.bin");
    CHECK(d.size() == 1);
    CHECK(d.samples[0].label == 7);
    CHECK(d.input_dim == 3072);

    rec.push_back(3);
    write_bytes(dir.path / "trunc.bin", rec);
    try {
        load_cifar10_bin(dir.path / "trunc.bin");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == kCifarRecordBytes);
    }
}

TEST_CASE("dataset container and sidecar") {
    testing::TempDir dir("mlds");
    GmmSpec g;
    g.seed = 9;
    g.components = {{vec({1, 0}), Matrix::Identity(2, 2), 0}, {vec({-1, 0}), Matrix::Identity(2, 2), 1}};
    g.rank = 2;
    const Dataset d = sample_gmm(g, 25);
    save_dataset(d, dir.path / "d.mlds");
    save_dataset_sidecar(d, dir.path / "d.json");
    Dataset back = load_dataset(dir.path / "d.mlds");
    load_dataset_sidecar(back, dir.path / "d.json");
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back.samples[i].x == d.samples[i].x);
        CHECK(back.samples[i].label == d.samples[i].label);
    }
    CHECK(back.covering->k == 2);
    CHECK(file_fingerprint(dir.path / "d.mlds") == dataset_fingerprint(d));

    auto bytes = encode_dataset(d);
    bytes[0] = 'X';
    write_bytes(dir.path / "bad.mlds", bytes);
    CHECK_THROWS_AS(load_dataset(dir.path / "bad.mlds"), FormatError);
}

TEST_CASE("split and subset") {
    GmmSpec g;
    g.components = {{vec({0}), Matrix::Identity(1, 1), 0}, {vec({3}), Matrix::Identity(1, 1), 1}};
    const Dataset d = sample_gmm(g, 20);
    const auto [a, b] = split(d, 15, 1);
    CHECK(a.size() == 15);
    CHECK(b.size() == 5);
    const std::vector<std::size_t> idx{3, 1};
    const Dataset s = subset(d, idx);
    CHECK(s.samples[0].x == d.samples[3].x);
    const std::vector<std::size_t> oob{40};
    CHECK_THROWS_AS(subset(d, oob), InvalidInput);
}
