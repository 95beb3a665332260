#pragma once

#include "marginlab/network.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

using namespace marginlab;

inline Network linear_net(const Matrix& w, const Vector& b, HeadKind head = HeadKind::linear) {
    return Network(static_cast<std::size_t>(w.cols()), {HeadLayer{head, w, b}});
}

inline Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("marginlab_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace testing
