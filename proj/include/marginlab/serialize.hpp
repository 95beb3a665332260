#pragma once

#include "marginlab/network.hpp"

#include <filesystem>
#include <json.hpp>

namespace marginlab {

inline constexpr int kNetworkFormatVersion = 1;

/// Versioned JSON document: {"format","version","input_dim","num_classes",
/// "layers":[...]} with row-major weight arrays. Doubles are written in
/// shortest round-trip form, so save/load is bit-exact.
nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& doc);

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what);

}  // namespace marginlab
