// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON checkpoints: {"layer0/head0/W2": {"shape": [r, c], "values": [...]}, ...}
// Doubles are written in shortest round-trip form, so load(save(p)) == p.

#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <string>

#include "json.hpp"

#include "hsgat/gat.hpp"

namespace hsgat {

inline nlohmann::ordered_json checkpoint_to_json(const ModelParams& params) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& np : params.named_parameters()) {
    const Matrix& m = np.tensor.value();
    j[np.path] = {{"shape", {m.rows(), m.cols()}}, {"values", m.values()}};
  }
  return j;
}

inline ModelParams checkpoint_from_json(const nlohmann::ordered_json& j) {
  static const std::regex key_re(R"(layer(\d+)/head(\d+)/(W2|a|W))");
  // layer -> head -> name -> matrix
  std::map<std::size_t, std::map<std::size_t, std::map<std::string, Matrix>>> parts;
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::smatch m;
    const std::string key = it.key();
    if (!std::regex_match(key, m, key_re)) throw LoadError("checkpoint: unknown parameter '" + key + "'");
    std::vector<std::size_t> shape;
    std::vector<double> values;
    try {
      shape = it.value().at("shape").get<std::vector<std::size_t>>();
      values = it.value().at("values").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("checkpoint: '" + key + "': " + e.what());
    }
    if (shape.size() != 2) throw LoadError("checkpoint: '" + key + "' shape must have two dims");
    try {
      parts[std::stoul(m[1])][std::stoul(m[2])][m[3]] = Matrix(shape[0], shape[1], std::move(values));
    } catch (const DimensionError& e) {
      throw LoadError("checkpoint: '" + key + "': " + e.what());
    }
  }
  ModelParams params;
  std::size_t expect_layer = 0;
  for (auto& [l, heads] : parts) {
    if (l != expect_layer++) throw LoadError("checkpoint: layers are not contiguous");
    LayerParams lp;
    std::size_t expect_head = 0;
    for (auto& [h, named] : heads) {
      if (h != expect_head++) throw LoadError("checkpoint: heads are not contiguous");
      if (named.size() != 3) throw LoadError("checkpoint: head is missing W2, a or W");
      lp.heads.push_back({Tensor::parameter(std::move(named["W2"])),
                          Tensor::parameter(std::move(named["a"])),
                          Tensor::parameter(std::move(named["W"]))});
    }
    try {
      lp.check_shapes();
    } catch (const DimensionError& e) {
      throw LoadError(std::string("checkpoint: ") + e.what());
    }
    params.layers.push_back(std::move(lp));
  }
  return params;
}

inline void save_checkpoint(const std::filesystem::path& file, const ModelParams& params) {
  std::ofstream out(file);
  if (!out) throw LoadError(file.string() + ": cannot open for writing");
  out << checkpoint_to_json(params).dump() << '\n';
}

inline ModelParams load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string() + ": cannot open file");
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(file.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace hsgat
