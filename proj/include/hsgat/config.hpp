// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsgat/error.hpp"

namespace hsgat {

/// Hyperparameters for one training run. Defaults follow the benchmark setup:
/// Adam with weight decay 5e-5 and attention supervision weight 0.1.
struct TrainConfig {
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t hidden_dim = 8;
  double learning_rate = 0.005;
  double dropout = 0.5;
  double weight_decay = 5e-5;
  double lambda = 0.1;
  std::size_t epochs = 1000;
  std::size_t patience = 100;
  std::uint64_t seed = 0;
  double leaky_slope = 0.2;

  /// Throws ConfigError for combinations the model cannot run.
  void validate() const {
    if (layers != 1 && layers != 2) throw ConfigError("layers must be 1 or 2");
    if (heads == 0) throw ConfigError("heads must be positive");
    if (hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (epochs == 0) throw ConfigError("epochs must be positive");
  }
};

/// Hyperparameter ranges searched for the benchmark tables.
struct SearchGrid {
  std::vector<std::size_t> layers{1, 2};
  std::vector<std::size_t> heads{1, 4, 8};
  std::vector<std::size_t> hidden_dim{8, 16, 32, 64, 128};
  std::vector<double> learning_rate{0.001, 0.005};
  std::vector<double> dropout{0.0, 0.2, 0.5};

  std::size_t size() const {
    return layers.size() * heads.size() * hidden_dim.size() * learning_rate.size() *
           dropout.size();
  }

  /// Cartesian product over `base`, in lexicographic order of the fields above.
  std::vector<TrainConfig> expand(const TrainConfig& base) const {
    std::vector<TrainConfig> out;
    for (auto l : layers)
      for (auto h : heads)
        for (auto d : hidden_dim)
          for (auto lr : learning_rate)
            for (auto p : dropout) {
              TrainConfig c = base;
              c.layers = l;
              c.heads = h;
              c.hidden_dim = d;
              c.learning_rate = lr;
              c.dropout = p;
              out.push_back(c);
            }
    return out;
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["hidden_dim"] = c.hidden_dim;
  j["learning_rate"] = c.learning_rate;
  j["dropout"] = c.dropout;
  j["weight_decay"] = c.weight_decay;
  j["lambda"] = c.lambda;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["leaky_slope"] = c.leaky_slope;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  return c;
}

}  // namespace hsgat
