// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsgat/config.hpp"
#include "hsgat/gat.hpp"
#include "hsgat/objective.hpp"
#include "hsgat/seed.hpp"

namespace hsgat {

/// Uniform in +-sqrt(6 / (fan_in + fan_out)) with fan_in = cols, fan_out = rows.
inline Matrix glorot_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (rows == 0 || cols == 0) throw DimensionError("glorot_init: dimensions must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = dist(gen);
  return m;
}

/// Fresh Glorot-initialized parameters. Layer 0 maps in_dim to hidden_dim per
/// head (or straight to num_classes for a single layer); the output layer maps
/// heads * hidden_dim to num_classes.
inline ModelParams init_model(const TrainConfig& config, std::size_t in_dim,
                              std::size_t num_classes, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  std::size_t din = in_dim;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const bool last = l + 1 == config.layers;
    const std::size_t dout = last ? num_classes : config.hidden_dim;
    LayerParams lp;
    for (std::size_t h = 0; h < config.heads; ++h) {
      auto s = [&](std::uint64_t which) { return derive_seed(seed, {l, h, which}); };
      lp.heads.push_back({Tensor::parameter(glorot_init(dout, 2 * din, s(0))),
                          Tensor::parameter(glorot_init(dout, 1, s(1))),
                          Tensor::parameter(glorot_init(dout, din, s(2)))});
    }
    p.layers.push_back(std::move(lp));
    din = dout * config.heads;
  }
  return p;
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// One bias-corrected Adam update, theta -= lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(std::span<Tensor> params, std::span<const Matrix> grads, AdamState& state,
                      double lr) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.rows(), p.cols());
      state.second_moment.emplace_back(p.rows(), p.cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks a different parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(params[i].value()) || !state.first_moment[i].same_shape(grads[i])) {
      throw DimensionError("adam_step: gradient " + grads[i].shape_str() + " vs parameter " +
                           params[i].shape_str());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& theta = params[i].mutable_value();
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    const Matrix& g = grads[i];
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      theta[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.epsilon);
    }
  }
}

enum class Split { kTrain, kVal, kTest };

inline const std::vector<std::size_t>& split_indices(const NodeData& d, Split s) {
  switch (s) {
    case Split::kTrain: return d.train_idx;
    case Split::kVal: return d.val_idx;
    case Split::kTest: return d.test_idx;
  }
  return d.test_idx;
}

/// Row argmax; the lowest class index wins ties.
inline std::size_t argmax_row(const Matrix& logits, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c)
    if (logits(r, c) > logits(r, best)) best = c;
  return best;
}

inline double accuracy(const Matrix& logits, std::span<const std::size_t> labels,
                       std::span<const std::size_t> nodes) {
  if (nodes.empty()) throw ContractError("accuracy: empty split");
  std::size_t correct = 0;
  for (auto i : nodes) correct += argmax_row(logits, i) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

inline double evaluate(const DirectedEdgeIndex& idx, const NodeData& data,
                       const ModelParams& params, const TrainConfig& config, Split split) {
  const auto& nodes = split_indices(data, split);
  if (nodes.empty()) throw ContractError("evaluate: empty split");
  auto out = model_forward(idx, Tensor::constant(data.features), params, config);
  return accuracy(out.logits.value(), data.labels, nodes);
}

inline double evaluate(const Graph& g, const NodeData& data, const ModelParams& params,
                       const TrainConfig& config, Split split) {
  return evaluate(DirectedEdgeIndex::build(g), data, params, config, split);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double node_loss = 0.0;
  double edge_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["L_V"] = r.node_loss;
  j["L_E"] = r.edge_loss;
  j["train_acc"] = r.train_acc;
  j["val_acc"] = r.val_acc;
  return j;
}

/// One JSON object per line.
inline std::string history_jsonl(std::span<const EpochRecord> history) {
  std::string out;
  for (const auto& r : history) out += to_json(r).dump() + "\n";
  return out;
}

struct TrainResult {
  ModelParams params;  // parameters of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
};

/// Full-batch training with early stopping on validation accuracy (ties go
/// to the lower validation cross-entropy). `patience == 0` disables early
/// stopping.
inline TrainResult train(const Graph& graph, const NodeData& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  if (data.val_idx.empty()) throw ContractError("train: empty validation split");
  const auto idx = DirectedEdgeIndex::build(graph);
  const Tensor features = Tensor::constant(data.features);
  const auto edges = build_supervised_edges(graph, data, idx);

  TrainResult res;
  ModelParams params = init_model(config, data.feature_dim(), data.num_classes,
                                  derive_seed(config.seed, {stream(SeedStream::kInit)}));
  res.params = params.clone();
  auto tensors = params.parameters();
  AdamState adam;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool have_best = false;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (auto& t : tensors) t.zero_grad();
    EpochRecord rec;
    rec.epoch = epoch;
    {
      Tape tape;
      ForwardOptions fwd;
      fwd.training = true;
      fwd.dropout_seed = derive_seed(config.seed, {stream(SeedStream::kDropout), epoch});
      auto out = model_forward(idx, features, params, config, fwd);
      auto terms = objective_terms(out.logits, out.trace, data, edges, config.lambda, params,
                                   config.weight_decay);
      rec.node_loss = terms.node.item();
      rec.edge_loss = terms.edge.item();
      const double total = terms.total.item();
      if (!std::isfinite(total)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " (L_V=" << rec.node_loss
           << ", L_E=" << rec.edge_loss << ", total=" << total << ")";
        throw DivergenceError(os.str());
      }
      tape.backward(terms.total);
    }
    std::vector<Matrix> grads;
    grads.reserve(tensors.size());
    for (const auto& t : tensors) grads.push_back(t.grad());
    adam_step(tensors, grads, adam, config.learning_rate);

    auto eval = model_forward(idx, features, params, config);
    const Matrix& logits = eval.logits.value();
    rec.train_acc = accuracy(logits, data.labels, data.train_idx);
    rec.val_acc = accuracy(logits, data.labels, data.val_idx);
    NodeData val_view;
    val_view.labels = data.labels;
    val_view.num_classes = data.num_classes;
    val_view.train_idx = data.val_idx;
    const double val_loss = node_loss(eval.logits, val_view).item();
    res.history.push_back(rec);

    const bool improved = !have_best || rec.val_acc > res.best_val_acc ||
                          (rec.val_acc == res.best_val_acc && val_loss < best_val_loss);
    if (improved) {
      have_best = true;
      res.best_val_acc = rec.val_acc;
      best_val_loss = val_loss;
      res.best_epoch = epoch;
      res.params = params.clone();
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  for (auto& t : res.params.parameters()) t.zero_grad();
  return res;
}

}  // namespace hsgat
