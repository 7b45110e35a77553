// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training objective  L = L_V + lambda * L_E + weight_decay * sum ||theta||^2
//
//   L_V  mean cross-entropy of the training nodes
//   L_E  binary cross-entropy between sigmoid(e_ij) and the edge label
//        1[y_i == y_j], over directed entries whose endpoints are both
//        training nodes; averaged over heads, entries and layers

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "hsgat/gat.hpp"
#include "hsgat/graph.hpp"
#include "hsgat/tensor.hpp"

namespace hsgat {

struct SupervisedEdgeSet {
  std::vector<std::size_t> entries;  // into DirectedEdgeIndex, self-loops excluded
  std::vector<double> labels;        // 1 intra-class, 0 inter-class

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

inline std::vector<char> membership(std::size_t n, std::span<const std::size_t> idx) {
  std::vector<char> in(n, 0);
  for (auto i : idx) in.at(i) = 1;
  return in;
}

inline SupervisedEdgeSet build_supervised_edges(const NodeData& data, const DirectedEdgeIndex& idx) {
  const auto train = membership(idx.num_nodes, data.train_idx);
  SupervisedEdgeSet s;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx.is_self_loop(k)) continue;
    const auto t = idx.targets[k], src = idx.sources[k];
    if (!train[t] || !train[src]) continue;
    s.entries.push_back(k);
    s.labels.push_back(data.labels[t] == data.labels[src] ? 1.0 : 0.0);
  }
  return s;
}

inline SupervisedEdgeSet build_supervised_edges(const Graph& g, const NodeData& data,
                                                const DirectedEdgeIndex& idx) {
  if (idx.num_nodes != g.num_nodes()) throw DimensionError("edge index does not match graph");
  return build_supervised_edges(data, idx);
}

/// -(1/|V_train|) sum_i log softmax(logits_i)[y_i]
inline Tensor node_loss(const Tensor& logits, const NodeData& data) {
  if (data.train_idx.empty()) throw ContractError("node_loss: empty training set");
  if (logits.rows() != data.num_nodes() || logits.cols() != data.num_classes) {
    throw DimensionError("node_loss: logits " + logits.shape_str() + " for " +
                         std::to_string(data.num_nodes()) + " nodes, " +
                         std::to_string(data.num_classes) + " classes");
  }
  std::vector<std::size_t> cls;
  cls.reserve(data.train_idx.size());
  for (auto i : data.train_idx) cls.push_back(data.labels[i]);
  return scale(mean(pick(log_softmax_rows(logits), data.train_idx, cls)), -1.0);
}

/// Zero (a constant) when the supervised set is empty.
inline Tensor edge_loss(const ForwardTrace& trace, const SupervisedEdgeSet& edges) {
  if (edges.empty() || trace.layers.empty()) return Tensor::scalar(0.0);
  std::vector<Tensor> per_layer;
  for (const auto& layer : trace.layers) {
    std::vector<Tensor> per_head;
    for (const auto& e : layer.scores)
      per_head.push_back(mean(bce_with_logits(gather_rows(e, edges.entries), edges.labels)));
    Tensor acc = per_head.front();
    for (std::size_t h = 1; h < per_head.size(); ++h) acc = add(acc, per_head[h]);
    per_layer.push_back(scale(acc, 1.0 / static_cast<double>(per_head.size())));
  }
  Tensor acc = per_layer.front();
  for (std::size_t l = 1; l < per_layer.size(); ++l) acc = add(acc, per_layer[l]);
  return scale(acc, 1.0 / static_cast<double>(per_layer.size()));
}

inline Tensor l2_penalty(const ModelParams& params) {
  auto ps = params.parameters();
  if (ps.empty()) return Tensor::scalar(0.0);
  Tensor acc = sum_squares(ps.front());
  for (std::size_t i = 1; i < ps.size(); ++i) acc = add(acc, sum_squares(ps[i]));
  return acc;
}

struct ObjectiveTerms {
  Tensor total;
  Tensor node;
  Tensor edge;
};

inline ObjectiveTerms objective_terms(const Tensor& logits, const ForwardTrace& trace,
                                      const NodeData& data, const SupervisedEdgeSet& edges,
                                      double lambda, const ModelParams& params,
                                      double weight_decay) {
  if (lambda < 0.0) throw RangeError("lambda must be non-negative");
  if (weight_decay < 0.0) throw RangeError("weight_decay must be non-negative");
  ObjectiveTerms t;
  t.node = node_loss(logits, data);
  t.edge = edge_loss(trace, edges);
  t.total = t.node;
  if (lambda > 0.0) t.total = add(t.total, scale(t.edge, lambda));
  if (weight_decay > 0.0) t.total = add(t.total, scale(l2_penalty(params), weight_decay));
  return t;
}

inline Tensor total_loss(const Tensor& logits, const ForwardTrace& trace, const NodeData& data,
                         const SupervisedEdgeSet& edges, double lambda, const ModelParams& params,
                         double weight_decay) {
  return objective_terms(logits, trace, data, edges, lambda, params, weight_decay).total;
}

/// Per node, the norm of the attention-weighted message arriving over
/// inter-class entries at `layer`; per-head norms are averaged.
inline std::vector<double> noise_norm(const ForwardTrace& trace, std::span<const std::size_t> labels,
                                      const DirectedEdgeIndex& idx, std::size_t layer) {
  const auto& lt = trace.layers.at(layer);
  const std::size_t n = idx.num_nodes;
  std::vector<double> out(n, 0.0);
  const std::size_t heads = lt.alpha.size();
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix& alpha = lt.alpha[h].value();
    const Matrix& values = lt.values[h].value();
    const std::size_t d = values.cols();
    Matrix noise(n, d);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto t = idx.targets[k], s = idx.sources[k];
      if (labels[t] == labels[s]) continue;
      for (std::size_t c = 0; c < d; ++c) noise(t, c) += alpha[k] * values(s, c);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) sq += noise(i, c) * noise(i, c);
      out[i] += std::sqrt(sq) / static_cast<double>(heads);
    }
  }
  return out;
}

}  // namespace hsgat
