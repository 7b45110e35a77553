// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsgat/error.hpp"
#include "hsgat/tensor.hpp"

namespace hsgat {

/// Undirected edge stored once with u < v.
struct Edge {
  std::size_t u = 0;
  std::size_t v = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Immutable undirected simple graph. Edges are kept once (u < v) in sorted
/// order; adjacency materializes both directions in CSR form. Self-loops are
/// never stored: `self_loops_added` tells message passing to use the closed
/// neighbourhood.
class Graph {
 public:
  Graph() = default;

  /// Builds from an arbitrary edge list. Throws on self-loops, duplicates
  /// (in either orientation) or out-of-range endpoints.
  static Graph from_edges(std::size_t num_nodes, std::vector<Edge> edges,
                          bool self_loops_added = true) {
    for (auto& e : edges) {
      if (e.u == e.v) {
        throw ContractError("self-loop (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                            ") is not allowed");
      }
      if (e.u >= num_nodes || e.v >= num_nodes) {
        throw ContractError("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                            ") references a node >= " + std::to_string(num_nodes));
      }
      if (e.u > e.v) std::swap(e.u, e.v);
    }
    std::sort(edges.begin(), edges.end());
    auto dup = std::adjacent_find(edges.begin(), edges.end());
    if (dup != edges.end()) {
      throw ContractError("duplicate edge (" + std::to_string(dup->u) + "," +
                          std::to_string(dup->v) + ")");
    }
    Graph g;
    g.num_nodes_ = num_nodes;
    g.edges_ = std::move(edges);
    g.self_loops_added_ = self_loops_added;
    g.build_adjacency();
    return g;
  }

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  bool self_loops_added() const { return self_loops_added_; }

  /// Sorted neighbour indices of `i` (open neighbourhood).
  std::span<const std::size_t> neighbors(std::size_t i) const {
    return {neighbors_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  /// Index into edges() for each entry of neighbors(i).
  std::span<const std::size_t> neighbor_edge_ids(std::size_t i) const {
    return {edge_ids_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

  bool has_edge(std::size_t a, std::size_t b) const {
    if (a >= num_nodes_ || b >= num_nodes_) return false;
    auto nb = neighbors(a);
    return std::binary_search(nb.begin(), nb.end(), b);
  }

 private:
  void build_adjacency() {
    offsets_.assign(num_nodes_ + 1, 0);
    for (const auto& e : edges_) {
      ++offsets_[e.u + 1];
      ++offsets_[e.v + 1];
    }
    for (std::size_t i = 0; i < num_nodes_; ++i) offsets_[i + 1] += offsets_[i];
    std::vector<std::pair<std::size_t, std::size_t>> tmp(2 * edges_.size());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t id = 0; id < edges_.size(); ++id) {
      const auto& e = edges_[id];
      tmp[fill[e.u]++] = {e.v, id};
      tmp[fill[e.v]++] = {e.u, id};
    }
    for (std::size_t i = 0; i < num_nodes_; ++i)
      std::sort(tmp.begin() + offsets_[i], tmp.begin() + offsets_[i + 1]);
    neighbors_.resize(tmp.size());
    edge_ids_.resize(tmp.size());
    for (std::size_t k = 0; k < tmp.size(); ++k) {
      neighbors_[k] = tmp[k].first;
      edge_ids_[k] = tmp[k].second;
    }
  }

  std::size_t num_nodes_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> neighbors_;
  std::vector<std::size_t> edge_ids_;
  bool self_loops_added_ = true;
};

/// Node features, labels in [0, num_classes), and disjoint splits.
struct NodeData {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::vector<std::size_t> test_idx;

  std::size_t num_nodes() const { return labels.size(); }
  std::size_t feature_dim() const { return features.cols(); }

  /// Throws ContractError when an invariant does not hold.
  void validate() const {
    const std::size_t n = labels.size();
    if (features.rows() != n) {
      throw ContractError("features have " + std::to_string(features.rows()) + " rows but " +
                          std::to_string(n) + " labels");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] >= num_classes) {
        throw ContractError("label " + std::to_string(labels[i]) + " of node " +
                            std::to_string(i) + " >= num_classes " + std::to_string(num_classes));
      }
    }
    std::vector<char> seen(n, 0);
    for (const auto* split : {&train_idx, &val_idx, &test_idx}) {
      for (auto i : *split) {
        if (i >= n) throw ContractError("split index " + std::to_string(i) + " >= num_nodes");
        if (seen[i]) throw ContractError("node " + std::to_string(i) + " appears in two splits");
        seen[i] = 1;
      }
    }
  }
};

inline void check_labels(const Graph& g, std::span<const std::size_t> labels) {
  if (labels.size() != g.num_nodes()) {
    throw DimensionError("labels length " + std::to_string(labels.size()) + " != num_nodes " +
                         std::to_string(g.num_nodes()));
  }
}

/// Fraction of edges whose endpoints share a label; each undirected edge
/// counts once.
inline double edge_homophily(const Graph& g, std::span<const std::size_t> labels) {
  check_labels(g, labels);
  if (g.num_edges() == 0) throw ContractError("homophily undefined on edgeless graph");
  std::size_t intra = 0;
  for (const auto& e : g.edges()) intra += labels[e.u] == labels[e.v] ? 1 : 0;
  return static_cast<double>(intra) / static_cast<double>(g.num_edges());
}

struct EdgePartition {
  std::vector<Edge> intra;
  std::vector<Edge> inter;
};

inline EdgePartition partition_edges(const Graph& g, std::span<const std::size_t> labels) {
  check_labels(g, labels);
  EdgePartition p;
  for (const auto& e : g.edges()) (labels[e.u] == labels[e.v] ? p.intra : p.inter).push_back(e);
  return p;
}

/// round(k * |E_inter|), half rounded up.
inline std::size_t inter_edges_to_remove(double k, std::size_t num_inter) {
  return static_cast<std::size_t>(std::floor(k * static_cast<double>(num_inter) + 0.5));
}

/// Drops round(k * |E_inter|) inter-class edges chosen uniformly under `seed`.
/// Intra-class edges are untouched.
inline Graph remove_inter_class_edges(const Graph& g, std::span<const std::size_t> labels, double k,
                                      std::uint64_t seed) {
  if (!(k >= 0.0 && k <= 1.0)) throw RangeError("k must lie in [0, 1]");
  auto part = partition_edges(g, labels);
  const std::size_t remove = inter_edges_to_remove(k, part.inter.size());
  std::mt19937_64 gen(seed);
  std::shuffle(part.inter.begin(), part.inter.end(), gen);
  std::vector<Edge> kept = std::move(part.intra);
  kept.insert(kept.end(), part.inter.begin() + static_cast<std::ptrdiff_t>(remove),
              part.inter.end());
  return Graph::from_edges(g.num_nodes(), std::move(kept), g.self_loops_added());
}

struct SbmParams {
  std::size_t num_nodes = 400;
  std::size_t num_classes = 4;
  double p_intra = 0.05;
  double p_inter = 0.01;
  std::size_t feature_dim = 16;
  double feature_noise = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  Graph graph;
  NodeData data;
};

/// Stochastic block model with equal blocks (node i is in block i / block_size).
/// Features: one-hot class prototype (class c sets column c mod feature_dim)
/// plus N(0, feature_noise^2) noise. Splits are 30/10/60% within each class.
inline SyntheticDataset generate_sbm(const SbmParams& p) {
  auto prob_ok = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!prob_ok(p.p_intra) || !prob_ok(p.p_inter)) throw RangeError("SBM probability outside [0, 1]");
  if (p.num_classes < 2) throw RangeError("SBM needs at least two classes");
  if (p.num_nodes == 0 || p.num_nodes % p.num_classes != 0) {
    throw RangeError("SBM num_nodes must be a positive multiple of num_classes");
  }
  if (p.feature_dim == 0) throw RangeError("SBM feature_dim must be positive");
  if (p.feature_noise < 0.0) throw RangeError("SBM feature_noise must be non-negative");

  const std::size_t n = p.num_nodes;
  const std::size_t block = n / p.num_classes;
  std::mt19937_64 gen(p.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SyntheticDataset out;
  auto& d = out.data;
  d.num_classes = p.num_classes;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = i / block;

  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double prob = d.labels[i] == d.labels[j] ? p.p_intra : p.p_inter;
      if (unif(gen) < prob) edges.push_back({i, j});
    }
  }
  out.graph = Graph::from_edges(n, std::move(edges));

  std::normal_distribution<double> noise(0.0, 1.0);
  d.features = Matrix(n, p.feature_dim);
  for (std::size_t i = 0; i < n; ++i) {
    d.features(i, d.labels[i] % p.feature_dim) = 1.0;
    if (p.feature_noise > 0.0)
      for (std::size_t c = 0; c < p.feature_dim; ++c) d.features(i, c) += p.feature_noise * noise(gen);
  }

  const std::size_t n_train = static_cast<std::size_t>(std::llround(0.3 * static_cast<double>(block)));
  const std::size_t n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(block)));
  for (std::size_t c = 0; c < p.num_classes; ++c) {
    std::vector<std::size_t> members(block);
    for (std::size_t k = 0; k < block; ++k) members[k] = c * block + k;
    std::shuffle(members.begin(), members.end(), gen);
    for (std::size_t k = 0; k < block; ++k) {
      auto& split = k < n_train ? d.train_idx : (k < n_train + n_val ? d.val_idx : d.test_idx);
      split.push_back(members[k]);
    }
  }
  for (auto* s : {&d.train_idx, &d.val_idx, &d.test_idx}) std::sort(s->begin(), s->end());
  return out;
}

}  // namespace hsgat
