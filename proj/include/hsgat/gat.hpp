// SPDX-License-Identifier: Apache-2.0
#pragma once

// GATv2 layers over a directed view of the graph.
//
// For a directed entry i <- j the un-normalized score is
//   e_ij = a^T LeakyReLU(W2 [h_i || h_j])
// which is evaluated as a^T LeakyReLU(W2_l h_i + W2_r h_j) with W2 split by
// columns, so the E' x 2d concatenation is never materialized. Scores are
// softmax-normalized over each target's closed neighbourhood and used to
// weight the value transform W h_j.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsgat/config.hpp"
#include "hsgat/graph.hpp"
#include "hsgat/seed.hpp"
#include "hsgat/tensor.hpp"

namespace hsgat {

/// Directed message-passing entries sorted by (target, source): both
/// orientations of every edge plus one self-loop per node when the graph
/// asks for closed neighbourhoods.
struct DirectedEdgeIndex {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> targets;
  std::vector<std::size_t> sources;
  /// Index into Graph::edges(); empty for self-loops.
  std::vector<std::optional<std::size_t>> undirected_origin;

  std::size_t size() const { return targets.size(); }
  bool is_self_loop(std::size_t k) const { return !undirected_origin[k].has_value(); }

  static DirectedEdgeIndex build(const Graph& g) {
    DirectedEdgeIndex idx;
    idx.num_nodes = g.num_nodes();
    const std::size_t total = 2 * g.num_edges() + (g.self_loops_added() ? g.num_nodes() : 0);
    idx.targets.reserve(total);
    idx.sources.reserve(total);
    idx.undirected_origin.reserve(total);
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
      auto nb = g.neighbors(i);
      auto ids = g.neighbor_edge_ids(i);
      bool self_done = !g.self_loops_added();
      for (std::size_t k = 0; k <= nb.size(); ++k) {
        if (!self_done && (k == nb.size() || nb[k] > i)) {
          idx.targets.push_back(i);
          idx.sources.push_back(i);
          idx.undirected_origin.push_back(std::nullopt);
          self_done = true;
        }
        if (k == nb.size()) break;
        idx.targets.push_back(i);
        idx.sources.push_back(nb[k]);
        idx.undirected_origin.push_back(ids[k]);
      }
    }
    return idx;
  }
};

/// Keep-mask that zeroes attention on every inter-class entry.
inline std::vector<char> intra_class_mask(const DirectedEdgeIndex& idx,
                                          std::span<const std::size_t> labels) {
  std::vector<char> keep(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k)
    keep[k] = labels[idx.targets[k]] == labels[idx.sources[k]] ? 1 : 0;
  return keep;
}

struct HeadParams {
  Tensor attn_weight;   // W2: d_out x 2 d_in
  Tensor attn_vector;   // a:  d_out x 1
  Tensor value_weight;  // W:  d_out x d_in
};

struct LayerParams {
  std::vector<HeadParams> heads;

  std::size_t in_dim() const { return heads.front().value_weight.cols(); }
  std::size_t out_dim() const { return heads.front().value_weight.rows(); }

  void check_shapes() const {
    if (heads.empty()) throw DimensionError("layer has no heads");
    const std::size_t din = in_dim(), dout = out_dim();
    for (const auto& h : heads) {
      if (h.attn_weight.rows() != dout || h.attn_weight.cols() != 2 * din ||
          h.attn_vector.rows() != dout || h.attn_vector.cols() != 1 ||
          h.value_weight.rows() != dout || h.value_weight.cols() != din) {
        throw DimensionError("inconsistent head shapes: W2 " + h.attn_weight.shape_str() +
                             ", a " + h.attn_vector.shape_str() + ", W " +
                             h.value_weight.shape_str());
      }
    }
  }
};

struct NamedParameter {
  std::string path;
  Tensor tensor;
};

struct ModelParams {
  std::vector<LayerParams> layers;

  /// Paths look like "layer0/head3/W2"; order is layer, head, {W2, a, W}.
  std::vector<NamedParameter> named_parameters() const {
    std::vector<NamedParameter> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t h = 0; h < layers[l].heads.size(); ++h) {
        const auto prefix = "layer" + std::to_string(l) + "/head" + std::to_string(h) + "/";
        const auto& hp = layers[l].heads[h];
        out.push_back({prefix + "W2", hp.attn_weight});
        out.push_back({prefix + "a", hp.attn_vector});
        out.push_back({prefix + "W", hp.value_weight});
      }
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& np : named_parameters()) out.push_back(np.tensor);
    return out;
  }

  /// Deep copy; the copy shares no storage with *this.
  ModelParams clone() const {
    ModelParams c;
    for (const auto& l : layers) {
      LayerParams lp;
      for (const auto& h : l.heads)
        lp.heads.push_back({h.attn_weight.clone(), h.attn_vector.clone(), h.value_weight.clone()});
      c.layers.push_back(std::move(lp));
    }
    return c;
  }
};

struct LayerTrace {
  Tensor input;                 // layer input after feature dropout
  std::vector<Tensor> scores;   // per head, E' x 1 un-normalized e
  std::vector<Tensor> alpha;    // per head, E' x 1 normalized (before attention dropout)
  std::vector<Tensor> values;   // per head, N x d_out rows W h_j
  Tensor output;
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
};

struct LayerOptions {
  bool concat_heads = true;  // false: average heads
  bool elu_activation = true;
  bool training = false;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  double leaky_slope = 0.2;
  std::span<const char> keep_mask{};
};

/// e_k = a^T LeakyReLU(P_t[target_k] + P_s[source_k]) from per-node projections
/// P_t = h W2_l^T and P_s = h W2_r^T.
inline Tensor scores_from_projections(const Tensor& target_part, const Tensor& source_part,
                                      const Tensor& attn_vector, const DirectedEdgeIndex& idx,
                                      double leaky_slope) {
  Tensor z = add(gather_rows(target_part, idx.targets), gather_rows(source_part, idx.sources));
  return matmul(leaky_relu(z, leaky_slope), attn_vector);
}

inline Tensor unnormalized_scores(const Tensor& h, const LayerParams& params,
                                  const DirectedEdgeIndex& idx, std::size_t head,
                                  double leaky_slope = 0.2) {
  const auto& hp = params.heads.at(head);
  const std::size_t din = h.cols();
  if (hp.attn_weight.cols() != 2 * din) {
    throw DimensionError("unnormalized_scores: h " + h.shape_str() + " vs W2 " +
                         hp.attn_weight.shape_str());
  }
  if (h.rows() != idx.num_nodes) {
    throw DimensionError("unnormalized_scores: h has " + std::to_string(h.rows()) +
                         " rows, index has " + std::to_string(idx.num_nodes) + " nodes");
  }
  Tensor target_part = matmul_transposed(h, slice_cols(hp.attn_weight, 0, din));
  Tensor source_part = matmul_transposed(h, slice_cols(hp.attn_weight, din, 2 * din));
  return scores_from_projections(target_part, source_part, hp.attn_vector, idx, leaky_slope);
}

struct LayerResult {
  Tensor output;
  LayerTrace trace;
};

inline LayerResult layer_forward(const Tensor& h_in, const LayerParams& params,
                                 const DirectedEdgeIndex& idx, const LayerOptions& opt) {
  params.check_shapes();
  if (h_in.cols() != params.in_dim()) {
    throw DimensionError("layer_forward: input " + h_in.shape_str() + " vs in_dim " +
                         std::to_string(params.in_dim()));
  }
  const std::size_t n = idx.num_nodes;
  LayerResult res;
  Tensor h = dropout(h_in, opt.dropout, derive_seed(opt.seed, {0}), opt.training);
  res.trace.input = h;

  if (h.rows() != n) {
    throw DimensionError("layer_forward: input has " + std::to_string(h.rows()) +
                         " rows, index has " + std::to_string(n) + " nodes");
  }
  // One pass over the (possibly sparse) input for every head: rows of the
  // stacked weight are [W2_l; W2_r; W] per head.
  const std::size_t din = params.in_dim(), dout = params.out_dim();
  std::vector<Tensor> blocks;
  for (const auto& hp : params.heads) {
    blocks.push_back(slice_cols(hp.attn_weight, 0, din));
    blocks.push_back(slice_cols(hp.attn_weight, din, 2 * din));
    blocks.push_back(hp.value_weight);
  }
  Tensor proj = matmul_transposed(h, concat_rows(blocks));

  std::optional<Tensor> combined;
  for (std::size_t k = 0; k < params.heads.size(); ++k) {
    const std::size_t base = 3 * k * dout;
    Tensor e = scores_from_projections(slice_cols(proj, base, base + dout),
                                       slice_cols(proj, base + dout, base + 2 * dout),
                                       params.heads[k].attn_vector, idx, opt.leaky_slope);
    Tensor alpha = segment_softmax(e, idx.targets, opt.keep_mask);
    Tensor alpha_dropped = dropout(alpha, opt.dropout, derive_seed(opt.seed, {1, k}), opt.training);
    Tensor values = slice_cols(proj, base + 2 * dout, base + 3 * dout);
    Tensor agg = segment_sum(mul(gather_rows(values, idx.sources), alpha_dropped), idx.targets, n);
    res.trace.scores.push_back(e);
    res.trace.alpha.push_back(alpha);
    res.trace.values.push_back(values);
    if (!combined) {
      combined = agg;
    } else {
      combined = opt.concat_heads ? concat_cols(*combined, agg) : add(*combined, agg);
    }
  }
  Tensor out = *combined;
  if (!opt.concat_heads && params.heads.size() > 1)
    out = scale(out, 1.0 / static_cast<double>(params.heads.size()));
  if (opt.elu_activation) out = elu(out);
  res.trace.output = out;
  res.output = out;
  return res;
}

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  std::span<const char> keep_mask{};
};

struct ModelOutput {
  Tensor logits;
  ForwardTrace trace;
};

/// Stacks the layers: hidden layers concatenate heads and apply ELU; the last
/// layer averages heads and emits raw class logits.
inline ModelOutput model_forward(const DirectedEdgeIndex& idx, const Tensor& features,
                                 const ModelParams& params, const TrainConfig& config,
                                 const ForwardOptions& fwd = {}) {
  if (config.layers != 1 && config.layers != 2) throw ConfigError("layers must be 1 or 2");
  if (params.layers.size() != config.layers) {
    throw ConfigError("model has " + std::to_string(params.layers.size()) +
                      " layers but config asks for " + std::to_string(config.layers));
  }
  ModelOutput out;
  Tensor h = features;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const bool last = l + 1 == params.layers.size();
    LayerOptions opt;
    opt.concat_heads = !last;
    opt.elu_activation = !last;
    opt.training = fwd.training;
    opt.dropout = config.dropout;
    opt.seed = derive_seed(fwd.dropout_seed, {l});
    opt.leaky_slope = config.leaky_slope;
    opt.keep_mask = fwd.keep_mask;
    auto res = layer_forward(h, params.layers[l], idx, opt);
    h = res.output;
    out.trace.layers.push_back(std::move(res.trace));
  }
  out.logits = h;
  return out;
}

inline ModelOutput model_forward(const Graph& g, const NodeData& data, const ModelParams& params,
                                 const TrainConfig& config, const ForwardOptions& fwd = {}) {
  return model_forward(DirectedEdgeIndex::build(g), Tensor::constant(data.features), params,
                       config, fwd);
}

}  // namespace hsgat
