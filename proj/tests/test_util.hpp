// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared fixtures and plain-loop reference implementations. Nothing here
// calls the tensor ops, so they can serve as independent oracles.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "hsgat/hsgat.hpp"

namespace hsgat::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.data()) v = d(gen);
  return m;
}

/// Erdos-Renyi edge list without self-loops.
inline std::vector<Edge> random_edges(std::size_t n, double p, std::mt19937_64& gen) {
  std::bernoulli_distribution coin(p);
  std::vector<Edge> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(gen)) out.push_back({i, j});
  return out;
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes,
                                              std::mt19937_64& gen) {
  std::uniform_int_distribution<std::size_t> d(0, classes - 1);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = d(gen);
  return y;
}

inline double leaky(double x, double slope) { return x > 0 ? x : slope * x; }

/// a^T LeakyReLU(W2 [h_i || h_j]) with the concatenation built explicitly.
inline double naive_score(const Matrix& h, const Matrix& w2, const Matrix& a, std::size_t i,
                          std::size_t j, double slope = 0.2) {
  const std::size_t d = h.cols();
  std::vector<double> cat(2 * d);
  for (std::size_t c = 0; c < d; ++c) {
    cat[c] = h(i, c);
    cat[d + c] = h(j, c);
  }
  double e = 0.0;
  for (std::size_t r = 0; r < w2.rows(); ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 2 * d; ++c) z += w2(r, c) * cat[c];
    e += a(r, 0) * leaky(z, slope);
  }
  return e;
}

/// Closed neighbourhoods straight from an edge list.
inline std::vector<std::set<std::size_t>> closed_neighbourhoods(std::size_t n,
                                                                const std::vector<Edge>& edges) {
  std::vector<std::set<std::size_t>> nb(n);
  for (std::size_t i = 0; i < n; ++i) nb[i].insert(i);
  for (const auto& e : edges) {
    nb[e.u].insert(e.v);
    nb[e.v].insert(e.u);
  }
  return nb;
}

struct NaiveHeadOutput {
  std::map<std::pair<std::size_t, std::size_t>, double> score;  // (i, j) -> e_ij
  std::map<std::pair<std::size_t, std::size_t>, double> alpha;
  Matrix out;  // N x d_out, sum_j alpha_ij W h_j
};

inline NaiveHeadOutput naive_head(const Matrix& h, const std::vector<std::set<std::size_t>>& nb,
                                  const Matrix& w2, const Matrix& a, const Matrix& w,
                                  double slope = 0.2) {
  const std::size_t n = h.rows(), dout = w.rows(), din = h.cols();
  NaiveHeadOutput r;
  r.out = Matrix(n, dout);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (auto j : nb[i]) {
      const double e = naive_score(h, w2, a, i, j, slope);
      r.score[{i, j}] = e;
      mx = std::max(mx, e);
    }
    double z = 0.0;
    for (auto j : nb[i]) z += std::exp(r.score[{i, j}] - mx);
    for (auto j : nb[i]) {
      const double al = std::exp(r.score[{i, j}] - mx) / z;
      r.alpha[{i, j}] = al;
      for (std::size_t o = 0; o < dout; ++o) {
        double wh = 0.0;
        for (std::size_t c = 0; c < din; ++c) wh += w(o, c) * h(j, c);
        r.out(i, o) += al * wh;
      }
    }
  }
  return r;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Small labelled graph with the given splits.
inline Dataset make_dataset(std::size_t n, std::vector<Edge> edges, std::vector<std::size_t> labels,
                            std::size_t classes, Matrix features, std::vector<std::size_t> train,
                            std::vector<std::size_t> val = {}, std::vector<std::size_t> test = {}) {
  Dataset ds;
  ds.graph = Graph::from_edges(n, std::move(edges));
  ds.data.features = std::move(features);
  ds.data.labels = std::move(labels);
  ds.data.num_classes = classes;
  ds.data.train_idx = std::move(train);
  ds.data.val_idx = std::move(val);
  ds.data.test_idx = std::move(test);
  ds.data.validate();
  return ds;
}

}  // namespace hsgat::testing
