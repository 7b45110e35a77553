// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "test_util.hpp"

namespace hsgat {
namespace {

using testing::random_matrix;

// Small labelled random graph where every class has training nodes.
Dataset random_dataset(std::size_t n, std::size_t classes, std::size_t dim, std::mt19937_64& gen,
                       double p = 0.3) {
  auto edges = testing::random_edges(n, p, gen);
  auto labels = testing::random_labels(n, classes, gen);
  std::vector<std::size_t> train, val, test;
  for (std::size_t i = 0; i < n; ++i) (i % 3 == 0 ? val : (i % 3 == 1 ? test : train)).push_back(i);
  return testing::make_dataset(n, edges, labels, classes, random_matrix(n, dim, gen), train, val,
                               test);
}

double naive_bce(double s, double y) {
  const double p = 1.0 / (1.0 + std::exp(-s));
  return -(y * std::log(p) + (1 - y) * std::log(1 - p));
}

ForwardTrace trace_with_scores(std::vector<std::vector<std::vector<double>>> per_layer_heads) {
  ForwardTrace t;
  for (auto& heads : per_layer_heads) {
    LayerTrace lt;
    for (auto& s : heads) {
      const auto n = s.size();
      lt.scores.push_back(Tensor::parameter(Matrix(n, 1, std::move(s))));
    }
    t.layers.push_back(std::move(lt));
  }
  return t;
}

TEST(NodeLoss, UniformLogitsGiveLogC) {
  Dataset ds = testing::make_dataset(4, {{0, 1}}, {0, 1, 2, 3}, 5, Matrix(4, 2), {0, 2, 3});
  auto l = node_loss(Tensor::constant(Matrix(4, 5, 0.0)), ds.data).item();
  EXPECT_NEAR(l, std::log(5.0), 1e-15);
  ds.data.train_idx.clear();
  EXPECT_THROW(node_loss(Tensor::constant(Matrix(4, 5)), ds.data), ContractError);
  ds.data.train_idx = {0};
  EXPECT_THROW(node_loss(Tensor::constant(Matrix(4, 4)), ds.data), DimensionError);
}

TEST(NodeLoss, MatchesLogSumExpByHand) {
  // Node 0: logits (2, 0), label 0 -> log(1 + e^-2). Node 1: (0, 1), label 0 -> log(1 + e).
  Dataset ds = testing::make_dataset(2, {{0, 1}}, {0, 0}, 2, Matrix(2, 1), {0, 1});
  auto l = node_loss(Tensor::constant(Matrix(2, 2, {2, 0, 0, 1})), ds.data).item();
  EXPECT_NEAR(l, 0.5 * (std::log1p(std::exp(-2.0)) + std::log1p(std::exp(1.0))), 1e-15);
}

TEST(EdgeLoss, ZeroScoresGiveLogTwo) {
  SupervisedEdgeSet s{{0, 1, 2}, {1.0, 0.0, 1.0}};
  auto t = trace_with_scores({{{0, 0, 0, 0}, {0, 0, 0, 0}}, {{0, 0, 0, 0}}});
  EXPECT_NEAR(edge_loss(t, s).item(), std::log(2.0), 1e-15);
}

TEST(EdgeLoss, SingleIntraEdgeWithUnitScore) {
  SupervisedEdgeSet s{{1}, {1.0}};
  auto t = trace_with_scores({{{5.0, 1.0}}});
  EXPECT_NEAR(edge_loss(t, s).item(), std::log1p(std::exp(-1.0)), 1e-15);
  SupervisedEdgeSet inter{{1}, {0.0}};
  EXPECT_NEAR(edge_loss(t, inter).item(), std::log1p(std::exp(1.0)), 1e-15);
}

TEST(EdgeLoss, AveragesHeadsThenLayers) {
  SupervisedEdgeSet s{{0, 1}, {1.0, 0.0}};
  auto t = trace_with_scores({{{0.5, -1.0}, {2.0, 0.3}}, {{-0.7, 1.1}}});
  const double l0 = 0.5 * (0.5 * (naive_bce(0.5, 1) + naive_bce(-1.0, 0)) +
                           0.5 * (naive_bce(2.0, 1) + naive_bce(0.3, 0)));
  const double l1 = 0.5 * (naive_bce(-0.7, 1) + naive_bce(1.1, 0));
  EXPECT_NEAR(edge_loss(t, s).item(), 0.5 * (l0 + l1), 1e-15);
}

TEST(EdgeLoss, BceIsMonotoneInTheScore) {
  double prev_intra = INFINITY, prev_inter = -INFINITY;
  for (double s = -6.0; s <= 6.0; s += 0.5) {
    auto t = trace_with_scores({{{s}}});
    const double li = edge_loss(t, SupervisedEdgeSet{{0}, {1.0}}).item();
    const double lo = edge_loss(t, SupervisedEdgeSet{{0}, {0.0}}).item();
    EXPECT_LT(li, prev_intra);
    EXPECT_GT(lo, prev_inter);
    prev_intra = li;
    prev_inter = lo;
  }
}

TEST(EdgeLoss, EmptySetIsConstantZero) {
  auto t = trace_with_scores({{{1.0, 2.0}}});
  Tensor l = edge_loss(t, SupervisedEdgeSet{});
  EXPECT_EQ(l.item(), 0.0);
  EXPECT_FALSE(l.requires_grad());
}

TEST(SupervisedEdges, MatchBruteForce) {
  std::mt19937_64 gen(41);
  for (int trial = 0; trial < 20; ++trial) {
    auto ds = random_dataset(15, 3, 2, gen);
    auto idx = DirectedEdgeIndex::build(ds.graph);
    auto sup = build_supervised_edges(ds.graph, ds.data, idx);
    std::set<std::size_t> train(ds.data.train_idx.begin(), ds.data.train_idx.end());
    std::set<std::tuple<std::size_t, std::size_t, double>> expect, got;
    for (const auto& e : ds.graph.edges()) {
      if (!train.count(e.u) || !train.count(e.v)) continue;
      const double y = ds.data.labels[e.u] == ds.data.labels[e.v];
      expect.insert({e.u, e.v, y});
      expect.insert({e.v, e.u, y});
    }
    for (std::size_t q = 0; q < sup.size(); ++q) {
      const auto k = sup.entries[q];
      got.insert({idx.targets[k], idx.sources[k], sup.labels[q]});
    }
    EXPECT_EQ(got, expect);
    EXPECT_EQ(sup.size(), expect.size());
  }
}

TEST(TotalLoss, EqualsSumOfIndependentlyComputedTerms) {
  std::mt19937_64 gen(42);
  auto ds = random_dataset(12, 3, 4, gen, 0.4);
  TrainConfig cfg;
  cfg.heads = 2;
  cfg.hidden_dim = 3;
  auto params = init_model(cfg, 4, 3, 5);
  auto idx = DirectedEdgeIndex::build(ds.graph);
  auto sup = build_supervised_edges(ds.data, idx);
  ASSERT_FALSE(sup.empty());
  auto out = model_forward(idx, Tensor::constant(ds.data.features), params, cfg);
  const double lambda = 0.3, wd = 1e-3;
  const double total = total_loss(out.logits, out.trace, ds.data, sup, lambda, params, wd).item();

  const Matrix& z = out.logits.value();
  double lv = 0.0;
  for (auto i : ds.data.train_idx) {
    double se = 0.0;
    for (std::size_t c = 0; c < 3; ++c) se += std::exp(z(i, c));
    lv += std::log(se) - z(i, ds.data.labels[i]);
  }
  lv /= ds.data.train_idx.size();
  double le = 0.0;
  for (const auto& layer : out.trace.layers) {
    double lsum = 0.0;
    for (const auto& e : layer.scores) {
      double h = 0.0;
      for (std::size_t q = 0; q < sup.size(); ++q) h += naive_bce(e.value()[sup.entries[q]], sup.labels[q]);
      lsum += h / sup.size();
    }
    le += lsum / layer.scores.size();
  }
  le /= out.trace.layers.size();
  double l2 = 0.0;
  for (const auto& p : params.parameters())
    for (double v : p.value().data()) l2 += v * v;
  EXPECT_NEAR(total, lv + lambda * le + wd * l2, 1e-12);
}

TEST(TotalLoss, RejectsNegativeCoefficients) {
  std::mt19937_64 gen(43);
  auto ds = random_dataset(6, 2, 2, gen);
  TrainConfig cfg;
  auto params = init_model(cfg, 2, 2, 1);
  auto idx = DirectedEdgeIndex::build(ds.graph);
  auto out = model_forward(idx, Tensor::constant(ds.data.features), params, cfg);
  SupervisedEdgeSet none;
  EXPECT_THROW(total_loss(out.logits, out.trace, ds.data, none, -1.0, params, 0.0), RangeError);
  EXPECT_THROW(total_loss(out.logits, out.trace, ds.data, none, 0.0, params, -1.0), RangeError);
}

TEST(TotalLoss, LambdaZeroMatchesEmptySupervisionGradients) {
  std::mt19937_64 gen(44);
  auto ds = random_dataset(10, 2, 3, gen, 0.5);
  TrainConfig cfg;
  cfg.heads = 2;
  cfg.hidden_dim = 2;
  auto idx = DirectedEdgeIndex::build(ds.graph);
  auto sup = build_supervised_edges(ds.data, idx);
  ASSERT_FALSE(sup.empty());
  auto grads = [&](const SupervisedEdgeSet& s, double lambda) {
    auto params = init_model(cfg, 3, 2, 6);
    Tape tape;
    auto out = model_forward(idx, Tensor::constant(ds.data.features), params, cfg);
    tape.backward(total_loss(out.logits, out.trace, ds.data, s, lambda, params, 5e-4));
    std::vector<Matrix> g;
    for (const auto& p : params.parameters()) g.push_back(p.grad());
    return g;
  };
  EXPECT_EQ(grads(sup, 0.0), grads(SupervisedEdgeSet{}, 0.7));
  EXPECT_NE(grads(sup, 0.0), grads(sup, 0.7));
}

TEST(TotalLoss, GradientsMatchCentralDifferences) {
  std::mt19937_64 gen(45);
  auto ds = random_dataset(12, 3, 4, gen, 0.4);
  TrainConfig cfg;
  cfg.heads = 2;
  cfg.hidden_dim = 3;
  cfg.dropout = 0.0;
  auto params = init_model(cfg, 4, 3, 7);
  auto idx = DirectedEdgeIndex::build(ds.graph);
  auto sup = build_supervised_edges(ds.data, idx);
  Tensor x = Tensor::constant(ds.data.features);
  auto f = [&] {
    auto out = model_forward(idx, x, params, cfg);
    return total_loss(out.logits, out.trace, ds.data, sup, 0.5, params, 1e-3);
  };
  std::vector<std::string> names;
  for (const auto& np : params.named_parameters()) names.push_back(np.path);
  GradCheckOptions opt;
  opt.tolerance = 1e-5;
  auto rep = grad_check(f, params.parameters(), opt, names);
  for (const auto& p : rep.params) EXPECT_TRUE(p.passed) << p.name << " " << p.max_relative_error;
}

TEST(NoiseNorm, MatchesLoopOracle) {
  std::mt19937_64 gen(46);
  auto ds = random_dataset(14, 3, 3, gen, 0.35);
  TrainConfig cfg;
  cfg.layers = 1;
  cfg.heads = 3;
  auto params = init_model(cfg, 3, 3, 8);
  auto idx = DirectedEdgeIndex::build(ds.graph);
  auto out = model_forward(idx, Tensor::constant(ds.data.features), params, cfg);
  auto got = noise_norm(out.trace, ds.data.labels, idx, 0);
  auto nb = testing::closed_neighbourhoods(14, ds.graph.edges());
  std::vector<double> expect(14, 0.0);
  for (const auto& hp : params.layers[0].heads) {
    const Matrix& w = hp.value_weight.value();
    auto ref = testing::naive_head(ds.data.features, nb, hp.attn_weight.value(),
                                   hp.attn_vector.value(), w);
    for (std::size_t i = 0; i < 14; ++i) {
      std::vector<double> msg(w.rows(), 0.0);
      for (auto j : nb[i]) {
        if (ds.data.labels[i] == ds.data.labels[j]) continue;
        for (std::size_t o = 0; o < w.rows(); ++o)
          for (std::size_t c = 0; c < 3; ++c) msg[o] += ref.alpha[{i, j}] * w(o, c) * ds.data.features(j, c);
      }
      double sq = 0.0;
      for (double m : msg) sq += m * m;
      expect[i] += std::sqrt(sq) / 3.0;
    }
  }
  for (std::size_t i = 0; i < 14; ++i) EXPECT_NEAR(got[i], expect[i], 1e-13);
}

TEST(NoiseNorm, MaskedModelCarriesNoInterClassMessage) {
  std::mt19937_64 gen(47);
  auto ds = random_dataset(20, 3, 4, gen, 0.3);
  TrainConfig cfg;
  cfg.heads = 2;
  auto params = init_model(cfg, 4, 3, 9);
  auto idx = DirectedEdgeIndex::build(ds.graph);
  auto mask = intra_class_mask(idx, ds.data.labels);
  ForwardOptions fwd;
  fwd.keep_mask = mask;
  auto out = model_forward(idx, Tensor::constant(ds.data.features), params, cfg, fwd);
  for (std::size_t l = 0; l < 2; ++l)
    for (double v : noise_norm(out.trace, ds.data.labels, idx, l)) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace hsgat
