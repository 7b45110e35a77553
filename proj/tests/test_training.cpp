// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "test_util.hpp"

namespace hsgat {
namespace {

SyntheticDataset small_sbm(std::uint64_t seed, double p_inter = 0.02, double noise = 1.0) {
  SbmParams p;
  p.num_nodes = 80;
  p.num_classes = 4;
  p.p_intra = 0.2;
  p.p_inter = p_inter;
  p.feature_dim = 8;
  p.feature_noise = noise;
  p.seed = seed;
  return generate_sbm(p);
}

TrainConfig small_config() {
  TrainConfig c;
  c.heads = 2;
  c.hidden_dim = 4;
  c.epochs = 60;
  c.patience = 20;
  c.dropout = 0.2;
  c.learning_rate = 0.01;
  return c;
}

TEST(Glorot, BoundsAndVariance) {
  auto m = glorot_init(200, 300, 1);
  const double bound = std::sqrt(6.0 / 500.0);
  double ss = 0.0, mean = 0.0;
  for (double v : m.data()) {
    EXPECT_LE(std::abs(v), bound);
    mean += v;
    ss += v * v;
  }
  mean /= m.size();
  const double var = ss / m.size() - mean * mean;
  EXPECT_NEAR(var / (bound * bound / 3.0), 1.0, 0.05);
  EXPECT_EQ(glorot_init(3, 4, 7), glorot_init(3, 4, 7));
  EXPECT_NE(glorot_init(3, 4, 7), glorot_init(3, 4, 8));
  EXPECT_THROW(glorot_init(0, 4, 1), DimensionError);
}

TEST(InitModel, ShapesFollowTheConfig) {
  TrainConfig c;
  c.heads = 3;
  c.hidden_dim = 5;
  auto p = init_model(c, 7, 4, 0);
  ASSERT_EQ(p.layers.size(), 2u);
  const auto& h0 = p.layers[0].heads[2];
  EXPECT_EQ(h0.attn_weight.shape_str(), "[5x14]");
  EXPECT_EQ(h0.attn_vector.shape_str(), "[5x1]");
  EXPECT_EQ(h0.value_weight.shape_str(), "[5x7]");
  const auto& h1 = p.layers[1].heads[0];
  EXPECT_EQ(h1.attn_weight.shape_str(), "[4x30]");
  EXPECT_EQ(h1.value_weight.shape_str(), "[4x15]");
  c.layers = 1;
  EXPECT_EQ(init_model(c, 7, 4, 0).layers[0].heads[0].value_weight.shape_str(), "[4x7]");
  // Heads are initialized independently.
  EXPECT_NE(p.layers[0].heads[0].value_weight.value(), p.layers[0].heads[1].value_weight.value());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor> ps{Tensor::parameter(Matrix(1, 3, {1.0, 1.0, 1.0}))};
  std::vector<Matrix> g{Matrix(1, 3, {0.5, -20.0, 0.0})};
  AdamState st;
  adam_step(ps, g, st, 0.01);
  const Matrix& v = ps[0].value();
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(v[0], 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(v[1], 1.0 + 0.01 * 20.0 / (20.0 + 1e-8), 1e-15);
  EXPECT_EQ(v[2], 1.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, MinimizesAQuadratic) {
  std::vector<Tensor> ps{Tensor::parameter(Matrix(1, 2, {3.0, -4.0}))};
  AdamState st;
  for (int i = 0; i < 2000; ++i) {
    ps[0].zero_grad();
    {
      Tape tape;
      tape.backward(sum_squares(ps[0]));
    }
    std::vector<Matrix> g{ps[0].grad()};
    adam_step(ps, g, st, 0.05);
  }
  EXPECT_LT(std::abs(ps[0].value()[0]), 1e-3);
  EXPECT_LT(std::abs(ps[0].value()[1]), 1e-3);
  std::vector<Matrix> wrong{Matrix(2, 2)};
  EXPECT_THROW(adam_step(ps, wrong, st, 0.1), DimensionError);
}

TEST(Accuracy, ArgmaxPrefersLowestIndexOnTies) {
  Matrix z(3, 3, {1, 1, 0, 0, 2, 2, 5, 0, 5});
  EXPECT_EQ(argmax_row(z, 0), 0u);
  EXPECT_EQ(argmax_row(z, 1), 1u);
  EXPECT_EQ(argmax_row(z, 2), 0u);
  std::vector<std::size_t> labels{0, 2, 0}, nodes{0, 1, 2};
  EXPECT_DOUBLE_EQ(accuracy(z, labels, nodes), 2.0 / 3.0);
  EXPECT_THROW(accuracy(z, labels, std::vector<std::size_t>{}), ContractError);
}

TEST(Train, SameSeedIsBitIdentical) {
  auto ds = small_sbm(1);
  auto cfg = small_config();
  cfg.epochs = 15;
  auto a = train(ds.graph, ds.data, cfg), b = train(ds.graph, ds.data, cfg);
  EXPECT_EQ(history_jsonl(a.history), history_jsonl(b.history));
  auto pa = a.params.parameters(), pb = b.params.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].value(), pb[i].value());
  cfg.seed = 1;
  EXPECT_NE(history_jsonl(train(ds.graph, ds.data, cfg).history), history_jsonl(a.history));
}

TEST(Train, NoiselessHomophilicGraphIsSolved) {
  auto ds = small_sbm(2, 0.0, 0.0);
  auto cfg = small_config();
  cfg.epochs = 100;
  cfg.patience = 0;
  auto res = train(ds.graph, ds.data, cfg);
  EXPECT_EQ(evaluate(ds.graph, ds.data, res.params, cfg, Split::kTest), 1.0);
  EXPECT_EQ(res.best_val_acc, 1.0);
  EXPECT_LT(res.history.back().edge_loss, std::log(2.0));
  EXPECT_LT(res.history.back().node_loss, res.history.front().node_loss);
  EXPECT_EQ(res.history.size(), 100u);
}

TEST(Train, EarlyStoppingKeepsTheBestEpoch) {
  auto ds = small_sbm(3, 0.08, 2.0);
  auto cfg = small_config();
  cfg.epochs = 300;
  cfg.patience = 10;
  auto res = train(ds.graph, ds.data, cfg);
  ASSERT_GE(res.best_epoch, 1u);
  EXPECT_LT(res.history.size(), cfg.epochs);
  EXPECT_EQ(res.history.size(), res.best_epoch + cfg.patience);
  double best = 0.0;
  for (const auto& r : res.history) best = std::max(best, r.val_acc);
  EXPECT_EQ(res.best_val_acc, best);
  EXPECT_EQ(res.history[res.best_epoch - 1].val_acc, best);
  EXPECT_EQ(evaluate(ds.graph, ds.data, res.params, cfg, Split::kVal), best);
}

TEST(Train, HistoryJsonLinesHaveFixedKeys) {
  auto ds = small_sbm(4);
  auto cfg = small_config();
  cfg.epochs = 3;
  auto res = train(ds.graph, ds.data, cfg);
  auto text = history_jsonl(res.history);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  auto first = nlohmann::ordered_json::parse(text.substr(0, text.find('\n')));
  std::vector<std::string> keys;
  for (auto it = first.begin(); it != first.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"epoch", "L_V", "L_E", "train_acc", "val_acc"}));
  EXPECT_EQ(first["epoch"], 1);
}

TEST(Train, DivergenceIsReported) {
  auto ds = small_sbm(5);
  auto cfg = small_config();
  cfg.learning_rate = 1e300;
  EXPECT_THROW(train(ds.graph, ds.data, cfg), DivergenceError);
}

TEST(Train, RejectsBadConfigAndData) {
  auto ds = small_sbm(6);
  auto cfg = small_config();
  cfg.dropout = 1.0;
  EXPECT_THROW(train(ds.graph, ds.data, cfg), ConfigError);
  cfg = small_config();
  auto data = ds.data;
  data.val_idx.clear();
  EXPECT_THROW(train(ds.graph, data, cfg), ContractError);
}

}  // namespace
}  // namespace hsgat
