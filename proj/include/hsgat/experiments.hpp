// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment drivers behind the CLI: multi-seed training reports, the
// inter-class edge removal sweep, held-out attention-score distributions and
// hyperparameter grid search. Runs are independent and may execute on worker
// threads; results are stored by index so output does not depend on
// scheduling.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "hsgat/config.hpp"
#include "hsgat/format.hpp"
#include "hsgat/gat.hpp"
#include "hsgat/graph.hpp"
#include "hsgat/objective.hpp"
#include "hsgat/seed.hpp"
#include "hsgat/training.hpp"

namespace hsgat {

/// Runs fn(0..n-1) on up to `workers` threads. The first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Population standard deviation (0 for a single sample).
inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return r;
}

/// Training seed of the i-th run under a base seed. Shared by every driver so
/// the same (base, i) always trains the same model.
inline std::uint64_t run_seed(std::uint64_t base, std::size_t i) {
  return derive_seed(base, {stream(SeedStream::kRun), i});
}

struct RunReport {
  TrainConfig config;
  std::vector<std::uint64_t> seeds;
  std::vector<double> val_accuracies;
  std::vector<double> test_accuracies;
  double mean = 0.0;
  double std = 0.0;
  double wall_time_s = 0.0;
  double homophily = 0.0;
};

inline nlohmann::ordered_json to_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["config"] = to_json(r.config);
  j["seeds"] = r.seeds;
  j["val_accuracies"] = r.val_accuracies;
  j["test_accuracies"] = r.test_accuracies;
  j["mean"] = r.mean;
  j["std"] = r.std;
  j["wall_time_s"] = r.wall_time_s;
  j["homophily"] = r.homophily;
  return j;
}

inline RunReport report_from_json(const nlohmann::ordered_json& j) {
  RunReport r;
  r.config = config_from_json(j.at("config"));
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.val_accuracies = j.at("val_accuracies").get<std::vector<double>>();
  r.test_accuracies = j.at("test_accuracies").get<std::vector<double>>();
  r.mean = j.at("mean").get<double>();
  r.std = j.at("std").get<double>();
  r.wall_time_s = j.at("wall_time_s").get<double>();
  r.homophily = j.at("homophily").get<double>();
  return r;
}

/// Homophily of a graph, treating an edgeless graph as trivially homophilic.
inline double homophily_or_one(const Graph& g, std::span<const std::size_t> labels) {
  return g.num_edges() == 0 ? 1.0 : edge_homophily(g, labels);
}

struct SeedRun {
  std::uint64_t seed = 0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  TrainResult result;
};

inline SeedRun train_one(const Graph& g, const NodeData& data, TrainConfig config,
                         std::uint64_t seed) {
  config.seed = seed;
  SeedRun run;
  run.seed = seed;
  run.result = train(g, data, config);
  run.val_acc = run.result.best_val_acc;
  run.test_acc = evaluate(g, data, run.result.params, config, Split::kTest);
  return run;
}

inline RunReport make_report(const TrainConfig& config, std::span<const SeedRun> runs,
                             double homophily, double wall_time_s) {
  RunReport r;
  r.config = config;
  for (const auto& run : runs) {
    r.seeds.push_back(run.seed);
    r.val_accuracies.push_back(run.val_acc);
    r.test_accuracies.push_back(run.test_acc);
  }
  const auto ms = mean_std(r.test_accuracies);
  r.mean = ms.mean;
  r.std = ms.std;
  r.homophily = homophily;
  r.wall_time_s = wall_time_s;
  return r;
}

struct TrainRuns {
  RunReport report;
  std::vector<SeedRun> runs;
};

/// Trains `num_seeds` models (seeds expanded from config.seed) and reports test accuracy.
inline TrainRuns run_train(const Graph& g, const NodeData& data, const TrainConfig& config,
                           std::size_t num_seeds, std::size_t workers = 1) {
  if (num_seeds == 0) throw ConfigError("need at least one seed");
  const auto start = std::chrono::steady_clock::now();
  TrainRuns out;
  out.runs.resize(num_seeds);
  parallel_for(num_seeds, workers, [&](std::size_t i) {
    out.runs[i] = train_one(g, data, config, run_seed(config.seed, i));
  });
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.report = make_report(config, out.runs, homophily_or_one(g, data.labels), secs);
  return out;
}

// ---------------------------------------------------------------------------

struct SweepRow {
  double k = 0.0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  double homophily = 0.0;  // mean over seeds of the pruned graph's homophily
  double num_edges = 0.0;  // mean over seeds
  std::vector<double> accuracies;
};

inline std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << "k,mean_acc,std_acc,homophily,num_edges\n";
  for (const auto& r : rows)
    os << format_double(r.k) << ',' << format_double(r.mean_acc) << ',' << format_double(r.std_acc)
       << ',' << format_double(r.homophily) << ','
       << r.num_edges << '\n';
  return os.str();
}

/// Removes round(k |E_inter|) inter-class edges (using all labels) and
/// retrains, per k and seed. The removal shuffle depends only on the seed,
/// so for a fixed seed the removed sets are nested as k grows.
inline std::vector<SweepRow> run_homophily_sweep(const Graph& g, const NodeData& data,
                                                 const TrainConfig& config,
                                                 std::span<const double> k_grid,
                                                 std::size_t num_seeds, std::size_t workers = 1) {
  if (num_seeds == 0) throw ConfigError("need at least one seed");
  for (double k : k_grid)
    if (!(k >= 0.0 && k <= 1.0)) throw RangeError("k values must lie in [0, 1]");
  struct Cell {
    double acc = 0.0;
    double homophily = 0.0;
    std::size_t edges = 0;
  };
  std::vector<Cell> cells(k_grid.size() * num_seeds);
  parallel_for(cells.size(), workers, [&](std::size_t c) {
    const std::size_t ki = c / num_seeds, s = c % num_seeds;
    const auto removal_seed = derive_seed(config.seed, {stream(SeedStream::kEdgeRemoval), s});
    Graph pruned = remove_inter_class_edges(g, data.labels, k_grid[ki], removal_seed);
    auto run = train_one(pruned, data, config, run_seed(config.seed, s));
    cells[c] = {run.test_acc, homophily_or_one(pruned, data.labels), pruned.num_edges()};
  });
  std::vector<SweepRow> rows;
  for (std::size_t ki = 0; ki < k_grid.size(); ++ki) {
    SweepRow row;
    row.k = k_grid[ki];
    for (std::size_t s = 0; s < num_seeds; ++s) {
      const auto& cell = cells[ki * num_seeds + s];
      row.accuracies.push_back(cell.acc);
      row.homophily += cell.homophily / static_cast<double>(num_seeds);
      row.num_edges += static_cast<double>(cell.edges) / static_cast<double>(num_seeds);
    }
    const auto ms = mean_std(row.accuracies);
    row.mean_acc = ms.mean;
    row.std_acc = ms.std;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------

struct AttnSample {
  std::size_t layer = 0;
  std::optional<std::size_t> head;  // empty: averaged over heads
  std::size_t target = 0;
  std::size_t source = 0;
  bool intra = false;
  double score = 0.0;
};

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> intra;
  std::vector<std::size_t> inter;
};

struct AttnGroupSummary {
  std::size_t layer = 0;
  std::optional<std::size_t> head;
  std::size_t count_intra = 0;
  std::size_t count_inter = 0;
  double mean_intra = 0.0;
  double mean_inter = 0.0;
  double std_intra = 0.0;
  double std_inter = 0.0;
  double separation = 0.0;           // mean_intra - mean_inter
  double standardized_difference = 0.0;  // separation / pooled std
  Histogram histogram;
};

struct AttnDistribution {
  bool strict_heldout = false;
  std::vector<AttnSample> samples;
  std::vector<AttnGroupSummary> summaries;

  const AttnGroupSummary& averaged(std::size_t layer) const {
    for (const auto& s : summaries)
      if (s.layer == layer && !s.head) return s;
    throw ContractError("no head-averaged summary for layer " + std::to_string(layer));
  }
};

/// Directed non-self-loop entries outside the supervised set: at least one
/// endpoint is not a training node (`strict`: neither endpoint is).
inline std::vector<std::size_t> heldout_entries(const DirectedEdgeIndex& idx, const NodeData& data,
                                                bool strict) {
  const auto train = membership(idx.num_nodes, data.train_idx);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx.is_self_loop(k)) continue;
    const bool t = train[idx.targets[k]] != 0, s = train[idx.sources[k]] != 0;
    if (strict ? (!t && !s) : !(t && s)) out.push_back(k);
  }
  return out;
}

inline AttnGroupSummary summarize_scores(std::size_t layer, std::optional<std::size_t> head,
                                         std::span<const double> intra,
                                         std::span<const double> inter, std::size_t bins) {
  AttnGroupSummary s;
  s.layer = layer;
  s.head = head;
  s.count_intra = intra.size();
  s.count_inter = inter.size();
  const auto a = mean_std(intra), b = mean_std(inter);
  s.mean_intra = a.mean;
  s.mean_inter = b.mean;
  s.std_intra = a.std;
  s.std_inter = b.std;
  s.separation = a.mean - b.mean;
  const double pooled = std::sqrt(0.5 * (a.std * a.std + b.std * b.std));
  s.standardized_difference = pooled > 0.0 ? s.separation / pooled : 0.0;

  auto& h = s.histogram;
  h.lo = std::numeric_limits<double>::infinity();
  h.hi = -std::numeric_limits<double>::infinity();
  for (auto xs : {intra, inter})
    for (double x : xs) {
      h.lo = std::min(h.lo, x);
      h.hi = std::max(h.hi, x);
    }
  h.intra.assign(bins, 0);
  h.inter.assign(bins, 0);
  if (bins == 0 || h.lo > h.hi) {
    h.lo = h.hi = 0.0;
    return s;
  }
  const double width = h.hi > h.lo ? (h.hi - h.lo) / static_cast<double>(bins) : 1.0;
  auto bin_of = [&](double x) {
    auto b = static_cast<std::size_t>((x - h.lo) / width);
    return std::min(b, bins - 1);
  };
  for (double x : intra) ++h.intra[bin_of(x)];
  for (double x : inter) ++h.inter[bin_of(x)];
  return s;
}

/// Un-normalized scores of held-out directed entries, split by whether the
/// endpoints share a label, per head and averaged over heads.
inline AttnDistribution collect_attention_scores(const Graph& g, const NodeData& data,
                                                 const ModelParams& params,
                                                 const TrainConfig& config, bool strict,
                                                 std::size_t bins = 30) {
  const auto idx = DirectedEdgeIndex::build(g);
  const auto entries = heldout_entries(idx, data, strict);
  if (entries.empty()) throw ContractError("no held-out edges to collect attention scores from");
  auto out = model_forward(idx, Tensor::constant(data.features), params, config);
  AttnDistribution dist;
  dist.strict_heldout = strict;
  for (std::size_t l = 0; l < out.trace.layers.size(); ++l) {
    const auto& scores = out.trace.layers[l].scores;
    const std::size_t heads = scores.size();
    std::vector<double> avg(entries.size(), 0.0);
    auto emit = [&](std::optional<std::size_t> head, auto score_of) {
      std::vector<double> intra, inter;
      for (std::size_t q = 0; q < entries.size(); ++q) {
        const auto k = entries[q];
        const bool same = data.labels[idx.targets[k]] == data.labels[idx.sources[k]];
        const double v = score_of(q);
        (same ? intra : inter).push_back(v);
        dist.samples.push_back({l, head, idx.targets[k], idx.sources[k], same, v});
      }
      dist.summaries.push_back(summarize_scores(l, head, intra, inter, bins));
    };
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& e = scores[h].value();
      for (std::size_t q = 0; q < entries.size(); ++q) avg[q] += e[entries[q]] / static_cast<double>(heads);
      emit(h, [&](std::size_t q) { return e[entries[q]]; });
    }
    emit(std::nullopt, [&](std::size_t q) { return avg[q]; });
  }
  return dist;
}

inline std::string attn_samples_csv(const AttnDistribution& d) {
  std::ostringstream os;
  os << "layer,head,target,source,group,score\n";
  for (const auto& s : d.samples) {
    os << s.layer << ',' << (s.head ? std::to_string(*s.head) : std::string("avg")) << ','
       << s.target << ',' << s.source << ',' << (s.intra ? "intra" : "inter") << ','
       << format_double(s.score)
       << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json to_json(const AttnDistribution& d) {
  nlohmann::ordered_json j;
  j["strict_heldout"] = d.strict_heldout;
  auto groups = nlohmann::ordered_json::array();
  for (const auto& s : d.summaries) {
    nlohmann::ordered_json g;
    g["layer"] = s.layer;
    if (s.head) g["head"] = *s.head;
    else g["head"] = "avg";
    g["count_intra"] = s.count_intra;
    g["count_inter"] = s.count_inter;
    g["mean_intra"] = s.mean_intra;
    g["mean_inter"] = s.mean_inter;
    g["std_intra"] = s.std_intra;
    g["std_inter"] = s.std_inter;
    g["separation"] = s.separation;
    g["standardized_difference"] = s.standardized_difference;
    g["histogram"] = {{"lo", s.histogram.lo},
                      {"hi", s.histogram.hi},
                      {"intra", s.histogram.intra},
                      {"inter", s.histogram.inter}};
    groups.push_back(std::move(g));
  }
  j["groups"] = std::move(groups);
  return j;
}

// ---------------------------------------------------------------------------

struct GridRow {
  TrainConfig config;
  double mean_val = 0.0;
  double mean_test = 0.0;
  std::vector<double> val_accuracies;
  std::vector<double> test_accuracies;
};

struct GridSearchResult {
  std::vector<GridRow> table;
  std::size_t best = 0;
  RunReport report;  // test-set report of the selected config
};

inline nlohmann::ordered_json to_json(const GridSearchResult& r) {
  nlohmann::ordered_json j;
  auto table = nlohmann::ordered_json::array();
  for (const auto& row : r.table) {
    nlohmann::ordered_json t;
    t["config"] = to_json(row.config);
    t["mean_val"] = row.mean_val;
    t["mean_test"] = row.mean_test;
    t["val_accuracies"] = row.val_accuracies;
    t["test_accuracies"] = row.test_accuracies;
    table.push_back(std::move(t));
  }
  j["table"] = std::move(table);
  j["best_index"] = r.best;
  j["best_config"] = to_json(r.table.at(r.best).config);
  j["report"] = to_json(r.report);
  return j;
}

/// Exhaustive search; the config with the highest mean validation accuracy
/// wins (earliest in grid order on ties).
inline GridSearchResult run_grid_search(const Graph& g, const NodeData& data,
                                        const TrainConfig& base, const SearchGrid& grid,
                                        std::size_t num_seeds, std::size_t workers = 1) {
  if (grid.size() == 0) throw ConfigError("empty hyperparameter grid");
  if (num_seeds == 0) throw ConfigError("need at least one seed");
  const auto configs = grid.expand(base);
  for (const auto& c : configs) c.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<SeedRun> runs(configs.size() * num_seeds);
  parallel_for(runs.size(), workers, [&](std::size_t t) {
    const std::size_t ci = t / num_seeds, s = t % num_seeds;
    runs[t] = train_one(g, data, configs[ci], run_seed(base.seed, s));
    runs[t].result = {};  // keep memory flat across large grids
  });
  GridSearchResult res;
  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    GridRow row;
    row.config = configs[ci];
    for (std::size_t s = 0; s < num_seeds; ++s) {
      row.val_accuracies.push_back(runs[ci * num_seeds + s].val_acc);
      row.test_accuracies.push_back(runs[ci * num_seeds + s].test_acc);
    }
    row.mean_val = mean_std(row.val_accuracies).mean;
    row.mean_test = mean_std(row.test_accuracies).mean;
    if (res.table.empty() || row.mean_val > res.table[res.best].mean_val) res.best = ci;
    res.table.push_back(std::move(row));
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::span<const SeedRun> best_runs(runs.data() + res.best * num_seeds, num_seeds);
  res.report = make_report(configs[res.best], best_runs, homophily_or_one(g, data.labels), secs);
  return res;
}

}  // namespace hsgat
