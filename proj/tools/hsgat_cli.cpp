// SPDX-License-Identifier: Apache-2.0
//
// hsgat: train and analyse homophily-supervised GATv2 node classifiers.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "hsgat/hsgat.hpp"

namespace {

constexpr const char* kFormats = R"(
Dataset directory: edges.txt ("u v" per line, 0-based), features.csv (one
comma-separated row per node), labels.txt (one integer per line), splits.json
({"train": [...], "val": [...], "test": [...]}).

Outputs:
  train          JSON report {config, seeds, val_accuracies, test_accuracies,
                 mean, std, wall_time_s, homophily}; --history writes JSON lines
                 {seed, epoch, L_V, L_E, train_acc, val_acc}.
  homophily-sweep CSV columns k,mean_acc,std_acc,homophily,num_edges.
  attn-dist      PREFIX.csv columns layer,head,target,source,group,score (head
                 "avg" = mean over heads, group intra|inter) and PREFIX.json
                 {strict_heldout, groups: [{layer, head, count_intra,
                 count_inter, mean_intra, mean_inter, std_intra, std_inter,
                 separation, standardized_difference, histogram}]}.
  grid-search    JSON {table, best_index, best_config, report}.
All randomness derives from --seed; run i of --seeds N uses an independent
stream expanded from it.
)";

struct CommonOptions {
  std::string dataset;
  std::string out;
  std::size_t seeds = 1;
  std::size_t workers = 1;
  hsgat::TrainConfig config;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  auto& c = o.config;
  cmd->add_option("--dataset", o.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--layers", c.layers, "Message-passing layers (1 or 2)")->capture_default_str();
  cmd->add_option("--heads", c.heads, "Attention heads")->capture_default_str();
  cmd->add_option("--hidden", c.hidden_dim, "Hidden size per head")->capture_default_str();
  cmd->add_option("--lr", c.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--dropout", c.dropout, "Feature and attention dropout")->capture_default_str();
  cmd->add_option("--weight-decay", c.weight_decay, "L2 coefficient")->capture_default_str();
  cmd->add_option("--lambda", c.lambda, "Attention supervision weight (0 = plain GATv2)")
      ->capture_default_str();
  cmd->add_option("--epochs", c.epochs, "Maximum epochs")->capture_default_str();
  cmd->add_option("--patience", c.patience, "Early-stopping patience (0 disables)")
      ->capture_default_str();
  cmd->add_option("--seed", c.seed, "Base seed")->capture_default_str();
  cmd->add_option("--seeds", o.seeds, "Number of runs")->capture_default_str();
  cmd->add_option("--workers", o.workers, "Parallel training runs")->capture_default_str();
  cmd->add_option("--out", o.out, "Output path (stdout when omitted)");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw hsgat::LoadError(path + ": cannot open for writing");
  out << text;
}

template <typename T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::istringstream ts(tok);
    T v{};
    if (!(ts >> v) || !ts.eof()) throw CLI::ValidationError("list", "bad list element '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Autodiff temporaries are large and short-lived; keep them on the heap
  // instead of paying an mmap/munmap round trip per op.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"Homophily-supervised graph attention (HS-GATv2) training and analysis"};
  app.footer(kFormats);
  app.require_subcommand(1);

  CommonOptions train_opt, sweep_opt, attn_opt, grid_opt;
  std::string history_path, checkpoint_out;
  auto* train_cmd = app.add_subcommand("train", "Train over one or more seeds and report test accuracy");
  add_common(train_cmd, train_opt);
  train_cmd->add_option("--history", history_path, "Write per-epoch history as JSON lines");
  train_cmd->add_option("--checkpoint", checkpoint_out, "Save the first run's best parameters");

  std::string k_grid = "0,0.25,0.5,0.75,1";
  auto* sweep_cmd = app.add_subcommand(
      "homophily-sweep", "Remove a fraction k of inter-class edges and retrain for each k");
  add_common(sweep_cmd, sweep_opt);
  sweep_cmd->add_option("--k-grid", k_grid, "Comma-separated k values in [0,1]")->capture_default_str();

  bool strict = false;
  std::string checkpoint_in;
  std::size_t bins = 30;
  auto* attn_cmd = app.add_subcommand(
      "attn-dist", "Un-normalized attention scores of held-out intra/inter-class edges");
  add_common(attn_cmd, attn_opt);
  attn_cmd->add_flag("--strict-heldout", strict, "Require both endpoints outside the training set");
  attn_cmd->add_option("--checkpoint", checkpoint_in, "Load parameters instead of training");
  attn_cmd->add_option("--bins", bins, "Histogram bins")->capture_default_str();

  std::string g_layers = "1,2", g_heads = "1,4,8", g_hidden = "8,16,32,64,128",
              g_lr = "0.001,0.005", g_dropout = "0.0,0.2,0.5";
  auto* grid_cmd = app.add_subcommand("grid-search", "Exhaustive hyperparameter search on validation accuracy");
  add_common(grid_cmd, grid_opt);
  grid_cmd->add_option("--grid-layers", g_layers)->capture_default_str();
  grid_cmd->add_option("--grid-heads", g_heads)->capture_default_str();
  grid_cmd->add_option("--grid-hidden", g_hidden)->capture_default_str();
  grid_cmd->add_option("--grid-lr", g_lr)->capture_default_str();
  grid_cmd->add_option("--grid-dropout", g_dropout)->capture_default_str();

  hsgat::SbmParams sbm;
  std::string sbm_out;
  auto* sbm_cmd = app.add_subcommand("make-sbm", "Write a synthetic stochastic-block-model dataset directory");
  sbm_cmd->add_option("--out", sbm_out, "Output directory")->required();
  sbm_cmd->add_option("--nodes", sbm.num_nodes)->capture_default_str();
  sbm_cmd->add_option("--classes", sbm.num_classes)->capture_default_str();
  sbm_cmd->add_option("--p-intra", sbm.p_intra)->capture_default_str();
  sbm_cmd->add_option("--p-inter", sbm.p_inter)->capture_default_str();
  sbm_cmd->add_option("--feature-dim", sbm.feature_dim)->capture_default_str();
  sbm_cmd->add_option("--noise", sbm.feature_noise)->capture_default_str();
  sbm_cmd->add_option("--seed", sbm.seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      auto ds = hsgat::load_dataset(train_opt.dataset);
      auto runs = hsgat::run_train(ds.graph, ds.data, train_opt.config, train_opt.seeds,
                                   train_opt.workers);
      if (!history_path.empty()) {
        std::string lines;
        for (const auto& run : runs.runs) {
          for (const auto& rec : run.result.history) {
            nlohmann::ordered_json j;
            j["seed"] = run.seed;
            j.update(hsgat::to_json(rec));
            lines += j.dump() + "\n";
          }
        }
        write_text(history_path, lines);
      }
      if (!checkpoint_out.empty()) hsgat::save_checkpoint(checkpoint_out, runs.runs.front().result.params);
      write_text(train_opt.out, hsgat::to_json(runs.report).dump(2) + "\n");
    } else if (*sweep_cmd) {
      auto ds = hsgat::load_dataset(sweep_opt.dataset);
      const auto ks = parse_list<double>(k_grid);
      auto rows = hsgat::run_homophily_sweep(ds.graph, ds.data, sweep_opt.config, ks,
                                             sweep_opt.seeds, sweep_opt.workers);
      write_text(sweep_opt.out, hsgat::sweep_csv(rows));
    } else if (*attn_cmd) {
      auto ds = hsgat::load_dataset(attn_opt.dataset);
      hsgat::ModelParams params;
      hsgat::TrainConfig cfg = attn_opt.config;
      if (!checkpoint_in.empty()) {
        params = hsgat::load_checkpoint(checkpoint_in);
        cfg.layers = params.layers.size();
      } else {
        params = hsgat::train_one(ds.graph, ds.data, cfg, hsgat::run_seed(cfg.seed, 0)).result.params;
      }
      auto dist = hsgat::collect_attention_scores(ds.graph, ds.data, params, cfg, strict, bins);
      const std::string prefix = attn_opt.out.empty() ? "attn" : attn_opt.out;
      write_text(prefix + ".csv", hsgat::attn_samples_csv(dist));
      write_text(prefix + ".json", hsgat::to_json(dist).dump(2) + "\n");
      for (const auto& s : dist.summaries) {
        if (s.head) continue;
        std::cerr << "layer " << s.layer << ": mean intra " << s.mean_intra << ", mean inter "
                  << s.mean_inter << ", separation " << s.separation << "\n";
      }
    } else if (*grid_cmd) {
      auto ds = hsgat::load_dataset(grid_opt.dataset);
      hsgat::SearchGrid grid;
      grid.layers = parse_list<std::size_t>(g_layers);
      grid.heads = parse_list<std::size_t>(g_heads);
      grid.hidden_dim = parse_list<std::size_t>(g_hidden);
      grid.learning_rate = parse_list<double>(g_lr);
      grid.dropout = parse_list<double>(g_dropout);
      auto res = hsgat::run_grid_search(ds.graph, ds.data, grid_opt.config, grid, grid_opt.seeds,
                                        grid_opt.workers);
      write_text(grid_opt.out, hsgat::to_json(res).dump(2) + "\n");
    } else if (*sbm_cmd) {
      auto ds = hsgat::generate_sbm(sbm);
      hsgat::save_dataset(sbm_out, ds.graph, ds.data);
    }
  } catch (const hsgat::LoadError& e) {
    std::cerr << "load error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
