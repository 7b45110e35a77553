// SPDX-License-Identifier: Apache-2.0
#pragma once

// Plain-text dataset directories:
//   edges.txt     "u v" per line, 0-based; duplicates and self-loops rejected
//   features.csv  one row of comma-separated reals per node
//   labels.txt    one integer label per line
//   splits.json   {"train": [...], "val": [...], "test": [...]}
// Blank lines and lines starting with '#' are ignored in the text files.

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <cctype>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsgat/format.hpp"
#include "hsgat/graph.hpp"

namespace hsgat {

struct Dataset {
  Graph graph;
  NodeData data;
};

namespace detail {

[[noreturn]] inline void load_error(const std::filesystem::path& file, std::size_t line,
                                    const std::string& what) {
  throw LoadError(file.string() + ":" + std::to_string(line) + ": " + what);
}

inline std::ifstream open_input(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string() + ": cannot open file");
  return in;
}

inline bool skip_line(const std::string& s) {
  auto it = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  return it == s.end() || *it == '#';
}

inline bool parse_index(const std::string& tok, std::size_t& out) {
  if (tok.empty() || tok[0] == '-' || tok[0] == '+') return false;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(tok.c_str(), &end, 10);
  if (errno != 0 || end != tok.c_str() + tok.size()) return false;
  out = static_cast<std::size_t>(v);
  return true;
}

inline bool parse_real(std::string tok, double& out) {
  tok.erase(0, tok.find_first_not_of(" \t\r"));
  tok.erase(tok.find_last_not_of(" \t\r") + 1);
  if (tok.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(tok.c_str(), &end);
  return errno == 0 && end == tok.c_str() + tok.size();
}

}  // namespace detail

inline std::vector<std::size_t> load_labels(const std::filesystem::path& file) {
  auto in = detail::open_input(file);
  std::vector<std::size_t> labels;
  std::string line;
  for (std::size_t ln = 1; std::getline(in, line); ++ln) {
    if (detail::skip_line(line)) continue;
    std::istringstream ss(line);
    std::string tok, extra;
    ss >> tok;
    std::size_t v = 0;
    if (!detail::parse_index(tok, v) || (ss >> extra)) {
      detail::load_error(file, ln, "expected one non-negative integer label");
    }
    labels.push_back(v);
  }
  return labels;
}

inline Matrix load_features(const std::filesystem::path& file) {
  auto in = detail::open_input(file);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  for (std::size_t ln = 1; std::getline(in, line); ++ln) {
    if (detail::skip_line(line)) continue;
    std::size_t count = 0;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      double v = 0.0;
      if (!detail::parse_real(tok, v)) detail::load_error(file, ln, "bad real value '" + tok + "'");
      values.push_back(v);
      ++count;
    }
    if (rows == 0) cols = count;
    if (count != cols || count == 0) {
      detail::load_error(file, ln, "expected " + std::to_string(cols) + " values, got " +
                                       std::to_string(count));
    }
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

inline std::vector<Edge> load_edges(const std::filesystem::path& file, std::size_t num_nodes) {
  auto in = detail::open_input(file);
  std::vector<Edge> edges;
  std::set<Edge> seen;
  std::string line;
  for (std::size_t ln = 1; std::getline(in, line); ++ln) {
    if (detail::skip_line(line)) continue;
    std::istringstream ss(line);
    std::string a, b, extra;
    ss >> a >> b;
    Edge e;
    if (!detail::parse_index(a, e.u) || !detail::parse_index(b, e.v) || (ss >> extra)) {
      detail::load_error(file, ln, "expected two non-negative node indices");
    }
    if (e.u == e.v) detail::load_error(file, ln, "self-loop on node " + a);
    if (e.u >= num_nodes || e.v >= num_nodes) {
      detail::load_error(file, ln, "node index out of range (num_nodes " +
                                       std::to_string(num_nodes) + ")");
    }
    if (e.u > e.v) std::swap(e.u, e.v);
    if (!seen.insert(e).second) detail::load_error(file, ln, "duplicate edge " + a + " " + b);
    edges.push_back(e);
  }
  return edges;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  auto& d = ds.data;
  d.labels = load_labels(dir / "labels.txt");
  d.features = load_features(dir / "features.csv");
  const std::size_t n = d.labels.size();
  if (d.features.rows() != n) {
    throw LoadError((dir / "features.csv").string() + ": " + std::to_string(d.features.rows()) +
                    " rows but labels.txt has " + std::to_string(n) + " labels");
  }
  d.num_classes = n == 0 ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  ds.graph = Graph::from_edges(n, load_edges(dir / "edges.txt", n));

  const auto split_file = dir / "splits.json";
  auto in = detail::open_input(split_file);
  nlohmann::json js;
  try {
    in >> js;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(split_file.string() + ": " + e.what());
  }
  auto read = [&](const char* key) {
    if (!js.contains(key) || !js[key].is_array()) {
      throw LoadError(split_file.string() + ": missing integer array \"" + key + "\"");
    }
    std::vector<std::size_t> idx;
    for (const auto& v : js[key]) {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw LoadError(split_file.string() + ": non-index value in \"" + key + "\"");
      }
      idx.push_back(v.get<std::size_t>());
    }
    return idx;
  };
  d.train_idx = read("train");
  d.val_idx = read("val");
  d.test_idx = read("test");
  try {
    d.validate();
  } catch (const ContractError& e) {
    throw LoadError(dir.string() + ": " + e.what());
  }
  return ds;
}

inline void save_dataset(const std::filesystem::path& dir, const Graph& g, const NodeData& d) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "edges.txt");
    for (const auto& e : g.edges()) out << e.u << ' ' << e.v << '\n';
  }
  {
    std::ofstream out(dir / "features.csv");
    for (std::size_t r = 0; r < d.features.rows(); ++r) {
      for (std::size_t c = 0; c < d.features.cols(); ++c)
        out << (c ? "," : "") << format_double(d.features(r, c));
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "labels.txt");
    for (auto y : d.labels) out << y << '\n';
  }
  nlohmann::ordered_json js;
  js["train"] = d.train_idx;
  js["val"] = d.val_idx;
  js["test"] = d.test_idx;
  std::ofstream(dir / "splits.json") << js.dump() << '\n';
}

}  // namespace hsgat
