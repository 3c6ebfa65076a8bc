#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mhai/dataset.hpp"
#include "mhai/error.hpp"
#include "mhai/nn.hpp"
#include "mhai/stream.hpp"

namespace mhai {

/// One calibration-window observation: the client's raw features, the class
/// predicted by each subset model it holds, and the true label.
struct CalibrationRow {
  std::map<StreamId, double> features;
  std::map<StreamSubset, int> model_preds;
  int label = 0;
};

inline std::string model_column(const StreamSubset& s) { return "model:" + s.key(); }

/// Model columns come first, larger subsets before smaller ones (then
/// lexicographic), followed by the raw streams. Split search breaks impurity
/// ties by column order, so ties favour the prediction columns.
inline bool model_column_order(const StreamSubset& a, const StreamSubset& b) {
  if (a.size() != b.size()) return a.size() > b.size();
  return a < b;
}

inline std::vector<std::string> row_schema(const CalibrationRow& row) {
  std::vector<StreamSubset> subsets;
  for (const auto& [s, _] : row.model_preds) subsets.push_back(s);
  std::sort(subsets.begin(), subsets.end(), model_column_order);
  std::vector<std::string> cols;
  for (const auto& s : subsets) cols.push_back(model_column(s));
  for (const auto& [s, _] : row.features) cols.push_back(s.name);
  return cols;
}

inline std::vector<double> row_values(const CalibrationRow& row) {
  std::vector<std::pair<StreamSubset, int>> preds(row.model_preds.begin(), row.model_preds.end());
  std::sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) { return model_column_order(a.first, b.first); });
  std::vector<double> v;
  for (const auto& [_, p] : preds) v.push_back(static_cast<double>(p));
  for (const auto& [_, x] : row.features) v.push_back(x);
  return v;
}

/// One row per window record. Each model sees the record projected onto its
/// own subset; the column holds the argmax class.
inline std::vector<CalibrationRow> build_calibration(const std::map<StreamSubset, ModelParams>& client_models,
                                                     const StreamSubset& client_streams,
                                                     const std::vector<SampleRecord>& window) {
  if (window.empty()) throw DomainError("calibration window is empty");
  const auto subsets = power_set(client_streams);
  for (const auto& s : subsets)
    if (!client_models.contains(s)) throw ConfigError("no model for subset " + s.key());
  std::vector<CalibrationRow> rows;
  rows.reserve(window.size());
  for (const auto& r : window) {
    CalibrationRow row;
    for (const auto& s : client_streams.members()) {
      auto it = r.values.find(s);
      if (it == r.values.end()) throw DomainError("calibration record lacks stream " + s.name);
      row.features.emplace(s, it->second);
    }
    for (const auto& s : subsets) row.model_preds.emplace(s, predict_class(client_models.at(s), features_of(r, s)));
    row.label = r.label;
    rows.push_back(std::move(row));
  }
  return rows;
}

struct ForestConfig {
  std::size_t n_trees = 32;
  std::size_t max_depth = 10;
  double feature_bag_fraction = 0.5;  // columns tried per split
  std::size_t min_samples_leaf = 3;
  std::uint64_t seed = 11;

  void validate() const {
    if (n_trees < 1) throw ConfigError("forest.n_trees must be >= 1");
    if (max_depth < 1) throw ConfigError("forest.max_depth must be >= 1");
    if (min_samples_leaf < 1) throw ConfigError("forest.min_samples_leaf must be >= 1");
    if (!(feature_bag_fraction > 0 && feature_bag_fraction <= 1))
      throw ConfigError("forest.feature_bag_fraction must be in (0, 1]");
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;  // go left when x <= threshold
  int left = -1;
  int right = -1;
  std::size_t n_samples = 0;
  std::vector<double> dist;  // leaves only: class distribution

  bool leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const TreeNode& leaf_for(const std::vector<double>& x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)];
  }

  int predict(const std::vector<double>& x) const {
    const auto& d = leaf_for(x).dist;
    return static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
  }
};

class ForestModel {
 public:
  ForestModel() = default;
  ForestModel(std::vector<std::string> columns, std::vector<DecisionTree> trees, ForestConfig cfg)
      : columns_(std::move(columns)), trees_(std::move(trees)), cfg_(cfg) {}

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  const ForestConfig& config() const { return cfg_; }

  /// Majority vote over trees; ties go to the lowest class index.
  int predict(const CalibrationRow& row) const {
    if (row_schema(row) != columns_) throw DomainError("row columns do not match the forest's training schema");
    return predict_values(row_values(row));
  }

  int predict_values(const std::vector<double>& x) const {
    if (x.size() != columns_.size()) throw DomainError("row width does not match the forest's training schema");
    std::array<std::size_t, kNumClasses> votes{};
    for (const auto& t : trees_) ++votes[static_cast<std::size_t>(t.predict(x))];
    return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }

  /// Number of splits on each column across all trees.
  std::map<std::string, std::size_t> split_counts() const {
    std::map<std::string, std::size_t> out;
    for (const auto& c : columns_) out[c] = 0;
    for (const auto& t : trees_)
      for (const auto& n : t.nodes)
        if (!n.leaf()) ++out[columns_[static_cast<std::size_t>(n.feature)]];
    return out;
  }

 private:
  std::vector<std::string> columns_;
  std::vector<DecisionTree> trees_;
  ForestConfig cfg_;
};

struct ForestTraining {
  ForestModel model;
  std::vector<std::string> warnings;
};

namespace detail {

inline double gini(const std::array<std::size_t, kNumClasses>& counts, std::size_t n) {
  if (n == 0) return 0;
  double s = 0;
  for (auto c : counts) {
    double p = static_cast<double>(c) / static_cast<double>(n);
    s += p * p;
  }
  return 1.0 - s;
}

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& x, const std::vector<int>& y, std::size_t max_depth,
              std::size_t m_try, std::size_t min_leaf, std::mt19937_64& rng)
      : x_(x), y_(y), max_depth_(max_depth), m_try_(m_try), min_leaf_(min_leaf), rng_(rng) {}

  DecisionTree build(std::vector<std::size_t> idx) {
    DecisionTree t;
    grow(t, std::move(idx), 0);
    return t;
  }

 private:
  int grow(DecisionTree& t, std::vector<std::size_t> idx, std::size_t depth) {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    std::array<std::size_t, kNumClasses> counts{};
    for (auto i : idx) ++counts[static_cast<std::size_t>(y_[i])];
    const double parent = gini(counts, idx.size());
    t.nodes[static_cast<std::size_t>(id)].n_samples = idx.size();

    int best_f = -1;
    double best_thr = 0, best_imp = parent - 1e-12;
    if (depth < max_depth_ && parent > 0 && idx.size() >= 2) {
      const std::size_t m = x_.empty() ? 0 : x_[0].size();
      std::vector<std::size_t> feats(m);
      std::iota(feats.begin(), feats.end(), 0);
      if (m_try_ < m) {
        std::shuffle(feats.begin(), feats.end(), rng_);
        feats.resize(m_try_);
        std::sort(feats.begin(), feats.end());
      }
      std::vector<std::pair<double, int>> col(idx.size());
      for (auto f : feats) {
        for (std::size_t k = 0; k < idx.size(); ++k) col[k] = {x_[idx[k]][f], y_[idx[k]]};
        std::sort(col.begin(), col.end());
        std::array<std::size_t, kNumClasses> left{};
        auto right = counts;
        for (std::size_t k = 0; k + 1 < col.size(); ++k) {
          ++left[static_cast<std::size_t>(col[k].second)];
          --right[static_cast<std::size_t>(col[k].second)];
          if (col[k].first == col[k + 1].first) continue;
          const std::size_t nl = k + 1, nr = col.size() - nl;
          if (nl < min_leaf_ || nr < min_leaf_) continue;
          const double imp = (static_cast<double>(nl) * gini(left, nl) + static_cast<double>(nr) * gini(right, nr)) /
                             static_cast<double>(col.size());
          if (imp < best_imp) {
            best_imp = imp;
            best_f = static_cast<int>(f);
            best_thr = col[k].first;
          }
        }
      }
    }

    if (best_f < 0) {
      auto& node = t.nodes[static_cast<std::size_t>(id)];
      node.dist.assign(kNumClasses, 0.0);
      for (std::size_t c = 0; c < kNumClasses; ++c)
        node.dist[c] = static_cast<double>(counts[c]) / static_cast<double>(idx.size());
      return id;
    }
    std::vector<std::size_t> li, ri;
    for (auto i : idx) (x_[i][static_cast<std::size_t>(best_f)] <= best_thr ? li : ri).push_back(i);
    t.nodes[static_cast<std::size_t>(id)].feature = best_f;
    t.nodes[static_cast<std::size_t>(id)].threshold = best_thr;
    const int l = grow(t, std::move(li), depth + 1);
    const int r = grow(t, std::move(ri), depth + 1);
    t.nodes[static_cast<std::size_t>(id)].left = l;
    t.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  const std::vector<std::vector<double>>& x_;
  const std::vector<int>& y_;
  std::size_t max_depth_;
  std::size_t m_try_;
  std::size_t min_leaf_;
  std::mt19937_64& rng_;
};

}  // namespace detail

/// Gini-split random forest over raw features and prediction columns.
/// Each tree sees a bootstrap sample and tries a random fraction of the
/// columns at every split. With n_trees == 1 the single tree is grown on all
/// rows with all columns, i.e. a plain decision tree.
inline ForestTraining train_forest(const std::vector<CalibrationRow>& rows, const ForestConfig& cfg) {
  cfg.validate();
  if (rows.empty()) throw DomainError("train_forest needs at least one row");
  const auto columns = row_schema(rows.front());
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (row_schema(rows[i]) != columns) throw DomainError("calibration row " + std::to_string(i) + " has a different schema");
    if (!valid_label(rows[i].label)) throw DomainError("calibration row " + std::to_string(i) + " has an invalid label");
    x.push_back(row_values(rows[i]));
    y.push_back(rows[i].label);
  }
  ForestTraining out;
  if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); }))
    out.warnings.push_back("single-label calibration data: forest is a constant predictor of class " +
                           std::to_string(y.front()));

  const bool single = cfg.n_trees == 1;
  const std::size_t m = columns.size();
  const std::size_t m_try =
      single ? m : std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(cfg.feature_bag_fraction * static_cast<double>(m))), 1, m);
  std::mt19937_64 rng(cfg.seed);
  std::vector<DecisionTree> trees;
  for (std::size_t t = 0; t < cfg.n_trees; ++t) {
    std::vector<std::size_t> idx(rows.size());
    if (single) {
      std::iota(idx.begin(), idx.end(), 0);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
      for (auto& i : idx) i = pick(rng);
      std::sort(idx.begin(), idx.end());
    }
    detail::TreeBuilder builder(x, y, cfg.max_depth, m_try, cfg.min_samples_leaf, rng);
    trees.push_back(builder.build(std::move(idx)));
  }
  out.model = ForestModel(columns, std::move(trees), cfg);
  return out;
}

// ---------------------------------------------------------------------------
// Text serialization
//
//   forest 1
//   columns <n> <name>...
//   config <n_trees> <max_depth> <feature_bag_fraction> <min_samples_leaf> <seed>
//   tree <index> <node count>
//   split <column> <threshold> <left> <right> <n>
//   leaf <n> <p0> ... <p10>

inline void write_forest(std::ostream& out, const ForestModel& f) {
  auto num = [](double v) { return detail::format_double(v); };
  out << "forest 1\ncolumns " << f.columns().size();
  for (const auto& c : f.columns()) out << ' ' << c;
  const auto& c = f.config();
  out << "\nconfig " << c.n_trees << ' ' << c.max_depth << ' ' << num(c.feature_bag_fraction) << ' '
      << c.min_samples_leaf << ' ' << c.seed << '\n';
  for (std::size_t t = 0; t < f.trees().size(); ++t) {
    const auto& nodes = f.trees()[t].nodes;
    out << "tree " << t << ' ' << nodes.size() << '\n';
    for (const auto& n : nodes) {
      if (n.leaf()) {
        out << "leaf " << n.n_samples;
        for (double p : n.dist) out << ' ' << num(p);
      } else {
        out << "split " << n.feature << ' ' << num(n.threshold) << ' ' << n.left << ' ' << n.right << ' ' << n.n_samples;
      }
      out << '\n';
    }
  }
}

inline ForestModel read_forest(std::istream& in) {
  auto fail = [](const std::string& what) -> ParseError { return ParseError("forest file: " + what); };
  std::string tok;
  int version = 0;
  if (!(in >> tok >> version) || tok != "forest" || version != 1) throw fail("bad header");
  std::size_t ncol = 0;
  if (!(in >> tok >> ncol) || tok != "columns") throw fail("missing columns line");
  std::vector<std::string> columns(ncol);
  for (auto& c : columns)
    if (!(in >> c)) throw fail("truncated columns");
  ForestConfig cfg;
  if (!(in >> tok >> cfg.n_trees >> cfg.max_depth >> cfg.feature_bag_fraction >> cfg.min_samples_leaf >> cfg.seed) ||
      tok != "config")
    throw fail("missing config line");
  std::vector<DecisionTree> trees;
  for (std::size_t t = 0; t < cfg.n_trees; ++t) {
    std::size_t index = 0, count = 0;
    if (!(in >> tok >> index >> count) || tok != "tree" || index != t) throw fail("bad tree header");
    DecisionTree tree;
    tree.nodes.resize(count);
    for (auto& n : tree.nodes) {
      if (!(in >> tok)) throw fail("truncated tree");
      if (tok == "leaf") {
        n.dist.resize(kNumClasses);
        if (!(in >> n.n_samples)) throw fail("bad leaf");
        for (auto& p : n.dist)
          if (!(in >> p)) throw fail("bad leaf distribution");
      } else if (tok == "split") {
        if (!(in >> n.feature >> n.threshold >> n.left >> n.right >> n.n_samples)) throw fail("bad split");
        auto in_range = [&](int v) { return v > 0 && static_cast<std::size_t>(v) < count; };
        if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= ncol || !in_range(n.left) || !in_range(n.right))
          throw fail("split references out of range");
      } else {
        throw fail("unknown node kind '" + tok + "'");
      }
    }
    trees.push_back(std::move(tree));
  }
  return ForestModel(std::move(columns), std::move(trees), cfg);
}

/// Indented rendering of each tree: split criteria on branches, class
/// distributions and sample counts at leaves.
inline void render_forest(std::ostream& out, const ForestModel& f, std::size_t max_trees = SIZE_MAX) {
  const auto& cols = f.columns();
  for (std::size_t t = 0; t < f.trees().size() && t < max_trees; ++t) {
    out << "tree " << t << '\n';
    const auto& nodes = f.trees()[t].nodes;
    auto rec = [&](auto&& self, int i, std::size_t depth, const std::string& edge) -> void {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      out << std::string(2 * (depth + 1), ' ') << edge;
      if (n.leaf()) {
        auto top = std::max_element(n.dist.begin(), n.dist.end()) - n.dist.begin();
        out << "class " << top << " (" << n.n_samples << ") [";
        bool first = true;
        for (std::size_t c = 0; c < n.dist.size(); ++c)
          if (n.dist[c] > 0) {
            out << (first ? "" : " ") << c << ':' << std::setprecision(3) << n.dist[c];
            first = false;
          }
        out << "]\n";
        return;
      }
      const std::string& name = cols[static_cast<std::size_t>(n.feature)];
      out << '{' << name << "} (" << n.n_samples << ")\n";
      std::ostringstream thr;
      thr << std::setprecision(6) << n.threshold;
      self(self, n.left, depth + 1, "<= " + thr.str() + ": ");
      self(self, n.right, depth + 1, ">  " + thr.str() + ": ");
    };
    rec(rec, 0, 0, "");
  }
}

}  // namespace mhai
