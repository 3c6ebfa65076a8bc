#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mhai/error.hpp"
#include "mhai/hash.hpp"
#include "mhai/stream.hpp"

namespace mhai {

inline constexpr int kNumClasses = 11;  // affect 0..10

inline bool valid_label(int label) { return label >= 0 && label < kNumClasses; }

struct SampleRecord {
  std::int64_t timestamp = 0;
  std::map<StreamId, double> values;
  int label = 0;

  bool operator==(const SampleRecord&) const = default;
};

struct PatientDataset {
  std::string patient_id;
  StreamSubset streams;
  std::vector<SampleRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  bool operator==(const PatientDataset&) const = default;

  /// Checks the keyset and timestamp-order invariants.
  void validate() const {
    std::int64_t last = INT64_MIN;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (!valid_label(r.label))
        throw DomainError(patient_id + ": record " + std::to_string(i) + " has label " +
                          std::to_string(r.label));
      if (r.values.size() != streams.size())
        throw DomainError(patient_id + ": record " + std::to_string(i) + " stream count mismatch");
      for (const auto& s : streams.members())
        if (!r.values.contains(s))
          throw DomainError(patient_id + ": record " + std::to_string(i) + " lacks stream " + s.name);
      if (r.timestamp < last)
        throw DomainError(patient_id + ": timestamps decrease at record " + std::to_string(i));
      last = r.timestamp;
    }
  }
};

/// Label distribution over the 11 affect classes.
class LabelSkew {
 public:
  LabelSkew() { weights_.fill(1.0 / kNumClasses); }

  explicit LabelSkew(const std::vector<double>& w) {
    if (w.size() != kNumClasses)
      throw ConfigError("label skew needs 11 weights, got " + std::to_string(w.size()));
    double sum = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!(w[i] >= 0) || !std::isfinite(w[i])) throw ConfigError("label skew weight " + std::to_string(i) + " is negative");
      weights_[i] = w[i];
      sum += w[i];
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("label skew weights sum to " + std::to_string(sum) + ", not 1");
  }

  static LabelSkew uniform() { return {}; }

  const std::array<double, kNumClasses>& weights() const { return weights_; }

  bool degenerate() const {
    return std::count_if(weights_.begin(), weights_.end(), [](double w) { return w > 0; }) <= 1;
  }

 private:
  std::array<double, kNumClasses> weights_{};
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    auto b = f.find_first_not_of(" \t");
    auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

template <typename T>
inline std::optional<T> parse_number(const std::string& s) {
  T v{};
  if (s.empty()) return std::nullopt;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [p, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads `t,<stream...>,affect` CSV. Data rows are numbered from 1 in error
/// messages (the header is not counted). Columns other than `t`, `affect` and
/// the requested streams are ignored.
inline PatientDataset read_csv(std::istream& in, const StreamSubset& streams, std::string patient_id) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty CSV: missing header row");
  auto header = detail::split_csv_line(line);
  auto column_of = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw SchemaError("missing column '" + name + "'");
  };
  const std::size_t t_col = column_of("t");
  std::vector<std::pair<StreamId, std::size_t>> stream_cols;
  for (const auto& s : streams.members()) stream_cols.emplace_back(s, column_of(s.name));
  const std::size_t affect_col = column_of("affect");

  PatientDataset ds{std::move(patient_id), streams, {}};
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    auto fields = detail::split_csv_line(line);
    auto field = [&](std::size_t col) -> const std::string& {
      static const std::string kEmpty;
      return col < fields.size() ? fields[col] : kEmpty;
    };
    const std::string where = "row " + std::to_string(row);
    SampleRecord rec;
    auto t = detail::parse_number<std::int64_t>(field(t_col));
    if (!t) throw ParseError(where + ": timestamp '" + field(t_col) + "' is not an integer");
    rec.timestamp = *t;
    for (const auto& [sid, col] : stream_cols) {
      auto v = detail::parse_number<double>(field(col));
      if (!v || !std::isfinite(*v))
        throw ParseError(where + ": missing or non-numeric value for stream " + sid.name);
      rec.values.emplace(sid, *v);
    }
    auto a = detail::parse_number<int>(field(affect_col));
    if (!a) throw ParseError(where + ": affect '" + field(affect_col) + "' is not an integer");
    if (!valid_label(*a)) throw ParseError(where + ": affect " + std::to_string(*a) + " outside 0..10");
    rec.label = *a;
    if (!ds.records.empty() && rec.timestamp < ds.records.back().timestamp)
      throw ParseError(where + ": timestamp decreases");
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

inline PatientDataset load_csv(const std::filesystem::path& path, const StreamSubset& streams) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_csv(in, streams, path.stem().string());
}

inline void write_csv(std::ostream& out, const PatientDataset& ds) {
  out << "t";
  for (const auto& s : ds.streams.members()) out << ',' << s.name;
  out << ",affect\n";
  for (const auto& r : ds.records) {
    out << r.timestamp;
    for (const auto& s : ds.streams.members()) out << ',' << detail::format_double(r.values.at(s));
    out << ',' << r.label << '\n';
  }
}

inline std::string to_csv(const PatientDataset& ds) {
  std::ostringstream os;
  write_csv(os, ds);
  return os.str();
}

inline void save_csv(const std::filesystem::path& path, const PatientDataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_csv(out, ds);
}

// ---------------------------------------------------------------------------
// Synthetic ground truth
//
// Each known stream s carries a multiplier a_s (coprime to 11) and a shift b_s.
// In grid units the class-conditional mean of stream s for affect c is
//
//   mean(s, c) = ((a_s * c + b_s) mod 11) - 5
//
// so every stream alone orders the 11 classes distinctly, and a sample is
// mean + noise_sigma * N(0, 1). Physical values are offset + scale * grid.

struct StreamProfile {
  int multiplier;
  int shift;
  double offset;  // physical value at grid 0
  double scale;   // physical units per grid unit
};

inline const StreamProfile& stream_profile(const StreamId& s) {
  static const std::map<std::string, StreamProfile> kProfiles = {
      {"ECG", {1, 0, 0.9, 0.05}},    // mV
      {"EDA", {3, 1, 4.0, 0.4}},     // uS
      {"ST", {4, 2, 33.5, 0.25}},    // degC
      {"Resp", {5, 3, 16.0, 1.2}},   // breaths/min
      {"SBP", {7, 4, 120.0, 4.0}},   // mmHg
      {"DBP", {9, 5, 78.0, 3.0}},    // mmHg
  };
  auto it = kProfiles.find(s.name);
  if (it == kProfiles.end()) throw ConfigError("no synthetic profile for stream '" + s.name + "'");
  return it->second;
}

inline double class_mean_grid(const StreamId& s, int label) {
  const auto& p = stream_profile(s);
  return static_cast<double>((p.multiplier * label + p.shift) % kNumClasses) - 5.0;
}

inline double class_mean_physical(const StreamId& s, int label) {
  const auto& p = stream_profile(s);
  return p.offset + p.scale * class_mean_grid(s, label);
}

/// Nearest class-mean classifier in grid units: the generator's own oracle.
inline int nearest_class_mean(const std::map<StreamId, double>& values) {
  int best = 0;
  double best_d = INFINITY;
  for (int c = 0; c < kNumClasses; ++c) {
    double d = 0;
    for (const auto& [s, v] : values) {
      const auto& p = stream_profile(s);
      double g = (v - p.offset) / p.scale - class_mean_grid(s, c);
      d += g * g;
    }
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

enum class StreamAssignment { Random, Nested };

struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t n_patients = 142;
  // Probability of owning 1..6 streams.
  std::array<double, 6> streams_per_patient{0, 0, 0, 0, 0, 1};
  std::size_t samples_per_patient = 600;
  LabelSkew skew;
  double noise_sigma = 0.4;
  std::vector<StreamId> universe = default_universe();
  StreamAssignment assignment = StreamAssignment::Random;
  // When > 0 each patient only sees this many randomly chosen classes
  // (skew restricted to them and renormalized).
  std::size_t classes_per_patient = 0;
};

struct SyntheticPopulation {
  std::vector<PatientDataset> patients;
  std::vector<std::string> warnings;
};

inline SyntheticPopulation generate_synthetic(const SyntheticConfig& cfg) {
  validate_universe(cfg.universe);
  if (cfg.n_patients < 1) throw ConfigError("n_patients must be >= 1");
  if (cfg.samples_per_patient < 1) throw ConfigError("samples_per_patient must be >= 1");
  if (!(cfg.noise_sigma >= 0) || !std::isfinite(cfg.noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (cfg.classes_per_patient > kNumClasses) throw ConfigError("classes_per_patient must be <= 11");
  double dist_sum = 0;
  for (std::size_t k = 0; k < cfg.streams_per_patient.size(); ++k) {
    double w = cfg.streams_per_patient[k];
    if (!(w >= 0)) throw ConfigError("streams_per_patient has a negative entry");
    if (w > 0 && k + 1 > cfg.universe.size())
      throw ConfigError("streams_per_patient puts mass on " + std::to_string(k + 1) +
                        " streams but the universe has " + std::to_string(cfg.universe.size()));
    dist_sum += w;
  }
  if (std::abs(dist_sum - 1.0) > 1e-9) throw ConfigError("streams_per_patient must sum to 1");
  for (const auto& s : cfg.universe) (void)stream_profile(s);

  SyntheticPopulation pop;
  if (cfg.skew.degenerate())
    pop.warnings.push_back("degenerate label skew: all mass on one class; models will overfit to it");

  for (std::size_t p = 0; p < cfg.n_patients; ++p) {
    std::mt19937_64 rng(mix_seed(cfg.seed, p));
    std::discrete_distribution<int> count_dist(cfg.streams_per_patient.begin(), cfg.streams_per_patient.end());
    const std::size_t k = static_cast<std::size_t>(count_dist(rng)) + 1;
    std::vector<StreamId> owned = cfg.universe;
    if (cfg.assignment == StreamAssignment::Random) std::shuffle(owned.begin(), owned.end(), rng);
    owned.resize(k);

    auto weights = cfg.skew.weights();
    if (cfg.classes_per_patient > 0) {
      std::vector<int> classes(kNumClasses);
      std::iota(classes.begin(), classes.end(), 0);
      std::shuffle(classes.begin(), classes.end(), rng);
      std::array<double, kNumClasses> restricted{};
      for (std::size_t i = 0; i < cfg.classes_per_patient; ++i) restricted[classes[i]] = weights[classes[i]];
      if (std::accumulate(restricted.begin(), restricted.end(), 0.0) <= 0) {
        restricted = {};
        for (std::size_t i = 0; i < cfg.classes_per_patient; ++i) restricted[classes[i]] = 1.0;
      }
      weights = restricted;
    }
    std::discrete_distribution<int> label_dist(weights.begin(), weights.end());
    std::normal_distribution<double> noise(0.0, 1.0);

    char id[32];
    std::snprintf(id, sizeof id, "p%03zu", p);
    PatientDataset ds{id, StreamSubset(owned), {}};
    ds.records.reserve(cfg.samples_per_patient);
    for (std::size_t i = 0; i < cfg.samples_per_patient; ++i) {
      SampleRecord r;
      r.timestamp = static_cast<std::int64_t>(i);
      r.label = label_dist(rng);
      for (const auto& s : ds.streams.members()) {
        const auto& prof = stream_profile(s);
        double grid = class_mean_grid(s, r.label) + cfg.noise_sigma * noise(rng);
        r.values.emplace(s, prof.offset + prof.scale * grid);
      }
      ds.records.push_back(std::move(r));
    }
    pop.patients.push_back(std::move(ds));
  }
  return pop;
}

// ---------------------------------------------------------------------------
// Splits

/// Random partition; the train part has round-half-up(n * f) records. Both
/// parts keep the original record order.
inline std::pair<PatientDataset, PatientDataset> train_test_split(const PatientDataset& ds, double train_fraction,
                                                                  std::uint64_t seed) {
  if (ds.empty()) throw DomainError("train_test_split of an empty dataset");
  if (!(train_fraction > 0 && train_fraction < 1)) throw DomainError("train_fraction must be in (0, 1)");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction + 0.5));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<char> in_train(n, 0);
  for (std::size_t i = 0; i < n_train; ++i) in_train[idx[i]] = 1;
  PatientDataset train{ds.patient_id, ds.streams, {}}, test{ds.patient_id, ds.streams, {}};
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? train : test).records.push_back(ds.records[i]);
  return {std::move(train), std::move(test)};
}

/// Chronological split: the first `n` records and the rest.
inline std::pair<PatientDataset, PatientDataset> split_at(const PatientDataset& ds, std::size_t n) {
  n = std::min(n, ds.size());
  PatientDataset head{ds.patient_id, ds.streams, {ds.records.begin(), ds.records.begin() + static_cast<std::ptrdiff_t>(n)}};
  PatientDataset tail{ds.patient_id, ds.streams, {ds.records.begin() + static_cast<std::ptrdiff_t>(n), ds.records.end()}};
  return {std::move(head), std::move(tail)};
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-stream affine standardization (v - mean) / std.
class Normalizer {
 public:
  struct Stat {
    double mean = 0;
    double std = 1;
  };

  Normalizer() = default;

  /// z-score statistics pooled over the given datasets.
  static Normalizer fit(const std::vector<const PatientDataset*>& data) {
    std::map<StreamId, std::array<double, 3>> acc;  // n, sum, sumsq
    for (const auto* ds : data)
      for (const auto& r : ds->records)
        for (const auto& [s, v] : r.values) {
          auto& a = acc[s];
          a[0] += 1;
          a[1] += v;
          a[2] += v * v;
        }
    Normalizer n;
    for (const auto& [s, a] : acc) {
      double mean = a[1] / a[0];
      double var = std::max(0.0, a[2] / a[0] - mean * mean);
      double sd = std::sqrt(var);
      n.stats_[s] = {mean, sd > 1e-12 ? sd : 1.0};
    }
    return n;
  }

  static Normalizer fit(const PatientDataset& ds) { return fit(std::vector<const PatientDataset*>{&ds}); }

  /// Fixed per-stream reference ranges taken from the synthetic stream
  /// profiles: centre at the grid origin, unit variance over a uniform label.
  static Normalizer reference(const std::vector<StreamId>& universe) {
    Normalizer n;
    for (const auto& s : universe) {
      const auto& p = stream_profile(s);
      n.stats_[s] = {p.offset, p.scale * std::sqrt(10.0)};
    }
    return n;
  }

  const std::map<StreamId, Stat>& stats() const { return stats_; }

  double apply(const StreamId& s, double v) const {
    auto it = stats_.find(s);
    if (it == stats_.end()) throw DomainError("normalizer has no statistics for stream " + s.name);
    return (v - it->second.mean) / it->second.std;
  }

  SampleRecord apply(const SampleRecord& r) const {
    SampleRecord out = r;
    for (auto& [s, v] : out.values) v = apply(s, v);
    return out;
  }

  PatientDataset apply(const PatientDataset& ds) const {
    PatientDataset out{ds.patient_id, ds.streams, {}};
    out.records.reserve(ds.size());
    for (const auto& r : ds.records) out.records.push_back(apply(r));
    return out;
  }

 private:
  std::map<StreamId, Stat> stats_;
};

}  // namespace mhai
