#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhai/aggregate.hpp"
#include "mhai/chain.hpp"
#include "mhai/dataset.hpp"
#include "mhai/error.hpp"
#include "mhai/forest.hpp"
#include "mhai/nn.hpp"
#include "mhai/stream.hpp"

namespace mhai {

struct Dropout {
  std::size_t patient = 0;  // index into the population
  std::uint64_t round = 1;  // crashes right after registering in this round
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t n_patients = 142;
  std::array<double, 6> device_count_distribution{0.25, 0.25, 0.25, 0.25, 0, 0};
  std::vector<StreamId> universe = default_universe();
  StreamAssignment stream_assignment = StreamAssignment::Random;
  std::vector<double> label_skew = std::vector<double>(kNumClasses, 1.0 / kNumClasses);
  double noise_sigma = 0.4;
  std::size_t samples_per_patient = 600;
  std::size_t classes_per_patient = 0;
  int label_bins = kNumClasses;
  std::string data_dir;  // when set, patients are loaded from CSV instead of generated

  TrainConfig train;
  std::size_t local_epochs = 10;
  std::size_t federation_rounds = 5;
  ForestConfig forest;
  ElectionPolicy election_policy = ElectionPolicy::SeededHash;
  AggregationRule aggregation = AggregationRule::SampleWeighted;
  double train_fraction = 0.7;
  std::size_t calibration_samples = 70;
  std::string normalization = "reference";  // or "pooled"
  bool baseline = true;
  std::size_t sweep_max_nodes = 0;  // 0: no node sweep in run_experiment
  std::string sweep_subset;         // empty: full universe
  std::vector<Dropout> dropouts;
  std::size_t threads = 0;
  std::string output_dir;

  void validate() const {
    validate_universe(universe);
    if (n_patients < 1) throw ConfigError("n_patients must be >= 1");
    if (samples_per_patient < 1) throw ConfigError("samples_per_patient must be >= 1");
    double sum = 0;
    for (double w : device_count_distribution) {
      if (!(w >= 0)) throw ConfigError("device_count_distribution has a negative entry");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("device_count_distribution must sum to 1");
    (void)LabelSkew(label_skew);
    if (!(noise_sigma >= 0)) throw ConfigError("noise_sigma must be >= 0");
    if (classes_per_patient > kNumClasses) throw ConfigError("classes_per_patient must be <= 11");
    if (label_bins < 1 || label_bins > kNumClasses) throw ConfigError("label_bins must be in 1..11");
    train.validate();
    forest.validate();
    if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    if (federation_rounds < 1) throw ConfigError("federation_rounds must be >= 1");
    if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("train_fraction must be in (0, 1)");
    if (calibration_samples < 1) throw ConfigError("calibration_samples must be >= 1");
    if (normalization != "reference" && normalization != "pooled")
      throw ConfigError("normalization must be \"reference\" or \"pooled\"");
    if (!sweep_subset.empty()) {
      auto s = StreamSubset::parse(sweep_subset);
      for (const auto& m : s.members())
        if (std::find(universe.begin(), universe.end(), m) == universe.end())
          throw ConfigError("sweep_subset stream " + m.name + " is not in the universe");
    }
    for (const auto& d : dropouts)
      if (d.patient >= n_patients) throw ConfigError("dropout patient index out of range");
  }

  SyntheticConfig synthetic() const {
    SyntheticConfig s;
    s.seed = seed;
    s.n_patients = n_patients;
    s.streams_per_patient = device_count_distribution;
    s.samples_per_patient = samples_per_patient;
    s.skew = LabelSkew(label_skew);
    s.noise_sigma = noise_sigma;
    s.universe = universe;
    s.assignment = stream_assignment;
    s.classes_per_patient = classes_per_patient;
    return s;
  }
};

namespace detail {

// Reads fields from one JSON object and rejects any key it did not consume.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config field '" + field(key) + "' has the wrong type");
    }
  }

  const nlohmann::json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("unknown config field '" + field(k) + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : "config field '" + path_ + "': "; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::ObjectReader r(j, "");
  r.read("seed", c.seed);
  r.read("n_patients", c.n_patients);
  std::vector<double> dist;
  r.read("device_count_distribution", dist);
  if (!dist.empty()) {
    if (dist.size() != 6) throw ConfigError("device_count_distribution needs 6 entries (1..6 devices)");
    std::copy(dist.begin(), dist.end(), c.device_count_distribution.begin());
  }
  std::vector<std::string> universe;
  r.read("universe", universe);
  if (!universe.empty()) c.universe.assign(universe.begin(), universe.end());
  std::string assignment = "random";
  r.read("stream_assignment", assignment);
  if (assignment == "random") c.stream_assignment = StreamAssignment::Random;
  else if (assignment == "nested") c.stream_assignment = StreamAssignment::Nested;
  else throw ConfigError("stream_assignment must be \"random\" or \"nested\"");
  r.read("label_skew", c.label_skew);
  r.read("noise_sigma", c.noise_sigma);
  r.read("samples_per_patient", c.samples_per_patient);
  r.read("classes_per_patient", c.classes_per_patient);
  r.read("label_bins", c.label_bins);
  r.read("data_dir", c.data_dir);
  if (const auto* t = r.child("train")) {
    detail::ObjectReader tr(*t, "train");
    tr.read("max_epochs", c.train.max_epochs);
    tr.read("batch_size", c.train.batch_size);
    tr.read("learning_rate", c.train.learning_rate);
    tr.read("early_stop_patience", c.train.early_stop_patience);
    tr.read("lr_reduce_patience", c.train.lr_reduce_patience);
    tr.read("lr_reduce_factor", c.train.lr_reduce_factor);
    tr.read("seed", c.train.seed);
    tr.read("hidden", c.train.hidden);
    tr.finish();
  }
  r.read("local_epochs", c.local_epochs);
  r.read("federation_rounds", c.federation_rounds);
  if (const auto* f = r.child("forest")) {
    detail::ObjectReader fr(*f, "forest");
    fr.read("n_trees", c.forest.n_trees);
    fr.read("max_depth", c.forest.max_depth);
    fr.read("feature_bag_fraction", c.forest.feature_bag_fraction);
    fr.read("min_samples_leaf", c.forest.min_samples_leaf);
    fr.read("seed", c.forest.seed);
    fr.finish();
  }
  std::string policy = "seeded_hash";
  r.read("election_policy", policy);
  if (policy == "seeded_hash") c.election_policy = ElectionPolicy::SeededHash;
  else if (policy == "round_robin") c.election_policy = ElectionPolicy::RoundRobin;
  else throw ConfigError("election_policy must be \"seeded_hash\" or \"round_robin\"");
  std::string aggregation = "weighted";
  r.read("aggregation", aggregation);
  if (aggregation == "weighted") c.aggregation = AggregationRule::SampleWeighted;
  else if (aggregation == "unweighted") c.aggregation = AggregationRule::Unweighted;
  else throw ConfigError("aggregation must be \"weighted\" or \"unweighted\"");
  r.read("train_fraction", c.train_fraction);
  r.read("calibration_samples", c.calibration_samples);
  r.read("normalization", c.normalization);
  r.read("baseline", c.baseline);
  r.read("sweep_max_nodes", c.sweep_max_nodes);
  r.read("sweep_subset", c.sweep_subset);
  if (const auto* d = r.child("dropouts")) {
    if (!d->is_array()) throw ConfigError("config field 'dropouts' must be an array");
    for (std::size_t i = 0; i < d->size(); ++i) {
      detail::ObjectReader dr((*d)[i], "dropouts[" + std::to_string(i) + "]");
      Dropout drop;
      dr.read("patient", drop.patient);
      dr.read("round", drop.round);
      dr.finish();
      c.dropouts.push_back(drop);
    }
  }
  r.read("threads", c.threads);
  r.read("output_dir", c.output_dir);
  r.finish();
  c.validate();
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["n_patients"] = c.n_patients;
  j["device_count_distribution"] = std::vector<double>(c.device_count_distribution.begin(), c.device_count_distribution.end());
  std::vector<std::string> u;
  for (const auto& s : c.universe) u.push_back(s.name);
  j["universe"] = u;
  j["stream_assignment"] = c.stream_assignment == StreamAssignment::Nested ? "nested" : "random";
  j["label_skew"] = c.label_skew;
  j["noise_sigma"] = c.noise_sigma;
  j["samples_per_patient"] = c.samples_per_patient;
  j["classes_per_patient"] = c.classes_per_patient;
  j["label_bins"] = c.label_bins;
  j["data_dir"] = c.data_dir;
  j["train"] = {{"max_epochs", c.train.max_epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"early_stop_patience", c.train.early_stop_patience},
                {"lr_reduce_patience", c.train.lr_reduce_patience},
                {"lr_reduce_factor", c.train.lr_reduce_factor},
                {"seed", c.train.seed},
                {"hidden", c.train.hidden}};
  j["local_epochs"] = c.local_epochs;
  j["federation_rounds"] = c.federation_rounds;
  j["forest"] = {{"n_trees", c.forest.n_trees},
                 {"max_depth", c.forest.max_depth},
                 {"feature_bag_fraction", c.forest.feature_bag_fraction},
                 {"min_samples_leaf", c.forest.min_samples_leaf},
                 {"seed", c.forest.seed}};
  j["election_policy"] = c.election_policy == ElectionPolicy::RoundRobin ? "round_robin" : "seeded_hash";
  j["aggregation"] = c.aggregation == AggregationRule::Unweighted ? "unweighted" : "weighted";
  j["train_fraction"] = c.train_fraction;
  j["calibration_samples"] = c.calibration_samples;
  j["normalization"] = c.normalization;
  j["baseline"] = c.baseline;
  j["sweep_max_nodes"] = c.sweep_max_nodes;
  j["sweep_subset"] = c.sweep_subset;
  auto drops = nlohmann::json::array();
  for (const auto& d : c.dropouts) drops.push_back({{"patient", d.patient}, {"round", d.round}});
  j["dropouts"] = drops;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir;
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace mhai
