#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mhai/aggregate.hpp"
#include "mhai/chain.hpp"
#include "mhai/cohort.hpp"
#include "mhai/dataset.hpp"
#include "mhai/error.hpp"
#include "mhai/forest.hpp"
#include "mhai/hash.hpp"
#include "mhai/nn.hpp"
#include "mhai/stream.hpp"

namespace mhai {

enum class Phase { Collecting, Training, AwaitingElection, Aggregating, Calibrating, Ready };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Collecting: return "Collecting";
    case Phase::Training: return "Training";
    case Phase::AwaitingElection: return "AwaitingElection";
    case Phase::Aggregating: return "Aggregating";
    case Phase::Calibrating: return "Calibrating";
    case Phase::Ready: return "Ready";
  }
  return "?";
}

/// Declared transition relation. Staying put is always allowed; going back to
/// Training starts the next federation round.
inline bool allowed_transition(Phase from, Phase to) {
  if (from == to) return true;
  switch (from) {
    case Phase::Collecting: return to == Phase::Training;
    case Phase::Training: return to == Phase::AwaitingElection;
    case Phase::AwaitingElection:
      return to == Phase::Aggregating || to == Phase::Calibrating || to == Phase::Training;
    case Phase::Aggregating: return to == Phase::Calibrating || to == Phase::Training;
    case Phase::Calibrating: return to == Phase::Ready;
    case Phase::Ready: return false;
  }
  return false;
}

struct ClientConfig {
  TrainConfig train;
  std::size_t local_epochs = 10;  // epochs of local training per federation round
  std::size_t federation_rounds = 5;
  double train_fraction = 0.7;
  std::size_t calibration_samples = 70;  // 7 simulated days x 10 samples
  ForestConfig forest;
  AggregationRule rule = AggregationRule::SampleWeighted;
  std::uint64_t seed = 1;       // per-client splits and shuffles derive from this
  std::uint64_t init_seed = 3;  // shared: every client starts a subset model from the same init
};

struct TraceEntry {
  std::size_t step = 0;
  Address address;
  Phase from = Phase::Collecting;
  Phase to = Phase::Collecting;
  std::string action;
};

/// Smartphone state machine. Each step() performs one phase's worth of work
/// and talks to other parties only through the contract.
class Client {
 public:
  Client(Address address, PatientDataset data, ClientConfig cfg, Normalizer normalizer)
      : address_(std::move(address)), raw_(std::move(data)), cfg_(std::move(cfg)), norm_(std::move(normalizer)) {
    raw_.validate();
    cfg_.train.validate();
    cfg_.forest.validate();
    if (cfg_.federation_rounds < 1) throw ConfigError("federation_rounds must be >= 1");
  }

  const Address& address() const { return address_; }
  Phase phase() const { return phase_; }
  const StreamSubset& streams() const { return raw_.streams; }
  const std::vector<StreamSubset>& subsets() const { return subsets_; }
  const std::map<StreamSubset, ModelParams>& model_store() const { return store_; }
  const std::optional<ForestModel>& forest() const { return forest_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  const std::vector<std::string>& log() const { return log_; }
  const PatientDataset& raw_data() const { return raw_; }
  const PatientDataset& train_data() const { return train_; }
  const PatientDataset& calibration_data() const { return calibration_; }
  const PatientDataset& evaluation_data() const { return evaluation_; }
  std::size_t rounds_completed() const { return rounds_done_; }
  bool crashed() const { return crashed_; }
  bool has_pending_models() const { return !pending_.empty(); }

  /// Fault injection: the client goes silent right after registering in the
  /// given contract round.
  void crash_after_register_in_round(std::uint64_t round) { crash_round_ = round; }

  /// Training work of the current round; pure with respect to the contract,
  /// so a harness may run it for several clients in parallel before step().
  void train_local() {
    if (phase_ != Phase::Training) throw LifecycleError(address_ + ": train_local outside Training phase");
    pending_.clear();
    for (const auto& s : subsets_) {
      const ModelParams init = store_.contains(s)
                                   ? store_.at(s)
                                   : init_params(NetShape{s.size(), cfg_.train.hidden, kNumClasses},
                                                 mix_seed(cfg_.init_seed, s.key()));
      TrainConfig tc = cfg_.train;
      tc.max_epochs = cfg_.local_epochs;
      tc.seed = mix_seed(mix_seed(cfg_.seed, s.key()), rounds_done_);
      auto result = train(init, labeled_.at(s), {}, tc);
      for (const auto& w : result.warnings) log_.push_back(s.key() + ": " + w);
      pending_[s] = std::move(result.params);
    }
  }

  /// Runs one phase's work. Returns false if nothing changed (waiting).
  bool step(Contract& contract, std::size_t clock) {
    if (crashed_) return false;
    const Phase before = phase_;
    std::string action;
    switch (phase_) {
      case Phase::Collecting: action = collect(); break;
      case Phase::Training: action = train_and_register(contract); break;
      case Phase::AwaitingElection: action = await_election(contract); break;
      case Phase::Aggregating: action = aggregate(contract); break;
      case Phase::Calibrating: action = calibrate(); break;
      case Phase::Ready: break;
    }
    if (action.empty()) return false;
    trace_.push_back({clock, address_, before, phase_, action});
    return true;
  }

  // --- evaluation --------------------------------------------------------

  /// Class predicted for a raw (unnormalized) record carrying exactly the
  /// client's streams.
  int predict_affect(const SampleRecord& record) const {
    if (phase_ != Phase::Ready || !forest_) throw LifecycleError(address_ + ": predict_affect before Ready");
    check_schema(record);
    return forest_->predict(row_for(norm_.apply(record)));
  }

  double forest_accuracy(const PatientDataset& normalized) const {
    if (!forest_) throw LifecycleError(address_ + ": no forest");
    if (normalized.empty()) return 0;
    std::size_t hit = 0;
    for (const auto& r : normalized.records) hit += forest_->predict(row_for(r)) == r.label;
    return static_cast<double>(hit) / static_cast<double>(normalized.size());
  }

  double model_accuracy(const StreamSubset& s, const PatientDataset& normalized) const {
    return accuracy(store_.at(s), to_labeled(normalized, s));
  }

 private:
  std::string collect() {
    const auto normalized = norm_.apply(raw_);
    auto [train, holdout] = train_test_split(normalized, cfg_.train_fraction, mix_seed(cfg_.seed, "split"));
    if (train.empty()) throw ConfigError(address_ + ": no training records after split");
    auto [cal, eval] = split_at(holdout, cfg_.calibration_samples);
    if (cal.empty()) throw ConfigError(address_ + ": held-out part too small for a calibration window");
    train_ = std::move(train);
    calibration_ = std::move(cal);
    evaluation_ = std::move(eval);
    subsets_ = power_set(raw_.streams);
    for (const auto& s : subsets_) labeled_[s] = to_labeled(project(train_, s), s);
    phase_ = Phase::Training;
    return "collected " + std::to_string(raw_.size()) + " records from " + std::to_string(raw_.streams.size()) +
           " stream(s)";
  }

  std::string train_and_register(Contract& contract) {
    if (pending_.empty()) train_local();
    auto receipt = contract.register_finished(address_, subsets_);
    if (!receipt) {
      log_.push_back("register rejected: " + receipt.reason);
      return {};
    }
    for (const auto& [s, params] : pending_) store_[s] = params;
    round_ = contract.round();
    phase_ = Phase::AwaitingElection;
    if (crash_round_ && *crash_round_ == round_) crashed_ = true;
    return "trained " + std::to_string(subsets_.size()) + " model(s), registered in round " + std::to_string(round_);
  }

  std::string await_election(Contract& contract) {
    if (contract.round() != round_) return finish_round(contract, "round closed by contract");
    if (!submitted_) {
      for (const auto& s : subsets_)
        if (!contract.aggregator_for(s)) return {};
      std::size_t sent = 0;
      for (const auto& s : subsets_) {
        auto receipt = contract.submit_params(address_, s, pending_.at(s), train_.size());
        if (receipt) ++sent;
        else log_.push_back("submit " + s.key() + " rejected: " + receipt.reason);
        if (contract.aggregator_for(s) == address_) elected_.insert(s);
      }
      submitted_ = true;
      if (!elected_.empty()) phase_ = Phase::Aggregating;
      return "submitted " + std::to_string(sent) + " model(s)" +
             (elected_.empty() ? "" : ", elected for " + std::to_string(elected_.size()) + " subset(s)");
    }
    if (absorb(contract) && received_.size() == subsets_.size())
      return finish_round(contract, "received all aggregates");
    return {};
  }

  std::string aggregate(Contract& contract) {
    std::string action;
    for (auto& item : contract.collect_inbox(address_)) inbox_[item.subset].push_back(std::move(item.contribution));
    for (const auto& s : elected_) {
      if (broadcasted_.contains(s) || contract.round() != round_) continue;
      if (!contract.submissions_closed() || inbox_[s].size() != contract.submitted_count(s)) continue;
      auto avg = fed_average(inbox_[s], cfg_.rule);
      auto receipt = contract.broadcast_aggregate(address_, s, avg);
      if (!receipt) {
        log_.push_back("broadcast " + s.key() + " rejected: " + receipt.reason);
        continue;
      }
      broadcasted_.insert(s);
      action += (action.empty() ? "broadcast " : ",") + s.key();
    }
    const bool got = absorb(contract);
    if (received_.size() == subsets_.size()) return finish_round(contract, action.empty() ? "received all aggregates" : action);
    if (contract.round() != round_) return finish_round(contract, "round closed by contract");
    if (action.empty() && got) action = "received aggregates";
    return action;
  }

  bool absorb(Contract& contract) {
    bool any = false;
    for (auto& d : contract.take_broadcasts(address_)) {
      if (d.round != round_) continue;
      aggregates_[d.subset] = std::move(d.params);
      received_.insert(d.subset);
      any = true;
    }
    return any;
  }

  std::string finish_round(Contract& contract, std::string why) {
    absorb(contract);
    std::size_t local = 0;
    for (const auto& s : subsets_) {
      if (aggregates_.contains(s)) {
        store_[s] = aggregates_.at(s);
      } else {
        store_[s] = pending_.at(s);
        ++local;
      }
    }
    if (local) log_.push_back("round " + std::to_string(round_) + ": kept " + std::to_string(local) + " local model(s)");
    ++rounds_done_;
    pending_.clear();
    aggregates_.clear();
    received_.clear();
    inbox_.clear();
    elected_.clear();
    broadcasted_.clear();
    submitted_ = false;
    phase_ = rounds_done_ < cfg_.federation_rounds ? Phase::Training : Phase::Calibrating;
    return why + "; round " + std::to_string(round_) + " done";
  }

  std::string calibrate() {
    auto rows = build_calibration(store_, raw_.streams, calibration_.records);
    ForestConfig fc = cfg_.forest;
    fc.seed = mix_seed(cfg_.forest.seed, address_);
    auto trained = train_forest(rows, fc);
    for (const auto& w : trained.warnings) log_.push_back("forest: " + w);
    forest_ = std::move(trained.model);
    phase_ = Phase::Ready;
    return "trained forest on " + std::to_string(rows.size()) + " calibration rows";
  }

  void check_schema(const SampleRecord& r) const {
    for (const auto& s : raw_.streams.members())
      if (!r.values.contains(s)) throw DomainError(address_ + ": record lacks owned stream " + s.name);
    if (r.values.size() != raw_.streams.size()) throw DomainError(address_ + ": record carries streams the client does not own");
  }

  CalibrationRow row_for(const SampleRecord& normalized) const {
    CalibrationRow row;
    for (const auto& s : raw_.streams.members()) row.features.emplace(s, normalized.values.at(s));
    for (const auto& s : subsets_) row.model_preds.emplace(s, predict_class(store_.at(s), features_of(normalized, s)));
    row.label = normalized.label;
    return row;
  }

  Address address_;
  PatientDataset raw_;
  ClientConfig cfg_;
  Normalizer norm_;
  Phase phase_ = Phase::Collecting;

  PatientDataset train_, calibration_, evaluation_;  // normalized
  std::vector<StreamSubset> subsets_;
  std::map<StreamSubset, LabeledData> labeled_;
  std::map<StreamSubset, ModelParams> store_;
  std::map<StreamSubset, ModelParams> pending_;
  std::map<StreamSubset, ModelParams> aggregates_;
  std::map<StreamSubset, std::vector<WeightedParams>> inbox_;
  std::set<StreamSubset> received_, elected_, broadcasted_;
  bool submitted_ = false;
  std::uint64_t round_ = 0;
  std::size_t rounds_done_ = 0;
  std::optional<std::uint64_t> crash_round_;
  bool crashed_ = false;
  std::optional<ForestModel> forest_;
  std::vector<TraceEntry> trace_;
  std::vector<std::string> log_;
};

}  // namespace mhai
