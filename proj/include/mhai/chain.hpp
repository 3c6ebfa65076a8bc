#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhai/aggregate.hpp"
#include "mhai/error.hpp"
#include "mhai/hash.hpp"
#include "mhai/nn.hpp"
#include "mhai/stream.hpp"

// Simulated aggregator-election contract. A single serialized state machine:
// every mutating call is one "transaction", totally ordered, and appends to an
// append-only ledger. Model payloads travel off-ledger through inboxes and
// mailboxes; the ledger only carries their digests.

namespace mhai {

using Address = std::string;

enum class EntryKind {
  Registered,
  Elected,
  NoCandidates,  // annotation: a requested subset had nobody to elect
  ParamsSubmitted,
  ParamsDelivered,
  AggregateBroadcast,
  RoundTimeout,  // annotation: round closed with subsets still pending
};

inline const char* to_string(EntryKind k) {
  switch (k) {
    case EntryKind::Registered: return "Registered";
    case EntryKind::Elected: return "Elected";
    case EntryKind::NoCandidates: return "NoCandidates";
    case EntryKind::ParamsSubmitted: return "ParamsSubmitted";
    case EntryKind::ParamsDelivered: return "ParamsDelivered";
    case EntryKind::AggregateBroadcast: return "AggregateBroadcast";
    case EntryKind::RoundTimeout: return "RoundTimeout";
  }
  return "?";
}

inline EntryKind entry_kind_from_string(const std::string& s) {
  for (auto k : {EntryKind::Registered, EntryKind::Elected, EntryKind::NoCandidates, EntryKind::ParamsSubmitted,
                 EntryKind::ParamsDelivered, EntryKind::AggregateBroadcast, EntryKind::RoundTimeout})
    if (s == to_string(k)) return k;
  throw ParseError("unknown ledger entry kind '" + s + "'");
}

inline bool carries_params(EntryKind k) {
  return k == EntryKind::ParamsSubmitted || k == EntryKind::ParamsDelivered || k == EntryKind::AggregateBroadcast;
}

struct LedgerEntry {
  std::uint64_t seq = 0;
  std::uint64_t round = 0;
  EntryKind kind = EntryKind::Registered;
  std::optional<StreamSubset> subset;
  Address from;
  Address to;
  std::optional<std::uint64_t> digest;  // present iff carries_params(kind)
  std::uint64_t n_samples = 0;          // weight behind submitted/aggregated params
  std::vector<StreamSubset> announced;  // Registered only: subsets the client trained

  bool operator==(const LedgerEntry&) const = default;
};

struct ContractEvent {
  std::uint64_t round = 0;
  StreamSubset subset;
  Address elected;
};

struct Receipt {
  bool accepted = true;
  std::string reason;

  static Receipt ok() { return {}; }
  static Receipt rejected(std::string why) { return {false, std::move(why)}; }
  explicit operator bool() const { return accepted; }
};

enum class ElectionPolicy { SeededHash, RoundRobin };

/// Election beacon: FNV-1a over seed (8 bytes LE), round (8 bytes LE) and the
/// subset key bytes, then SplitMix64 output mixing.
inline std::uint64_t election_hash(std::uint64_t seed, std::uint64_t round, const std::string& subset_key) {
  return finalize64(Fnv1a64{}.u64(seed).u64(round).text(subset_key).value());
}

struct InboxItem {
  std::uint64_t round = 0;
  StreamSubset subset;
  WeightedParams contribution;
  std::uint64_t digest = 0;
};

struct Delivery {
  std::uint64_t round = 0;
  StreamSubset subset;
  ModelParams params;
  std::uint64_t digest = 0;
};

class Contract {
 public:
  explicit Contract(std::uint64_t rng_seed = 0, ElectionPolicy policy = ElectionPolicy::SeededHash)
      : seed_(rng_seed), policy_(policy) {}

  std::uint64_t round() const { return round_; }
  std::uint64_t rng_seed() const { return seed_; }
  const std::vector<LedgerEntry>& ledger() const { return ledger_; }
  const std::vector<ContractEvent>& events() const { return events_; }
  const std::map<std::uint64_t, ModelParams>& payloads() const { return payloads_; }

  std::set<Address> finished() const {
    std::set<Address> out;
    for (const auto& [a, _] : finished_) out.insert(a);
    return out;
  }

  bool is_finished(const Address& a) const { return finished_.contains(a); }

  /// Finished clients of this round that trained `subset`, sorted.
  std::vector<Address> candidates(const StreamSubset& subset) const {
    std::vector<Address> out;
    for (const auto& [a, subsets] : finished_)
      if (std::find(subsets.begin(), subsets.end(), subset) != subsets.end()) out.push_back(a);
    return out;
  }

  std::optional<Address> aggregator_for(const StreamSubset& subset) const {
    auto it = aggregators_.find(subset);
    if (it == aggregators_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<StreamSubset, Address>& aggregators() const { return aggregators_; }

  bool broadcast_done(const StreamSubset& subset) const { return broadcast_.contains(subset); }

  std::size_t submitted_count(const StreamSubset& subset) const {
    auto it = submitted_count_.find(subset);
    return it == submitted_count_.end() ? 0 : it->second;
  }

  bool has_submitted(const Address& a, const StreamSubset& subset) const { return submitters_.contains({a, subset}); }

  bool submissions_closed() const { return submissions_closed_; }

  // --- transactions -------------------------------------------------------

  /// Learning-finished signal, announcing which subsets the client trained.
  Receipt register_finished(const Address& client, std::vector<StreamSubset> trained) {
    if (client.empty()) return Receipt::rejected("empty address");
    if (finished_.contains(client))
      return Receipt::rejected("client " + client + " already registered in round " + std::to_string(round_));
    if (!aggregators_.empty()) return Receipt::rejected("election for round " + std::to_string(round_) + " already held");
    std::sort(trained.begin(), trained.end(), size_then_lex);
    trained.erase(std::unique(trained.begin(), trained.end()), trained.end());
    finished_[client] = trained;
    LedgerEntry e = make_entry(EntryKind::Registered);
    e.from = client;
    e.announced = std::move(trained);
    append(std::move(e));
    return Receipt::ok();
  }

  /// Elects one aggregator per subset among its candidates. Subsets already
  /// elected this round are skipped; subsets without candidates get a
  /// NoCandidates annotation.
  std::vector<ContractEvent> elect_aggregators(std::vector<StreamSubset> subsets) {
    if (finished_.empty()) throw DomainError("elect_aggregators: no client has finished this round");
    if (subsets.empty()) throw DomainError("elect_aggregators: no subsets given");
    std::sort(subsets.begin(), subsets.end(), size_then_lex);
    subsets.erase(std::unique(subsets.begin(), subsets.end()), subsets.end());
    std::vector<ContractEvent> out;
    for (const auto& subset : subsets) {
      if (aggregators_.contains(subset)) continue;
      auto cands = candidates(subset);
      if (cands.empty()) {
        LedgerEntry e = make_entry(EntryKind::NoCandidates);
        e.subset = subset;
        append(std::move(e));
        continue;
      }
      std::size_t idx = 0;
      if (policy_ == ElectionPolicy::SeededHash)
        idx = static_cast<std::size_t>(election_hash(seed_, round_, subset.key()) % cands.size());
      else
        idx = static_cast<std::size_t>(round_ % cands.size());
      const Address& winner = cands[idx];
      aggregators_[subset] = winner;
      LedgerEntry e = make_entry(EntryKind::Elected);
      e.subset = subset;
      e.to = winner;
      append(std::move(e));
      events_.push_back({round_, subset, winner});
      out.push_back(events_.back());
    }
    return out;
  }

  /// Routes `params` to the elected aggregator's inbox.
  Receipt submit_params(const Address& from, const StreamSubset& subset, const ModelParams& params,
                        std::size_t n_samples) {
    auto agg = aggregator_for(subset);
    if (!agg) return Receipt::rejected("no aggregator elected for " + subset.key() + " in round " + std::to_string(round_));
    if (submissions_closed_) return Receipt::rejected("submissions closed for round " + std::to_string(round_));
    auto cands = candidates(subset);
    if (!std::binary_search(cands.begin(), cands.end(), from))
      return Receipt::rejected(from + " did not register a model for " + subset.key());
    if (submitters_.contains({from, subset}))
      return Receipt::rejected(from + " already submitted " + subset.key() + " this round");
    if (n_samples < 1) return Receipt::rejected("n_samples must be >= 1");
    try {
      params.validate();
    } catch (const DomainError& e) {
      return Receipt::rejected(e.what());
    }
    const auto digest = params_digest(params);
    payloads_.emplace(digest, params);
    inbox_[*agg].push_back({round_, subset, {from, params, n_samples}, digest});
    submitters_.insert({from, subset});
    ++submitted_count_[subset];
    LedgerEntry e = make_entry(EntryKind::ParamsSubmitted);
    e.subset = subset;
    e.from = from;
    e.to = *agg;
    e.digest = digest;
    e.n_samples = n_samples;
    append(std::move(e));
    return Receipt::ok();
  }

  /// Marks the submission deadline of the current round as passed.
  void close_submissions() { submissions_closed_ = true; }

  /// Hands the aggregator everything routed to it, logging one
  /// ParamsDelivered entry per item.
  std::vector<InboxItem> collect_inbox(const Address& aggregator) {
    auto it = inbox_.find(aggregator);
    if (it == inbox_.end()) return {};
    std::vector<InboxItem> items = std::move(it->second);
    inbox_.erase(it);
    for (const auto& item : items) {
      LedgerEntry e = make_entry(EntryKind::ParamsDelivered);
      e.round = item.round;
      e.subset = item.subset;
      e.from = item.contribution.source;
      e.to = aggregator;
      e.digest = item.digest;
      e.n_samples = item.contribution.n_samples;
      append(std::move(e));
    }
    return items;
  }

  /// Publishes the aggregate for `subset` to every client that trained it.
  /// The round advances once every elected subset has been broadcast.
  Receipt broadcast_aggregate(const Address& from, const StreamSubset& subset, const ModelParams& params) {
    auto agg = aggregator_for(subset);
    if (!agg || *agg != from)
      return Receipt::rejected(from + " is not the elected aggregator for " + subset.key() + " in round " +
                               std::to_string(round_));
    if (broadcast_.contains(subset)) return Receipt::rejected(subset.key() + " already broadcast this round");
    try {
      params.validate();
    } catch (const DomainError& e) {
      return Receipt::rejected(e.what());
    }
    const auto digest = params_digest(params);
    payloads_.emplace(digest, params);
    std::uint64_t n = 0;
    for (const auto& e : ledger_)
      if (e.kind == EntryKind::ParamsSubmitted && e.round == round_ && e.subset == subset) n += e.n_samples;
    LedgerEntry e = make_entry(EntryKind::AggregateBroadcast);
    e.subset = subset;
    e.from = from;
    e.to = "*";
    e.digest = digest;
    e.n_samples = n;
    append(std::move(e));
    for (const auto& participant : candidates(subset)) mailbox_[participant].push_back({round_, subset, params, digest});
    broadcast_.insert(subset);
    if (broadcast_.size() == aggregators_.size()) advance();
    return Receipt::ok();
  }

  /// Closes the current round even though elected subsets are still pending
  /// (e.g. the aggregator crashed). Participants keep their local models.
  void timeout_round() {
    LedgerEntry e = make_entry(EntryKind::RoundTimeout);
    append(std::move(e));
    advance();
  }

  /// Aggregates delivered to `client` since the last call.
  std::vector<Delivery> take_broadcasts(const Address& client) {
    auto it = mailbox_.find(client);
    if (it == mailbox_.end()) return {};
    auto out = std::move(it->second);
    mailbox_.erase(it);
    return out;
  }

 private:
  LedgerEntry make_entry(EntryKind k) const {
    LedgerEntry e;
    e.round = round_;
    e.kind = k;
    return e;
  }

  void append(LedgerEntry e) {
    e.seq = ledger_.size() + 1;
    ledger_.push_back(std::move(e));
  }

  void advance() {
    ++round_;
    finished_.clear();
    aggregators_.clear();
    broadcast_.clear();
    submitted_count_.clear();
    submitters_.clear();
    submissions_closed_ = false;
    inbox_.clear();  // undelivered after a timeout
  }

  std::uint64_t seed_;
  ElectionPolicy policy_;
  std::uint64_t round_ = 1;
  std::map<Address, std::vector<StreamSubset>> finished_;
  std::map<StreamSubset, Address> aggregators_;
  std::set<StreamSubset> broadcast_;
  std::map<StreamSubset, std::size_t> submitted_count_;
  std::set<std::pair<Address, StreamSubset>> submitters_;
  bool submissions_closed_ = false;
  std::map<Address, std::vector<InboxItem>> inbox_;
  std::map<Address, std::vector<Delivery>> mailbox_;
  std::map<std::uint64_t, ModelParams> payloads_;
  std::vector<LedgerEntry> ledger_;
  std::vector<ContractEvent> events_;
};

// ---------------------------------------------------------------------------
// Ledger export: one JSON object per line.

inline nlohmann::json to_json(const LedgerEntry& e) {
  nlohmann::json j;
  j["seq"] = e.seq;
  j["round"] = e.round;
  j["kind"] = to_string(e.kind);
  j["subset"] = e.subset ? nlohmann::json(e.subset->key()) : nlohmann::json(nullptr);
  j["from"] = e.from;
  j["to"] = e.to;
  j["digest"] = e.digest ? nlohmann::json(to_hex(*e.digest)) : nlohmann::json(nullptr);
  j["n"] = e.n_samples;
  if (e.kind == EntryKind::Registered) {
    auto arr = nlohmann::json::array();
    for (const auto& s : e.announced) arr.push_back(s.key());
    j["announced"] = arr;
  }
  return j;
}

inline LedgerEntry ledger_entry_from_json(const nlohmann::json& j) {
  try {
    LedgerEntry e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.round = j.at("round").get<std::uint64_t>();
    e.kind = entry_kind_from_string(j.at("kind").get<std::string>());
    if (!j.at("subset").is_null()) e.subset = StreamSubset::parse(j.at("subset").get<std::string>());
    e.from = j.at("from").get<std::string>();
    e.to = j.at("to").get<std::string>();
    if (!j.at("digest").is_null()) e.digest = from_hex(j.at("digest").get<std::string>());
    e.n_samples = j.at("n").get<std::uint64_t>();
    if (j.contains("announced"))
      for (const auto& s : j.at("announced")) e.announced.push_back(StreamSubset::parse(s.get<std::string>()));
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("ledger entry: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw ParseError(std::string("ledger entry: ") + ex.what());
  }
}

inline void write_ledger(std::ostream& out, const std::vector<LedgerEntry>& ledger) {
  for (const auto& e : ledger) out << to_json(e).dump() << '\n';
}

inline std::vector<LedgerEntry> read_ledger(std::istream& in) {
  std::vector<LedgerEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError("ledger line " + std::to_string(lineno) + ": " + ex.what());
    }
    out.push_back(ledger_entry_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Audit and replay

/// Returns every violated ledger invariant (empty when the ledger is sound).
inline std::vector<std::string> audit_ledger(const std::vector<LedgerEntry>& ledger) {
  std::vector<std::string> problems;
  auto where = [](const LedgerEntry& e) { return "seq " + std::to_string(e.seq) + ": "; };
  std::uint64_t last_seq = 0;
  std::map<std::pair<std::uint64_t, Address>, std::vector<StreamSubset>> registered;
  std::map<std::pair<std::uint64_t, StreamSubset>, Address> elected;
  std::map<std::tuple<std::uint64_t, std::string, Address, Address, std::uint64_t>, int> undelivered;
  for (const auto& e : ledger) {
    if (e.seq <= last_seq) problems.push_back(where(e) + "sequence number not strictly increasing");
    last_seq = e.seq;
    if (carries_params(e.kind) != e.digest.has_value())
      problems.push_back(where(e) + "digest presence does not match kind " + to_string(e.kind));
    switch (e.kind) {
      case EntryKind::Registered:
        registered[{e.round, e.from}] = e.announced;
        break;
      case EntryKind::Elected: {
        if (!e.subset) {
          problems.push_back(where(e) + "Elected entry without subset");
          break;
        }
        if (!elected.emplace(std::pair{e.round, *e.subset}, e.to).second)
          problems.push_back(where(e) + "second aggregator for " + e.subset->key() + " in round " + std::to_string(e.round));
        auto it = registered.find({e.round, e.to});
        if (it == registered.end() || std::find(it->second.begin(), it->second.end(), *e.subset) == it->second.end())
          problems.push_back(where(e) + e.to + " elected without registering " + e.subset->key());
        break;
      }
      case EntryKind::ParamsSubmitted:
        if (e.subset && e.digest) ++undelivered[{e.round, e.subset->key(), e.from, e.to, *e.digest}];
        break;
      case EntryKind::ParamsDelivered:
        if (e.subset && e.digest) {
          auto it = undelivered.find({e.round, e.subset->key(), e.from, e.to, *e.digest});
          if (it == undelivered.end() || it->second == 0)
            problems.push_back(where(e) + "delivery without a matching submission");
          else
            --it->second;
        }
        break;
      case EntryKind::AggregateBroadcast:
        if (e.subset) {
          auto it = elected.find({e.round, *e.subset});
          if (it == elected.end() || it->second != e.from)
            problems.push_back(where(e) + "broadcast by non-aggregator " + e.from);
        }
        break;
      default:
        break;
    }
  }
  return problems;
}

struct ReplayReport {
  // (round, subset key) -> recomputed aggregate digest
  std::map<std::pair<std::uint64_t, std::string>, std::uint64_t> aggregates;
  // (client, subset key) -> digest of the last aggregate that client received
  std::map<std::pair<Address, std::string>, std::uint64_t> final_models;
  std::vector<std::string> problems;

  bool ok() const { return problems.empty(); }
};

using PayloadLookup = std::function<std::optional<ModelParams>(std::uint64_t digest)>;

/// Recomputes every broadcast aggregate from the submitted payloads named in
/// the ledger and checks it against the broadcast digest.
inline ReplayReport replay_ledger(const std::vector<LedgerEntry>& ledger, const PayloadLookup& lookup,
                                  AggregationRule rule = AggregationRule::SampleWeighted) {
  ReplayReport report;
  report.problems = audit_ledger(ledger);
  std::map<std::pair<std::uint64_t, std::string>, std::vector<WeightedParams>> submitted;
  std::map<std::uint64_t, std::map<Address, std::vector<StreamSubset>>> registered;
  for (const auto& e : ledger) {
    const std::string where = "seq " + std::to_string(e.seq) + ": ";
    if (e.kind == EntryKind::Registered) registered[e.round][e.from] = e.announced;
    if (e.kind == EntryKind::ParamsSubmitted && e.subset && e.digest) {
      auto p = lookup(*e.digest);
      if (!p) {
        report.problems.push_back(where + "missing payload " + to_hex(*e.digest));
        continue;
      }
      if (params_digest(*p) != *e.digest) {
        report.problems.push_back(where + "payload does not hash to " + to_hex(*e.digest));
        continue;
      }
      submitted[{e.round, e.subset->key()}].push_back({e.from, std::move(*p), static_cast<std::size_t>(e.n_samples)});
    }
    if (e.kind == EntryKind::AggregateBroadcast && e.subset && e.digest) {
      auto key = std::pair{e.round, e.subset->key()};
      auto it = submitted.find(key);
      if (it == submitted.end() || it->second.empty()) {
        report.problems.push_back(where + "broadcast without submissions");
        continue;
      }
      std::uint64_t digest = 0;
      try {
        digest = params_digest(fed_average(it->second, rule));
      } catch (const DomainError& ex) {
        report.problems.push_back(where + ex.what());
        continue;
      }
      report.aggregates[key] = digest;
      if (digest != *e.digest)
        report.problems.push_back(where + "replayed aggregate " + to_hex(digest) + " != broadcast " + to_hex(*e.digest));
      for (const auto& [client, subsets] : registered[e.round])
        if (std::find(subsets.begin(), subsets.end(), *e.subset) != subsets.end())
          report.final_models[{client, e.subset->key()}] = digest;
    }
  }
  return report;
}

}  // namespace mhai
