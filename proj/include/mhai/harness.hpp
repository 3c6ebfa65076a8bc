#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhai/aggregate.hpp"
#include "mhai/chain.hpp"
#include "mhai/client.hpp"
#include "mhai/cohort.hpp"
#include "mhai/config.hpp"
#include "mhai/dataset.hpp"
#include "mhai/error.hpp"
#include "mhai/forest.hpp"
#include "mhai/hash.hpp"
#include "mhai/nn.hpp"
#include "mhai/parallel.hpp"
#include "mhai/stream.hpp"

namespace mhai {

// ---------------------------------------------------------------------------
// Population

/// Maps 0..10 onto `bins` coarser classes (label * bins / 11).
inline int bin_label(int label, int bins) { return label * bins / kNumClasses; }

struct Population {
  std::vector<PatientDataset> patients;
  std::vector<std::string> warnings;
};

/// `manifest.json` in a data directory maps CSV file names to subset keys.
inline Population load_population(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("data_dir " + dir.string() + " has no manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest.json: ") + e.what());
  }
  Population pop;
  for (const auto& [file, key] : manifest.items()) {
    if (!key.is_string()) throw ConfigError("manifest.json: entry for " + file + " must be a subset key string");
    pop.patients.push_back(load_csv(dir / file, StreamSubset::parse(key.get<std::string>())));
  }
  return pop;
}

inline void save_population(const std::filesystem::path& dir, const std::vector<PatientDataset>& patients) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::object();
  for (const auto& p : patients) {
    save_csv(dir / (p.patient_id + ".csv"), p);
    manifest[p.patient_id + ".csv"] = p.streams.key();
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

inline Population make_population(const ExperimentConfig& cfg) {
  Population pop;
  if (!cfg.data_dir.empty()) {
    pop = load_population(cfg.data_dir);
  } else {
    auto syn = generate_synthetic(cfg.synthetic());
    pop.patients = std::move(syn.patients);
    pop.warnings = std::move(syn.warnings);
  }
  if (cfg.label_bins != kNumClasses)
    for (auto& p : pop.patients)
      for (auto& r : p.records) r.label = bin_label(r.label, cfg.label_bins);
  return pop;
}

inline Normalizer make_normalizer(const ExperimentConfig& cfg, const std::vector<PatientDataset>& patients) {
  if (cfg.normalization == "pooled") {
    std::vector<const PatientDataset*> all;
    for (const auto& p : patients) all.push_back(&p);
    return Normalizer::fit(all);
  }
  return Normalizer::reference(cfg.universe);
}

inline ClientConfig client_config(const ExperimentConfig& cfg, std::size_t index) {
  ClientConfig c;
  c.train = cfg.train;
  c.local_epochs = cfg.local_epochs;
  c.federation_rounds = cfg.federation_rounds;
  c.train_fraction = cfg.train_fraction;
  c.calibration_samples = cfg.calibration_samples;
  c.forest = cfg.forest;
  c.rule = cfg.aggregation;
  c.seed = mix_seed(cfg.seed, "client" + std::to_string(index));
  c.init_seed = mix_seed(cfg.seed, "init");
  return c;
}

inline std::string client_address(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%03zu", i);
  return buf;
}

// ---------------------------------------------------------------------------
// Simulation

struct Simulation {
  std::vector<std::unique_ptr<Client>> clients;
  Contract contract;
  std::size_t ticks = 0;
};

/// Drives all clients to completion under a seeded scheduler. Between client
/// steps the harness plays the chain's role: it triggers the election once
/// every live client has registered, closes submissions once every live
/// client has submitted, and times a round out when nothing can progress.
inline void run_simulation(Simulation& sim, std::uint64_t scheduler_seed, std::size_t threads = 0,
                           std::size_t max_ticks = 100000) {
  std::mt19937_64 sched(scheduler_seed);
  auto& contract = sim.contract;
  std::size_t idle = 0;
  auto live = [&](const Client& c) { return !c.crashed(); };
  auto in_round = [](const Client& c) {
    return c.phase() == Phase::Training || c.phase() == Phase::AwaitingElection || c.phase() == Phase::Aggregating;
  };
  while (true) {
    bool done = true;
    for (const auto& c : sim.clients)
      if (live(*c) && c->phase() != Phase::Ready) done = false;
    if (done) break;
    if (sim.ticks++ >= max_ticks) throw Error("simulation exceeded its step budget");

    std::vector<Client*> to_train;
    for (auto& c : sim.clients)
      if (live(*c) && c->phase() == Phase::Training && !c->has_pending_models()) to_train.push_back(c.get());
    parallel_for(to_train.size(), [&](std::size_t i) { to_train[i]->train_local(); }, threads);

    std::vector<std::size_t> order(sim.clients.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), sched);
    bool progress = false;
    for (auto i : order) progress |= sim.clients[i]->step(contract, sim.ticks);

    // Chain-side triggers.
    if (contract.aggregators().empty() && !contract.finished().empty()) {
      bool all_registered = true;
      std::vector<StreamSubset> subsets;
      for (const auto& c : sim.clients) {
        if (!live(*c) || !in_round(*c)) continue;
        if (!contract.is_finished(c->address())) all_registered = false;
      }
      if (all_registered) {
        for (const auto& c : sim.clients)
          if (contract.is_finished(c->address()))
            subsets.insert(subsets.end(), c->subsets().begin(), c->subsets().end());
        contract.elect_aggregators(subsets);
        progress = true;
      }
    } else if (!contract.aggregators().empty() && !contract.submissions_closed()) {
      bool all_submitted = true;
      for (const auto& c : sim.clients) {
        if (!live(*c) || !contract.is_finished(c->address())) continue;
        for (const auto& s : c->subsets())
          if (!contract.has_submitted(c->address(), s)) all_submitted = false;
      }
      if (all_submitted) {
        contract.close_submissions();
        progress = true;
      }
    }

    if (progress) {
      idle = 0;
    } else if (++idle >= 2) {
      if (contract.finished().empty()) throw Error("simulation deadlocked with no registered client");
      contract.timeout_round();
      idle = 0;
    }
  }
}

/// Transitions recorded in client traces that fall outside the declared
/// relation (empty when sound).
inline std::vector<std::string> check_traces(const Simulation& sim) {
  std::vector<std::string> bad;
  for (const auto& c : sim.clients) {
    Phase prev = Phase::Collecting;
    for (const auto& t : c->trace()) {
      if (t.from != prev || !allowed_transition(t.from, t.to))
        bad.push_back(c->address() + " step " + std::to_string(t.step) + ": " + to_string(t.from) + " -> " +
                      to_string(t.to));
      prev = t.to;
    }
  }
  return bad;
}

/// Digests of every serialized raw-data view each client holds: full CSV,
/// its splits, every projection, and every single record.
inline std::set<std::uint64_t> raw_data_digests(const Simulation& sim) {
  std::set<std::uint64_t> out;
  for (const auto& c : sim.clients) {
    for (const auto* ds : {&c->raw_data(), &c->train_data(), &c->calibration_data(), &c->evaluation_data()}) {
      if (ds->records.empty()) continue;
      out.insert(fnv1a64(to_csv(*ds)));
      for (const auto& s : c->subsets()) out.insert(fnv1a64(to_csv(project(*ds, s))));
      for (const auto& r : ds->records) out.insert(fnv1a64(to_csv(PatientDataset{ds->patient_id, ds->streams, {r}})));
    }
  }
  return out;
}

inline bool privacy_audit(const Simulation& sim) {
  const auto raw = raw_data_digests(sim);
  for (const auto& e : sim.contract.ledger())
    if (e.digest && raw.contains(*e.digest)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Reports

struct BaselineReport {
  double accuracy = 0;
  std::size_t cohort_size = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t epochs_run = 0;
};

struct SweepReport {
  StreamSubset subset;
  std::vector<std::pair<std::size_t, double>> curve;  // (nodes aggregated, test accuracy)
  std::vector<double> single_node_accuracies;
  std::size_t test_size = 0;
};

struct ClientMetrics {
  Address address;
  std::string patient_id;
  StreamSubset streams;
  bool dropped = false;
  std::size_t n_eval = 0;
  double forest_accuracy = 0;
  double best_model_accuracy = 0;
  std::string best_model;
  std::map<std::string, double> model_accuracies;
};

struct SubsetMetrics {
  StreamSubset subset;
  std::size_t participants = 0;
  std::size_t n_eval = 0;
  double test_accuracy = 0;
};

struct MetricsReport {
  std::size_t n_patients = 0;
  std::map<std::size_t, std::size_t> patients_by_stream_count;
  std::vector<SubsetMetrics> subset_models;
  std::vector<ClientMetrics> clients;
  double population_mean = 0;
  double population_stddev = 0;
  double forest_dominance_fraction = 0;  // clients with forest >= best single model - 0.02
  std::optional<BaselineReport> baseline;
  std::optional<SweepReport> sweep;
  std::size_t ledger_entries = 0;
  std::map<std::string, std::size_t> ledger_by_kind;
  std::uint64_t rounds_completed = 0;
  std::vector<std::string> audit_problems;
  bool replay_ok = false;
  bool privacy_ok = false;
  bool conservation_ok = false;
  bool phase_machine_ok = false;
  std::size_t simulation_ticks = 0;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const BaselineReport& b) {
  return {{"accuracy", b.accuracy},
          {"cohort_size", b.cohort_size},
          {"n_train", b.n_train},
          {"n_test", b.n_test},
          {"epochs_run", b.epochs_run}};
}

inline nlohmann::json to_json(const SweepReport& s) {
  auto curve = nlohmann::json::array();
  for (const auto& [k, a] : s.curve) curve.push_back({{"nodes", k}, {"accuracy", a}});
  return {{"subset", s.subset.key()},
          {"curve", curve},
          {"single_node_accuracies", s.single_node_accuracies},
          {"test_size", s.test_size}};
}

inline nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json j;
  j["n_patients"] = m.n_patients;
  nlohmann::json by = nlohmann::json::object();
  for (const auto& [k, n] : m.patients_by_stream_count) by[std::to_string(k)] = n;
  j["patients_by_stream_count"] = by;
  auto subsets = nlohmann::json::array();
  for (const auto& s : m.subset_models)
    subsets.push_back({{"subset", s.subset.key()},
                       {"participants", s.participants},
                       {"n_eval", s.n_eval},
                       {"test_accuracy", s.test_accuracy}});
  j["subset_models"] = subsets;
  auto clients = nlohmann::json::array();
  for (const auto& c : m.clients)
    clients.push_back({{"address", c.address},
                       {"patient", c.patient_id},
                       {"streams", c.streams.key()},
                       {"dropped", c.dropped},
                       {"n_eval", c.n_eval},
                       {"forest_accuracy", c.forest_accuracy},
                       {"best_model_accuracy", c.best_model_accuracy},
                       {"best_model", c.best_model},
                       {"model_accuracies", c.model_accuracies}});
  j["clients"] = clients;
  j["population_accuracy"] = {{"mean", m.population_mean}, {"stddev", m.population_stddev}};
  j["forest_dominance_fraction"] = m.forest_dominance_fraction;
  j["baseline"] = m.baseline ? to_json(*m.baseline) : nlohmann::json(nullptr);
  j["node_sweep"] = m.sweep ? to_json(*m.sweep) : nlohmann::json(nullptr);
  j["ledger"] = {{"entries", m.ledger_entries},
                 {"by_kind", m.ledger_by_kind},
                 {"rounds_completed", m.rounds_completed},
                 {"audit_problems", m.audit_problems},
                 {"replay_ok", m.replay_ok},
                 {"privacy_audit_ok", m.privacy_ok},
                 {"conservation_ok", m.conservation_ok}};
  j["phase_machine_ok"] = m.phase_machine_ok;
  j["simulation_ticks"] = m.simulation_ticks;
  j["warnings"] = m.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// Baseline

/// Centralized full-feature model on the patients owning every stream of the
/// universe. Each patient is split 70-30; inputs are z-scored with statistics
/// of the pooled training part.
inline BaselineReport run_baseline(const ExperimentConfig& cfg, const Population& pop) {
  const StreamSubset full(cfg.universe);
  std::vector<PatientDataset> train_parts, test_parts;
  for (const auto& p : pop.patients) {
    if (p.streams != full) continue;
    auto [tr, te] = train_test_split(p, cfg.train_fraction, mix_seed(cfg.seed, "baseline-split-" + p.patient_id));
    train_parts.push_back(std::move(tr));
    test_parts.push_back(std::move(te));
  }
  if (train_parts.empty()) throw ConfigError("baseline: no patient owns the full stream universe " + full.key());
  std::vector<const PatientDataset*> ptrs;
  for (const auto& p : train_parts) ptrs.push_back(&p);
  const auto norm = Normalizer::fit(ptrs);
  std::vector<LabeledData> tr, te;
  for (const auto& p : train_parts) tr.push_back(to_labeled(norm.apply(p), full));
  for (const auto& p : test_parts) te.push_back(to_labeled(norm.apply(p), full));
  const auto train_data = concat(tr), test_data = concat(te);
  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.train.seed, "baseline");
  auto result = train(train_data, tc);
  BaselineReport b;
  b.cohort_size = train_parts.size();
  b.n_train = train_data.size();
  b.n_test = test_data.size();
  b.epochs_run = result.history.size();
  b.accuracy = test_data.empty() ? 0.0 : accuracy(result.params, test_data);
  return b;
}

inline BaselineReport run_baseline(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_baseline(cfg, make_population(cfg));
}

// ---------------------------------------------------------------------------
// Node sweep

struct SweepNode {
  Address address;
  LabeledData train;
};

/// Federated training of one subset model among `nodes` through a contract:
/// every round each node trains locally from the current aggregate, an
/// aggregator is elected, parameters are submitted, averaged and broadcast.
inline ModelParams federate_subset(const std::vector<SweepNode>& nodes, const StreamSubset& subset,
                                   const ExperimentConfig& cfg, std::uint64_t contract_seed) {
  Contract contract(contract_seed, cfg.election_policy);
  ModelParams global = init_params(NetShape{subset.size(), cfg.train.hidden, kNumClasses}, mix_seed(cfg.seed, "init-" + subset.key()));
  for (std::size_t round = 0; round < cfg.federation_rounds; ++round) {
    std::vector<ModelParams> local(nodes.size());
    parallel_for(nodes.size(), [&](std::size_t i) {
      TrainConfig tc = cfg.train;
      tc.max_epochs = cfg.local_epochs;
      tc.seed = mix_seed(mix_seed(cfg.seed, nodes[i].address + "/" + subset.key()), round);
      local[i] = train(global, nodes[i].train, {}, tc).params;
    }, cfg.threads);
    for (const auto& n : nodes) contract.register_finished(n.address, {subset});
    auto events = contract.elect_aggregators({subset});
    const Address aggregator = events.at(0).elected;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (auto r = contract.submit_params(nodes[i].address, subset, local[i], nodes[i].train.size()); !r)
        throw Error("sweep submission rejected: " + r.reason);
    contract.close_submissions();
    std::vector<WeightedParams> inbox;
    for (auto& item : contract.collect_inbox(aggregator)) inbox.push_back(std::move(item.contribution));
    global = fed_average(std::move(inbox), cfg.aggregation);
    if (auto r = contract.broadcast_aggregate(aggregator, subset, global); !r) throw Error("sweep broadcast rejected: " + r.reason);
  }
  return global;
}

/// Admits nodes one at a time into the federation for a single subset and
/// records the aggregate's accuracy on the pooled held-out data of all
/// `max_nodes` nodes after each admission.
inline SweepReport node_sweep(const ExperimentConfig& cfg, const Population& pop, std::size_t max_nodes) {
  const StreamSubset subset = cfg.sweep_subset.empty() ? StreamSubset(cfg.universe) : StreamSubset::parse(cfg.sweep_subset);
  std::vector<const PatientDataset*> owners;
  for (const auto& p : pop.patients)
    if (subset.is_subset_of(p.streams)) owners.push_back(&p);
  if (max_nodes < 1) throw ConfigError("node sweep needs max_nodes >= 1");
  if (owners.size() < max_nodes)
    throw ConfigError("node sweep: only " + std::to_string(owners.size()) + " patients own " + subset.key() +
                      ", fewer than max_nodes = " + std::to_string(max_nodes));
  const auto norm = make_normalizer(cfg, pop.patients);
  std::vector<SweepNode> nodes;
  std::vector<LabeledData> tests;
  for (std::size_t i = 0; i < max_nodes; ++i) {
    const auto projected = norm.apply(project(*owners[i], subset));
    auto [tr, te] = train_test_split(projected, cfg.train_fraction, mix_seed(cfg.seed, "sweep-split-" + projected.patient_id));
    nodes.push_back({client_address(i), to_labeled(tr, subset)});
    tests.push_back(to_labeled(te, subset));
  }
  const auto test = concat(tests);
  SweepReport report{subset, {}, {}, test.size()};
  const std::uint64_t contract_seed = mix_seed(cfg.seed, "sweep-contract");
  for (std::size_t k = 1; k <= max_nodes; ++k) {
    std::vector<SweepNode> admitted(nodes.begin(), nodes.begin() + static_cast<std::ptrdiff_t>(k));
    report.curve.emplace_back(k, accuracy(federate_subset(admitted, subset, cfg, contract_seed), test));
  }
  for (std::size_t i = 0; i < max_nodes; ++i)
    report.single_node_accuracies.push_back(accuracy(federate_subset({nodes[i]}, subset, cfg, contract_seed), test));
  return report;
}

inline SweepReport node_sweep(const ExperimentConfig& cfg, std::size_t max_nodes) {
  cfg.validate();
  return node_sweep(cfg, make_population(cfg), max_nodes);
}

// ---------------------------------------------------------------------------
// Full experiment

struct ExperimentRun {
  MetricsReport report;
  Simulation sim;
};

inline ExperimentRun run_experiment_full(const ExperimentConfig& cfg) {
  cfg.validate();
  const Population pop = make_population(cfg);
  if (pop.patients.empty()) throw ConfigError("population is empty");
  const auto norm = make_normalizer(cfg, pop.patients);

  ExperimentRun run;
  auto& sim = run.sim;
  sim.contract = Contract(mix_seed(cfg.seed, "contract"), cfg.election_policy);
  for (std::size_t i = 0; i < pop.patients.size(); ++i)
    sim.clients.push_back(std::make_unique<Client>(client_address(i), pop.patients[i], client_config(cfg, i), norm));
  for (const auto& d : cfg.dropouts)
    if (d.patient < sim.clients.size()) sim.clients[d.patient]->crash_after_register_in_round(d.round);
  run_simulation(sim, mix_seed(cfg.seed, "scheduler"), cfg.threads);

  MetricsReport& m = run.report;
  m.n_patients = pop.patients.size();
  m.warnings = pop.warnings;
  m.simulation_ticks = sim.ticks;
  for (const auto& p : pop.patients) ++m.patients_by_stream_count[p.streams.size()];

  // Per-subset models, evaluated on the pooled evaluation data of their owners.
  std::map<StreamSubset, std::vector<const Client*>> owners;
  for (const auto& c : sim.clients)
    if (!c->crashed())
      for (const auto& s : c->subsets()) owners[s].push_back(c.get());
  std::vector<StreamSubset> keys;
  for (const auto& [s, _] : owners) keys.push_back(s);
  std::sort(keys.begin(), keys.end(), size_then_lex);
  for (const auto& s : keys) {
    std::vector<LabeledData> parts;
    for (const auto* c : owners[s]) parts.push_back(to_labeled(c->evaluation_data(), s));
    const auto data = concat(parts);
    SubsetMetrics sm{s, owners[s].size(), data.size(), 0};
    if (!data.empty()) sm.test_accuracy = accuracy(owners[s].front()->model_store().at(s), data);
    m.subset_models.push_back(sm);
  }

  std::vector<double> accs;
  std::size_t dominant = 0;
  for (std::size_t i = 0; i < sim.clients.size(); ++i) {
    const auto& c = *sim.clients[i];
    ClientMetrics cm;
    cm.address = c.address();
    cm.patient_id = c.raw_data().patient_id;
    cm.streams = c.streams();
    cm.dropped = c.crashed();
    if (!cm.dropped) {
      const auto& eval = c.evaluation_data();
      cm.n_eval = eval.size();
      cm.forest_accuracy = c.forest_accuracy(eval);
      cm.best_model_accuracy = -1;
      for (const auto& s : c.subsets()) {
        double a = eval.empty() ? 0.0 : c.model_accuracy(s, eval);
        cm.model_accuracies[s.key()] = a;
        if (a > cm.best_model_accuracy) {
          cm.best_model_accuracy = a;
          cm.best_model = s.key();
        }
      }
      accs.push_back(cm.forest_accuracy);
      dominant += cm.forest_accuracy >= cm.best_model_accuracy - 0.02;
      for (const auto& line : c.log()) m.warnings.push_back(c.address() + ": " + line);
    }
    m.clients.push_back(std::move(cm));
  }
  if (!accs.empty()) {
    double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    double var = 0;
    for (double a : accs) var += (a - mean) * (a - mean);
    m.population_mean = mean;
    m.population_stddev = std::sqrt(var / static_cast<double>(accs.size()));
    m.forest_dominance_fraction = static_cast<double>(dominant) / static_cast<double>(accs.size());
  }

  // Ledger checks.
  const auto& ledger = sim.contract.ledger();
  m.ledger_entries = ledger.size();
  for (const auto& e : ledger) ++m.ledger_by_kind[to_string(e.kind)];
  m.rounds_completed = sim.contract.round() - 1;
  m.audit_problems = audit_ledger(ledger);
  const auto& payloads = sim.contract.payloads();
  auto replay = replay_ledger(
      ledger,
      [&](std::uint64_t d) -> std::optional<ModelParams> {
        auto it = payloads.find(d);
        if (it == payloads.end()) return std::nullopt;
        return it->second;
      },
      cfg.aggregation);
  m.replay_ok = replay.ok();
  for (const auto& c : sim.clients) {
    if (c->crashed()) continue;
    for (const auto& [s, params] : c->model_store()) {
      auto it = replay.final_models.find({c->address(), s.key()});
      if (it != replay.final_models.end() && it->second != params_digest(params)) m.replay_ok = false;
    }
  }
  // Every registered model is submitted exactly once, except by clients
  // that crashed right after registering.
  std::set<std::pair<Address, std::uint64_t>> crashed_in;
  for (const auto& d : cfg.dropouts)
    if (d.patient < sim.clients.size() && sim.clients[d.patient]->crashed())
      crashed_in.insert({sim.clients[d.patient]->address(), d.round});
  std::size_t submitted = 0, expected = 0;
  for (const auto& e : ledger) {
    if (e.kind == EntryKind::ParamsSubmitted) ++submitted;
    if (e.kind == EntryKind::Registered && !crashed_in.contains({e.from, e.round})) expected += e.announced.size();
  }
  m.conservation_ok = submitted == expected;
  m.privacy_ok = privacy_audit(sim);
  m.phase_machine_ok = check_traces(sim).empty();

  if (cfg.baseline) {
    const StreamSubset full(cfg.universe);
    if (std::any_of(pop.patients.begin(), pop.patients.end(), [&](const auto& p) { return p.streams == full; }))
      m.baseline = run_baseline(cfg, pop);
    else
      m.warnings.push_back("baseline skipped: no patient owns the full universe");
  }
  if (cfg.sweep_max_nodes > 0) m.sweep = node_sweep(cfg, pop, cfg.sweep_max_nodes);
  return run;
}

inline MetricsReport run_experiment(const ExperimentConfig& cfg) { return run_experiment_full(cfg).report; }

/// Writes metrics.json, per-client and per-subset CSV curves, the ledger,
/// payload files, client traces and forests into `dir`.
inline void write_outputs(const std::filesystem::path& dir, const ExperimentRun& run) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "payloads");
  fs::create_directories(dir / "forests");
  std::ofstream(dir / "metrics.json") << to_json(run.report).dump(2) << '\n';
  {
    std::ofstream out(dir / "clients.csv");
    out << "address,patient,streams,n_eval,forest_accuracy,best_model,best_model_accuracy\n";
    for (const auto& c : run.report.clients)
      out << c.address << ',' << c.patient_id << ',' << c.streams.key() << ',' << c.n_eval << ','
          << detail::format_double(c.forest_accuracy) << ',' << c.best_model << ','
          << detail::format_double(c.best_model_accuracy) << '\n';
  }
  {
    std::ofstream out(dir / "subset_models.csv");
    out << "subset,participants,n_eval,test_accuracy\n";
    for (const auto& s : run.report.subset_models)
      out << s.subset.key() << ',' << s.participants << ',' << s.n_eval << ',' << detail::format_double(s.test_accuracy) << '\n';
  }
  if (run.report.sweep) {
    std::ofstream out(dir / "node_sweep.csv");
    out << "nodes,accuracy\n";
    for (const auto& [k, a] : run.report.sweep->curve) out << k << ',' << detail::format_double(a) << '\n';
  }
  {
    std::ofstream out(dir / "ledger.jsonl");
    write_ledger(out, run.sim.contract.ledger());
  }
  for (const auto& [digest, params] : run.sim.contract.payloads())
    std::ofstream(dir / "payloads" / (to_hex(digest) + ".params"), std::ios::binary) << encode_params(params, "-");
  {
    std::ofstream out(dir / "trace.csv");
    out << "step,address,from,to,action\n";
    for (const auto& c : run.sim.clients)
      for (const auto& t : c->trace())
        out << t.step << ',' << t.address << ',' << to_string(t.from) << ',' << to_string(t.to) << ",\"" << t.action << "\"\n";
  }
  for (const auto& c : run.sim.clients)
    if (c->forest()) {
      std::ofstream out(dir / "forests" / (c->address() + ".forest"));
      write_forest(out, *c->forest());
    }
}

/// Looks payloads up in a directory written by write_outputs().
inline PayloadLookup directory_payloads(const std::filesystem::path& dir) {
  return [dir](std::uint64_t digest) -> std::optional<ModelParams> {
    std::ifstream in(dir / (to_hex(digest) + ".params"), std::ios::binary);
    if (!in) return std::nullopt;
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_params(bytes).params;
  };
}

}  // namespace mhai
