// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "mhai/mhai.hpp"
#include "oracles.hpp"

using namespace mhai;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Privacy audits collected from every end-to-end run below.
std::vector<bool> privacy_results;

// --- 1 ---------------------------------------------------------------------

Outcome subset_algebra() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<StreamId> names{"A", "B", "C", "D", "E", "F"};
  for (std::size_t n = 1; n <= 6; ++n) {
    std::vector<StreamId> u(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(n));
    auto ps = power_set(StreamSubset(u));
    std::set<std::string> got, want;
    for (const auto& s : ps) got.insert(s.key());
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      std::string key;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1u << i)) key += (key.empty() ? "" : "+") + u[i].name;
      want.insert(key);
    }
    if (ps.size() != (std::size_t{1} << n) - 1 || got != want)
      return {false, "power set mismatch at n=" + std::to_string(n)};

    PatientDataset p{"p", StreamSubset(u), {{0, {}, 1}}};
    for (const auto& s : u) p.records[0].values[s] = 1.0;
    std::size_t memberships = 0;
    for (const auto& [_, members] : build_cohorts({p})) memberships += members.size();
    if (memberships != (std::size_t{1} << n) - 1) return {false, "cohort membership mismatch at n=" + std::to_string(n)};
  }
  const double secs = seconds_since(t0);
  return {secs < 1.0, fmt("universes 1..6 match the bitmask oracle, runtime %.3f s (< 1 s)", secs)};
}

// --- 2 ---------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto inst = oracle::random_grad_instance(1000 + seed);
    if (inst.params.theta.size() > 200 || inst.batch.size() > 16) return {false, "instance exceeds size limits"};
    worst = std::max(worst, oracle::relative_error(grad(inst.params, inst.batch), oracle::numeric_grad(inst.params, inst.batch)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 10, fmt("50 instances, worst relative error %.2e (<= 1e-4), %.2f s (< 10 s)", worst, secs)};
}

// --- 3 ---------------------------------------------------------------------

Outcome aggregation_oracle() {
  std::mt19937_64 rng(31337);
  double worst = 0;
  int property_failures = 0;
  for (int inst = 0; inst < 100; ++inst) {
    NetShape s{1 + rng() % 4, {1 + rng() % 6}, 11};
    const std::size_t k = 1 + rng() % 8;
    std::uniform_real_distribution<double> u(-5, 5);
    std::vector<WeightedParams> in;
    std::vector<std::vector<double>> thetas;
    std::vector<double> w;
    for (std::size_t i = 0; i < k; ++i) {
      ModelParams p{s, std::vector<double>(s.param_count())};
      for (auto& v : p.theta) v = u(rng);
      const std::size_t n = 1 + rng() % 1000;
      in.push_back({"c" + std::to_string(rng() % 1000), p, n});
      thetas.push_back(p.theta);
      w.push_back(static_cast<double>(n));
    }
    const auto out = fed_average(in);
    const auto expect = oracle::weighted_mean(thetas, w);
    for (std::size_t j = 0; j < expect.size(); ++j) {
      worst = std::max(worst, std::abs(out.theta[j] - expect[j]));
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& t : thetas) lo = std::min(lo, t[j]), hi = std::max(hi, t[j]);
      if (out.theta[j] < lo || out.theta[j] > hi) ++property_failures;
    }
    auto shuffled = in;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (fed_average(shuffled).theta != out.theta) ++property_failures;
    if (fed_average({in.front()}).theta != in.front().params.theta) ++property_failures;
    std::vector<WeightedParams> copies(k, in.front());
    if (fed_average(copies).theta != in.front().params.theta) ++property_failures;
  }
  return {worst <= 1e-12 && property_failures == 0,
          fmt("100 instances, max |diff| %.2e (<= 1e-12), %g property violations", worst, property_failures)};
}

// --- 4 ---------------------------------------------------------------------

// One randomized 20-client, 10-round contract simulation. Clients own random
// stream sets, some skip rounds, and some aggregators crash before
// broadcasting. Returns false on any safety or replay violation.
bool contract_simulation(std::uint64_t seed, std::string& why) {
  std::mt19937_64 rng(seed);
  const StreamSubset universe{"A", "B", "C"};
  const auto all_subsets = power_set(universe);
  Contract c(mix_seed(seed, "beacon"));
  std::vector<Address> clients;
  std::map<Address, std::vector<StreamSubset>> trains;
  for (int i = 0; i < 20; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "n%02d", i);
    clients.push_back(id);
    std::vector<StreamId> own;
    for (const auto& s : universe.members())
      if (rng() % 2) own.push_back(s);
    if (own.empty()) own.push_back(universe.members()[rng() % 3]);
    trains[id] = power_set(StreamSubset(own));
  }
  std::map<std::pair<Address, std::string>, std::uint64_t> received;
  for (int round = 0; round < 10; ++round) {
    std::vector<Address> active;
    for (const auto& a : clients)
      if (rng() % 10 < 8) active.push_back(a);
    if (active.empty()) active.push_back(clients[rng() % clients.size()]);
    std::shuffle(active.begin(), active.end(), rng);
    for (const auto& a : active) c.register_finished(a, trains[a]);
    std::map<StreamSubset, Address> aggs;
    for (const auto& ev : c.elect_aggregators(all_subsets)) aggs[ev.subset] = ev.elected;
    for (const auto& a : active)
      for (const auto& s : trains[a]) {
        NetShape shape{s.size(), {2}, 11};
        auto p = init_params(shape, rng());
        if (!c.submit_params(a, s, p, 1 + rng() % 100)) {
          why = "honest submission rejected";
          return false;
        }
      }
    c.close_submissions();
    std::map<StreamSubset, std::vector<WeightedParams>> inbox;
    std::set<Address> crashed;
    for (const auto& [s, agg] : aggs) {
      if (rng() % 20 == 0) crashed.insert(agg);
      if (crashed.contains(agg)) continue;
      for (auto& item : c.collect_inbox(agg)) inbox[item.subset].push_back(item.contribution);
    }
    for (const auto& [s, agg] : aggs) {
      if (crashed.contains(agg)) continue;
      if (!c.broadcast_aggregate(agg, s, fed_average(inbox[s]))) {
        why = "honest broadcast rejected";
        return false;
      }
      const std::string other = agg == clients[0] ? clients[1] : clients[0];
      if (aggs.size() > 1 && c.broadcast_aggregate(other, s, fed_average(inbox[s]))) {
        why = "second broadcast accepted";
        return false;
      }
    }
    for (const auto& a : clients)
      for (const auto& d : c.take_broadcasts(a)) received[{a, d.subset.key()}] = d.digest;
    if (!crashed.empty()) c.timeout_round();
  }
  // At most one aggregator per (round, subset).
  std::set<std::pair<std::uint64_t, std::string>> seen;
  for (const auto& e : c.ledger())
    if (e.kind == EntryKind::Elected && !seen.insert({e.round, e.subset->key()}).second) {
      why = "two aggregators for one (round, subset)";
      return false;
    }
  const auto& payloads = c.payloads();
  std::stringstream exported;
  write_ledger(exported, c.ledger());
  auto rep = replay_ledger(read_ledger(exported), [&](std::uint64_t d) -> std::optional<ModelParams> {
    auto it = payloads.find(d);
    if (it == payloads.end()) return std::nullopt;
    return it->second;
  });
  if (!rep.ok()) {
    why = rep.problems.front();
    return false;
  }
  if (rep.final_models != received) {
    why = "replayed final models differ from delivered aggregates";
    return false;
  }
  return true;
}

Outcome contract_safety() {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    std::string why;
    if (!contract_simulation(seed, why)) return {false, "seed " + std::to_string(seed) + ": " + why};
  }
  Contract c(4242);
  std::map<Address, int> wins;
  for (int round = 0; round < 1000; ++round) {
    for (auto a : {"w", "x", "y", "z"}) c.register_finished(a, {StreamSubset{"ECG"}});
    ++wins[c.elect_aggregators({StreamSubset{"ECG"}}).at(0).elected];
    c.timeout_round();
  }
  double worst = 0;
  for (auto a : {"w", "x", "y", "z"}) worst = std::max(worst, std::abs(wins[a] / 1000.0 - 0.25));
  return {worst <= 0.05,
          fmt("100 seeds safe and replay-exact; election frequency max deviation %.3f from 0.25 (<= 0.05)", worst)};
}

// --- shared experiment configs ---------------------------------------------

// Four device cohorts over nested stream sets.
ExperimentConfig cohort_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.n_patients = 24;
  c.universe = {"ST", "ECG", "EDA", "Resp"};
  c.stream_assignment = StreamAssignment::Nested;
  c.samples_per_patient = 1000;
  c.train_fraction = 0.6;
  c.calibration_samples = 250;
  c.forest.feature_bag_fraction = 0.3;
  return c;
}

// --- 6 ---------------------------------------------------------------------

Outcome centralized_learnability() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> noisy, clean;
  std::size_t max_epochs_run = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = cohort_config(seed);
    cfg.train.max_epochs = 200;
    auto b = run_baseline(cfg);
    noisy.push_back(b.accuracy);
    max_epochs_run = std::max(max_epochs_run, b.epochs_run);
    cfg.noise_sigma = 0;
    b = run_baseline(cfg);
    clean.push_back(b.accuracy);
    max_epochs_run = std::max(max_epochs_run, b.epochs_run);
  }
  const double secs = seconds_since(t0);
  const double mn = median(noisy), mc = median(clean);
  return {mn >= 0.90 && mc >= 0.99 && max_epochs_run <= 200 && secs < 300,
          fmt("median accuracy %.4f at default noise (>= 0.90), %.4f noiseless (>= 0.99)", mn, mc) +
              ", epochs <= " + std::to_string(max_epochs_run) + fmt(", %.0f s", secs)};
}

// --- 7 ---------------------------------------------------------------------

Outcome federation_benefit() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> margins;
  std::string curves;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.n_patients = 8;
    cfg.universe = {"ST", "ECG"};
    cfg.device_count_distribution = {0, 1, 0, 0, 0, 0};
    cfg.classes_per_patient = 4;
    cfg.samples_per_patient = 400;
    auto s = node_sweep(cfg, 8);
    const double single = median(s.single_node_accuracies);
    double worst = INFINITY;
    for (const auto& [k, acc] : s.curve)
      if (k >= 3) worst = std::min(worst, acc);
    margins.push_back(worst - single);
    curves += fmt(" %.2f->%.2f", single, worst);
  }
  const double m = median(margins);
  const double secs = seconds_since(t0);
  return {m >= 0.10 && secs < 600,
          fmt("median of min_{k>=3} acc(k) - median single-node acc = %.4f (>= 0.10), %.0f s;", m, secs) + curves};
}

// --- 8, 9, 5 ---------------------------------------------------------------

std::vector<MetricsReport> cohort_runs;

const std::vector<MetricsReport>& cohort_experiments() {
  if (cohort_runs.empty())
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto run = run_experiment_full(cohort_config(seed));
      privacy_results.push_back(run.report.privacy_ok && privacy_audit(run.sim));
      cohort_runs.push_back(std::move(run.report));
    }
  return cohort_runs;
}

Outcome forest_dominance() {
  std::vector<double> fr;
  std::string per_seed;
  for (const auto& m : cohort_experiments()) {
    fr.push_back(m.forest_dominance_fraction);
    per_seed += fmt(" %.3f", m.forest_dominance_fraction);
  }
  const double med = median(fr);
  return {med >= 0.90, fmt("median fraction of clients with forest >= best model - 0.02: %.3f (>= 0.90); seeds:", med) + per_seed};
}

Outcome gap_realism() {
  std::vector<double> gaps;
  std::string per_seed;
  for (const auto& m : cohort_experiments()) {
    if (!m.baseline) return {false, "baseline missing"};
    gaps.push_back(m.baseline->accuracy - m.population_mean);
    per_seed += fmt(" %.3f/%.3f", m.baseline->accuracy, m.population_mean);
  }
  const double g = median(gaps);
  return {g >= 0 && g <= 0.10, fmt("median baseline - federated = %.4f (in [0, 0.10]); baseline/fed:", g) + per_seed};
}

Outcome privacy() {
  cohort_experiments();
  {
    ExperimentConfig c = cohort_config(9);
    c.n_patients = 6;
    c.samples_per_patient = 300;
    c.calibration_samples = 50;
    c.dropouts = {{1, 1}};
    auto run = run_experiment_full(c);
    privacy_results.push_back(run.report.privacy_ok && privacy_audit(run.sim));
  }
  const auto ok = std::count(privacy_results.begin(), privacy_results.end(), true);
  return {ok == static_cast<long>(privacy_results.size()),
          std::to_string(ok) + "/" + std::to_string(privacy_results.size()) +
              " end-to-end runs with no ledger digest equal to a raw-data digest"};
}

// --- 10 --------------------------------------------------------------------

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / "mhai_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cfg = cohort_config(2);
  cfg.n_patients = 10;
  cfg.samples_per_patient = 400;
  cfg.calibration_samples = 70;
  cfg.sweep_max_nodes = 2;
  cfg.sweep_subset = "ST";
  std::ofstream(dir / "config.json") << to_json(cfg).dump(2);
  std::string bytes[2];
  for (int i = 0; i < 2; ++i) {
    auto loaded = load_config(dir / "config.json");
    loaded.threads = i == 0 ? 1 : 4;
    auto run = run_experiment_full(loaded);
    privacy_results.push_back(run.report.privacy_ok);
    const auto out = dir / ("run" + std::to_string(i));
    write_outputs(out, run);
    std::ifstream in(out / "metrics.json", std::ios::binary);
    bytes[i].assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return {!bytes[0].empty() && bytes[0] == bytes[1],
          "two runs from one config file, metrics.json " + std::to_string(bytes[0].size()) + " bytes, " +
              (bytes[0] == bytes[1] ? "identical" : "different")};
}

}  // namespace

int main() {
  report(1, "subset algebra", subset_algebra);
  report(2, "gradient correctness", gradient_check);
  report(3, "aggregation oracle", aggregation_oracle);
  report(4, "contract safety and replay", contract_safety);
  report(6, "centralized learnability", centralized_learnability);
  report(7, "federation benefit", federation_benefit);
  report(8, "forest dominance", forest_dominance);
  report(9, "gap realism", gap_realism);
  report(10, "determinism", determinism);
  report(5, "privacy audit", privacy);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
