// mhai: command-line driver for the simulator.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mhai/mhai.hpp"

using namespace mhai;
namespace fs = std::filesystem;

namespace {

int print_json(const nlohmann::json& j) {
  std::cout << j.dump(2) << '\n';
  return 0;
}

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

int cmd_generate(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
                 std::optional<std::size_t> patients) {
  auto cfg = config_or_default(config);
  if (seed) cfg.seed = *seed;
  if (patients) cfg.n_patients = *patients;
  cfg.data_dir.clear();
  cfg.validate();
  auto pop = make_population(cfg);
  save_population(out, pop.patients);
  for (const auto& w : pop.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "wrote " << pop.patients.size() << " patients to " << out << '\n';
  return 0;
}

int cmd_run(const std::string& config, std::string out) {
  auto cfg = load_config(config);
  if (out.empty()) out = cfg.output_dir.empty() ? "mhai_out" : cfg.output_dir;
  auto run = run_experiment_full(cfg);
  write_outputs(out, run);
  const auto& m = run.report;
  nlohmann::json summary{{"output_dir", out},
                         {"population_mean", m.population_mean},
                         {"forest_dominance_fraction", m.forest_dominance_fraction},
                         {"rounds_completed", m.rounds_completed},
                         {"replay_ok", m.replay_ok},
                         {"privacy_ok", m.privacy_ok}};
  if (m.baseline) summary["baseline_accuracy"] = m.baseline->accuracy;
  print_json(summary);
  return m.replay_ok && m.privacy_ok ? 0 : 1;
}

int cmd_sweep(const std::string& config, std::size_t max_nodes, const std::string& csv) {
  auto cfg = load_config(config);
  if (max_nodes == 0) max_nodes = cfg.sweep_max_nodes;
  auto s = node_sweep(cfg, max_nodes);
  if (!csv.empty()) {
    std::ofstream out(csv);
    out << "nodes,accuracy\n";
    for (const auto& [k, a] : s.curve) out << k << ',' << detail::format_double(a) << '\n';
  }
  return print_json(to_json(s));
}

int cmd_baseline(const std::string& config) { return print_json(to_json(run_baseline(load_config(config)))); }

std::vector<LedgerEntry> read_ledger_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open ledger " + path);
  return read_ledger(in);
}

int cmd_ledger_export(const std::string& config, const std::string& out) {
  auto cfg = load_config(config);
  cfg.baseline = false;
  cfg.sweep_max_nodes = 0;
  auto run = run_experiment_full(cfg);
  if (out.empty() || out == "-") {
    write_ledger(std::cout, run.sim.contract.ledger());
  } else {
    write_outputs(out, run);
    std::cout << "wrote " << (fs::path(out) / "ledger.jsonl").string() << " ("
              << run.sim.contract.ledger().size() << " entries) and payloads\n";
  }
  return 0;
}

int cmd_ledger_verify(const std::string& path) {
  const auto problems = audit_ledger(read_ledger_file(path));
  for (const auto& p : problems) std::cout << p << '\n';
  std::cout << (problems.empty() ? "ledger ok\n" : "ledger has problems\n");
  return problems.empty() ? 0 : 1;
}

int cmd_ledger_replay(const std::string& path, std::string payloads) {
  if (payloads.empty()) payloads = (fs::path(path).parent_path() / "payloads").string();
  const auto rep = replay_ledger(read_ledger_file(path), directory_payloads(payloads));
  nlohmann::json j{{"ok", rep.ok()}, {"problems", rep.problems}};
  for (const auto& [k, d] : rep.aggregates) j["aggregates"].push_back({{"round", k.first}, {"subset", k.second}, {"digest", to_hex(d)}});
  for (const auto& [k, d] : rep.final_models) j["final_models"].push_back({{"client", k.first}, {"subset", k.second}, {"digest", to_hex(d)}});
  print_json(j);
  return rep.ok() ? 0 : 1;
}

int cmd_inspect_forest(const std::string& path, std::size_t max_trees) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open forest " + path);
  const auto f = read_forest(in);
  std::cout << "columns:";
  for (const auto& c : f.columns()) std::cout << ' ' << c;
  std::cout << "\ntrees: " << f.trees().size() << "\nsplits:";
  for (const auto& [c, n] : f.split_counts()) std::cout << ' ' << c << '=' << n;
  std::cout << '\n';
  render_forest(std::cout, f, max_trees);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized affect-recognition learning simulator"};
  app.require_subcommand(1);

  std::string config, out, payloads, file;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> patients;
  std::size_t max_nodes = 0, max_trees = 3;

  auto* gen = app.add_subcommand("generate", "Write a synthetic population as CSV files plus manifest.json");
  gen->add_option("-c,--config", config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  gen->add_option("-o,--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Override the config seed");
  gen->add_option("--patients", patients, "Override the number of patients");

  auto* run = app.add_subcommand("run", "Run an experiment and write metrics, curves, ledger and forests");
  run->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--out", out, "Output directory (default: output_dir from the config, else mhai_out)");

  auto* sweep = app.add_subcommand("sweep", "Accuracy of one subset model as nodes join the federation");
  sweep->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("-n,--max-nodes", max_nodes, "Largest federation (default: sweep_max_nodes)");
  sweep->add_option("--csv", out, "Also write the curve as CSV");

  auto* base = app.add_subcommand("baseline", "Centralized model on the pooled full-stream cohort");
  base->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  auto* ledger = app.add_subcommand("ledger", "Export, audit or replay a contract ledger");
  ledger->require_subcommand(1);
  auto* lexp = ledger->add_subcommand("export", "Run the federation and export its ledger");
  lexp->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  lexp->add_option("-o,--out", out, "Output directory for ledger.jsonl and payloads (default: stdout, ledger only)");
  auto* lver = ledger->add_subcommand("verify", "Check sequencing and election invariants");
  lver->add_option("ledger", file, "ledger.jsonl")->required()->check(CLI::ExistingFile);
  auto* lrep = ledger->add_subcommand("replay", "Recompute every aggregate from the logged payloads");
  lrep->add_option("ledger", file, "ledger.jsonl")->required()->check(CLI::ExistingFile);
  lrep->add_option("-p,--payloads", payloads, "Payload directory (default: payloads/ next to the ledger)");

  auto* insp = app.add_subcommand("inspect-forest", "Render a saved forest");
  insp->add_option("forest", file, "Forest file")->required()->check(CLI::ExistingFile);
  insp->add_option("-t,--trees", max_trees, "Number of trees to render");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_generate(config, out, seed, patients);
    if (*run) return cmd_run(config, out);
    if (*sweep) return cmd_sweep(config, max_nodes, out);
    if (*base) return cmd_baseline(config);
    if (*lexp) return cmd_ledger_export(config, out);
    if (*lver) return cmd_ledger_verify(file);
    if (*lrep) return cmd_ledger_replay(file, payloads);
    if (*insp) return cmd_inspect_forest(file, max_trees);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
