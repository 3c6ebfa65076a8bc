// Library walk-through: cohorts, one subset model, then a small federation.

#include <iostream>

#include "mhai/mhai.hpp"

using namespace mhai;

int main() {
  SyntheticConfig sc;
  sc.seed = 5;
  sc.n_patients = 4;
  sc.universe = {"ST", "ECG", "EDA"};
  sc.assignment = StreamAssignment::Nested;
  sc.streams_per_patient = {0.25, 0.25, 0.5, 0, 0, 0};
  sc.samples_per_patient = 300;
  const auto pop = generate_synthetic(sc);

  const auto cohorts = build_cohorts(pop.patients);
  std::cout << "cohorts:\n";
  for (const auto& [subset, members] : cohorts) std::cout << "  " << subset << "  " << members.size() << " patients\n";

  // Centralized model on the ST cohort.
  const StreamSubset st{"ST"};
  const auto norm = Normalizer::reference(sc.universe);
  std::vector<LabeledData> train_parts, test_parts;
  for (const auto& m : cohorts.at(st)) {
    auto [tr, te] = train_test_split(norm.apply(m.data), 0.7, 1);
    train_parts.push_back(to_labeled(tr, st));
    test_parts.push_back(to_labeled(te, st));
  }
  TrainConfig tc;
  tc.hidden = {16};
  const auto fit = train(concat(train_parts), tc);
  std::cout << "ST model test accuracy " << accuracy(fit.params, concat(test_parts)) << '\n';

  // Full federation on a tiny population.
  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.n_patients = 6;
  cfg.universe = {"ST", "ECG"};
  cfg.device_count_distribution = {0.5, 0.5, 0, 0, 0, 0};
  cfg.samples_per_patient = 300;
  cfg.train.hidden = {16};
  cfg.local_epochs = 3;
  cfg.federation_rounds = 2;
  cfg.calibration_samples = 30;
  cfg.forest.n_trees = 8;
  const auto report = run_experiment(cfg);
  for (const auto& c : report.clients)
    std::cout << c.address << " " << c.streams << " forest " << c.forest_accuracy << " best model " << c.best_model
              << " " << c.best_model_accuracy << '\n';
  std::cout << "population mean " << report.population_mean << ", replay " << (report.replay_ok ? "ok" : "FAILED") << '\n';
}
