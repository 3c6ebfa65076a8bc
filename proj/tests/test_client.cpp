#include <gtest/gtest.h>

#include "mhai/harness.hpp"
#include "oracles.hpp"

using namespace mhai;

namespace {

ClientConfig quick_config(std::size_t rounds = 1) {
  ClientConfig c;
  c.train.hidden = {16};
  c.local_epochs = 5;
  c.federation_rounds = rounds;
  c.calibration_samples = 40;
  c.forest.n_trees = 8;
  return c;
}

std::vector<PatientDataset> patients(std::vector<std::size_t> stream_counts, double noise = 0.4, std::size_t samples = 200,
                                     std::uint64_t seed = 1) {
  std::vector<PatientDataset> out;
  for (std::size_t i = 0; i < stream_counts.size(); ++i) {
    SyntheticConfig sc;
    sc.seed = seed + i;
    sc.n_patients = 1;
    sc.samples_per_patient = samples;
    sc.noise_sigma = noise;
    sc.universe = {"ST", "ECG", "EDA", "Resp"};
    sc.assignment = StreamAssignment::Nested;
    sc.streams_per_patient = {};
    sc.streams_per_patient[stream_counts[i] - 1] = 1;
    auto p = generate_synthetic(sc).patients[0];
    p.patient_id = "p" + std::to_string(i);
    out.push_back(std::move(p));
  }
  return out;
}

Simulation make_sim(const std::vector<PatientDataset>& pats, const ClientConfig& base, std::uint64_t seed = 1) {
  Simulation sim;
  sim.contract = Contract(seed);
  const auto norm = Normalizer::reference({"ST", "ECG", "EDA", "Resp"});
  for (std::size_t i = 0; i < pats.size(); ++i) {
    ClientConfig c = base;
    c.seed = mix_seed(seed, i);
    c.init_seed = seed;
    sim.clients.push_back(std::make_unique<Client>(client_address(i), pats[i], c, norm));
  }
  return sim;
}

}  // namespace

TEST(Client, OneStreamAfterTraining) {
  auto sim = make_sim(patients({1}), quick_config());
  auto& c = *sim.clients[0];
  EXPECT_TRUE(c.step(sim.contract, 0));
  EXPECT_EQ(c.phase(), Phase::Training);
  EXPECT_TRUE(c.step(sim.contract, 1));
  EXPECT_EQ(c.phase(), Phase::AwaitingElection);
  EXPECT_EQ(c.model_store().size(), 1u);
  ASSERT_EQ(sim.contract.ledger().size(), 1u);
  EXPECT_EQ(sim.contract.ledger()[0].kind, EntryKind::Registered);
  EXPECT_EQ(sim.contract.ledger()[0].from, c.address());
}

TEST(Client, ThreeClientLifecycle) {
  auto sim = make_sim(patients({1, 2, 3}), quick_config(2));
  run_simulation(sim, 5);
  for (const auto& c : sim.clients) {
    EXPECT_EQ(c->phase(), Phase::Ready);
    EXPECT_TRUE(c->forest().has_value());
    std::set<StreamSubset> keys;
    for (const auto& [s, _] : c->model_store()) keys.insert(s);
    auto ps = power_set(c->streams());
    EXPECT_EQ(keys, std::set<StreamSubset>(ps.begin(), ps.end()));
    EXPECT_EQ(c->rounds_completed(), 2u);
  }
  EXPECT_EQ(sim.contract.round(), 3u);
  EXPECT_TRUE(check_traces(sim).empty());
  EXPECT_TRUE(audit_ledger(sim.contract.ledger()).empty());
  // A shared subset ends with the same aggregate everywhere.
  const StreamSubset st{"ST"};
  for (const auto& c : sim.clients) EXPECT_EQ(c->model_store().at(st), sim.clients[0]->model_store().at(st));
}

TEST(Client, AggregatorAveragesBothSubmissions) {
  auto sim = make_sim(patients({1, 1}, 0.4, 200, 3), quick_config(1));
  run_simulation(sim, 2);
  const auto& ledger = sim.contract.ledger();
  std::vector<std::vector<double>> thetas;
  std::vector<double> weights;
  std::optional<LedgerEntry> bcast;
  for (const auto& e : ledger) {
    if (e.kind == EntryKind::ParamsSubmitted) {
      thetas.push_back(sim.contract.payloads().at(*e.digest).theta);
      weights.push_back(static_cast<double>(e.n_samples));
    }
    if (e.kind == EntryKind::AggregateBroadcast) {
      EXPECT_FALSE(bcast.has_value());
      bcast = e;
    }
  }
  ASSERT_EQ(thetas.size(), 2u);
  ASSERT_TRUE(bcast);
  auto expect = oracle::weighted_mean(thetas, weights);
  const auto& got = sim.contract.payloads().at(*bcast->digest).theta;
  for (std::size_t j = 0; j < expect.size(); ++j) EXPECT_NEAR(got[j], expect[j], 1e-12);
  for (const auto& c : sim.clients) EXPECT_EQ(params_digest(c->model_store().at(StreamSubset{"ST"})), *bcast->digest);
}

TEST(Client, PredictAffectContract) {
  auto sim = make_sim(patients({2}), quick_config());
  auto& c = *sim.clients[0];
  SampleRecord rec = c.raw_data().records[0];
  EXPECT_THROW(c.predict_affect(rec), LifecycleError);
  run_simulation(sim, 1);
  ASSERT_EQ(c.phase(), Phase::Ready);
  for (const auto& r : c.raw_data().records) {
    int k = c.predict_affect(r);
    EXPECT_GE(k, 0);
    EXPECT_LE(k, 10);
  }
  SampleRecord missing = rec;
  missing.values.erase(missing.values.begin());
  EXPECT_THROW(c.predict_affect(missing), DomainError);
  SampleRecord extra = rec;
  extra.values["Resp"] = 16;
  EXPECT_THROW(c.predict_affect(extra), DomainError);
}

TEST(Client, NoiselessRecordsMatchGroundTruth) {
  ClientConfig cfg = quick_config(4);
  cfg.train.hidden = {32};
  cfg.local_epochs = 25;
  cfg.calibration_samples = 200;
  cfg.forest = ForestConfig{};
  auto sim = make_sim(patients({2, 2}, 0.0, 800, 8), cfg);
  run_simulation(sim, 3);
  const auto fresh = patients({2}, 0.0, 200, 99);
  for (const auto& r : fresh[0].records)
    for (const auto& c : sim.clients) EXPECT_EQ(c->predict_affect(r), r.label);
}

TEST(Client, PhaseMachineSoundOverSmallSimulations) {
  std::size_t runs = 0;
  for (std::size_t n = 1; n <= 3; ++n)
    for (std::uint64_t sched = 0; sched < 4; ++sched)
      for (int crash = -1; crash < static_cast<int>(n); ++crash) {
        std::vector<std::size_t> counts;
        for (std::size_t i = 0; i < n; ++i) counts.push_back(1 + i % 2);
        ClientConfig cfg = quick_config(2);
        cfg.local_epochs = 1;
        cfg.forest.n_trees = 2;
        auto sim = make_sim(patients(counts, 0.4, 80, sched), cfg, sched);
        if (crash >= 0) sim.clients[static_cast<std::size_t>(crash)]->crash_after_register_in_round(1 + sched % 2);
        run_simulation(sim, sched);
        ++runs;
        EXPECT_TRUE(check_traces(sim).empty());
        EXPECT_TRUE(audit_ledger(sim.contract.ledger()).empty());
        for (const auto& c : sim.clients) {
          if (c->crashed()) continue;
          EXPECT_EQ(c->phase(), Phase::Ready);
          for (const auto& t : c->trace()) EXPECT_TRUE(allowed_transition(t.from, t.to));
        }
      }
  EXPECT_EQ(runs, 4u * (2 + 3 + 4));
}

TEST(Client, DropoutContributesNothingAfterCrash) {
  auto sim = make_sim(patients({1, 1, 1}), quick_config(2));
  sim.clients[1]->crash_after_register_in_round(1);
  run_simulation(sim, 4);
  EXPECT_TRUE(sim.clients[1]->crashed());
  for (const auto& e : sim.contract.ledger()) {
    if (e.kind == EntryKind::ParamsSubmitted) EXPECT_NE(e.from, "c001");
    if (e.kind == EntryKind::Registered && e.round == 2) EXPECT_NE(e.from, "c001");
  }
  EXPECT_EQ(sim.clients[0]->phase(), Phase::Ready);
  EXPECT_EQ(sim.clients[2]->phase(), Phase::Ready);
}

TEST(Client, TransitionRelation) {
  EXPECT_TRUE(allowed_transition(Phase::Collecting, Phase::Training));
  EXPECT_TRUE(allowed_transition(Phase::AwaitingElection, Phase::Aggregating));
  EXPECT_TRUE(allowed_transition(Phase::Calibrating, Phase::Ready));
  EXPECT_FALSE(allowed_transition(Phase::Collecting, Phase::Ready));
  EXPECT_FALSE(allowed_transition(Phase::Training, Phase::Calibrating));
  EXPECT_FALSE(allowed_transition(Phase::Ready, Phase::Training));
}
