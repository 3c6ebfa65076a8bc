#include <gtest/gtest.h>

#include <set>

#include "mhai/cohort.hpp"
#include "mhai/stream.hpp"

using namespace mhai;

namespace {

std::vector<StreamId> letters(std::size_t n) {
  std::vector<StreamId> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(std::string(1, static_cast<char>('A' + i)));
  return out;
}

// Brute force: every non-zero bitmask over the sorted members.
std::set<std::string> bitmask_subsets(const std::vector<StreamId>& sorted) {
  std::set<std::string> out;
  for (unsigned mask = 1; mask < (1u << sorted.size()); ++mask) {
    std::string key;
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (mask & (1u << i)) key += (key.empty() ? "" : "+") + sorted[i].name;
    out.insert(key);
  }
  return out;
}

PatientDataset patient(const std::string& id, std::vector<StreamId> streams, std::size_t n) {
  PatientDataset ds{id, StreamSubset(streams), {}};
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r{static_cast<std::int64_t>(i), {}, static_cast<int>(i % kNumClasses)};
    double v = 0.5 * static_cast<double>(i);
    for (const auto& s : ds.streams.members()) r.values[s] = v++;
    ds.records.push_back(r);
  }
  return ds;
}

}  // namespace

TEST(PowerSet, ThreeStreamsInSizeThenLexOrder) {
  auto ps = power_set(StreamSubset{"A", "B", "C"});
  std::vector<std::string> keys;
  for (const auto& s : ps) keys.push_back(s.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"A", "B", "C", "A+B", "A+C", "B+C", "A+B+C"}));
}

TEST(PowerSet, Singleton) {
  auto ps = power_set(StreamSubset{"A"});
  ASSERT_EQ(ps.size(), 1u);
  EXPECT_EQ(ps[0].key(), "A");
}

TEST(PowerSet, MatchesBitmaskEnumeration) {
  for (std::size_t n = 1; n <= 6; ++n) {
    auto universe = letters(n);
    auto ps = power_set(StreamSubset(universe));
    EXPECT_EQ(ps.size(), (std::size_t{1} << n) - 1);
    std::set<std::string> got;
    for (const auto& s : ps) {
      EXPECT_TRUE(std::is_sorted(s.members().begin(), s.members().end()));
      got.insert(s.key());
    }
    EXPECT_EQ(got.size(), ps.size()) << "duplicates for n=" << n;
    EXPECT_EQ(got, bitmask_subsets(universe));
    EXPECT_TRUE(std::is_sorted(ps.begin(), ps.end(), size_then_lex));
  }
}

TEST(PowerSet, DefaultUniverseHas63) {
  EXPECT_EQ(power_set(StreamSubset(default_universe())).size(), 63u);
}

TEST(StreamSubsetKey, CanonicalAndParsable) {
  StreamSubset s{"ST", "ECG", "EDA"};
  EXPECT_EQ(s.key(), "ECG+EDA+ST");
  EXPECT_EQ(StreamSubset::parse("ECG+EDA+ST"), s);
  EXPECT_THROW(StreamSubset::parse("ST+ECG"), ParseError);
  EXPECT_THROW(StreamSubset::parse("ECG++ST"), ParseError);
  EXPECT_THROW(StreamSubset({}), DomainError);
  EXPECT_THROW((StreamSubset{"A", "A"}), DomainError);
}

TEST(Universe, Validation) {
  EXPECT_NO_THROW(validate_universe(default_universe()));
  EXPECT_THROW(validate_universe({}), ConfigError);
  EXPECT_THROW(validate_universe(letters(7)), ConfigError);
  EXPECT_THROW(validate_universe({"A", "A"}), ConfigError);
  EXPECT_THROW(validate_universe({"A+B"}), ConfigError);
}

TEST(Project, KeepsLabelsAndTimestamps) {
  auto ds = patient("p", {"A", "B", "C"}, 20);
  auto p = project(ds, StreamSubset{"A", "B"});
  ASSERT_EQ(p.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(p.records[i].timestamp, ds.records[i].timestamp);
    EXPECT_EQ(p.records[i].label, ds.records[i].label);
    ASSERT_EQ(p.records[i].values.size(), 2u);
    EXPECT_EQ(p.records[i].values.at("A"), ds.records[i].values.at("A"));
    EXPECT_EQ(p.records[i].values.at("B"), ds.records[i].values.at("B"));
  }
  EXPECT_NO_THROW(p.validate());
}

TEST(Project, FullSetIsIdentity) {
  auto ds = patient("p", {"A", "B"}, 5);
  EXPECT_EQ(project(ds, ds.streams), ds);
}

TEST(Project, MissingStreamNamed) {
  auto ds = patient("p", {"A"}, 3);
  try {
    project(ds, StreamSubset{"D"});
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("D"), std::string::npos);
  }
}

TEST(Cohorts, TwoPatientsHandEnumerated) {
  auto cohorts = build_cohorts({patient("first", {"A", "B"}, 4), patient("second", {"A"}, 4)});
  ASSERT_EQ(cohorts.size(), 3u);
  auto ids = [&](const StreamSubset& s) {
    std::vector<std::string> out;
    for (const auto& m : cohorts.at(s)) out.push_back(m.patient_id);
    return out;
  };
  EXPECT_EQ(ids(StreamSubset{"A"}), (std::vector<std::string>{"first", "second"}));
  EXPECT_EQ(ids(StreamSubset{"B"}), (std::vector<std::string>{"first"}));
  EXPECT_EQ(ids(StreamSubset{"A", "B"}), (std::vector<std::string>{"first"}));
  for (const auto& [s, members] : cohorts)
    for (const auto& m : members) EXPECT_EQ(m.data.streams, s);
}

TEST(Cohorts, SinglePatientSingleStream) {
  auto cohorts = build_cohorts({patient("p", {"A"}, 2)});
  EXPECT_EQ(cohorts.size(), 1u);
}

TEST(Cohorts, NestedUniversesGive26Memberships) {
  std::vector<StreamId> nested{"ST", "ECG", "EDA", "Resp"};
  std::vector<PatientDataset> pats;
  for (std::size_t k = 1; k <= 4; ++k)
    pats.push_back(patient("p" + std::to_string(k), {nested.begin(), nested.begin() + static_cast<std::ptrdiff_t>(k)}, 3));
  auto cohorts = build_cohorts(pats);
  std::map<std::string, std::size_t> per_patient;
  std::size_t total = 0;
  for (const auto& [_, members] : cohorts)
    for (const auto& m : members) {
      ++per_patient[m.patient_id];
      ++total;
    }
  EXPECT_EQ(total, 26u);
  for (std::size_t k = 1; k <= 4; ++k) EXPECT_EQ(per_patient["p" + std::to_string(k)], (std::size_t{1} << k) - 1);
  EXPECT_EQ(cohorts.size(), 15u);
}
