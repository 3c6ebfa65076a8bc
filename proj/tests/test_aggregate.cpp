#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "mhai/aggregate.hpp"
#include "oracles.hpp"

using namespace mhai;

namespace {

ModelParams scalarish(double v) {
  NetShape s{1, {1}, 11};
  return ModelParams{s, std::vector<double>(s.param_count(), v)};
}

}  // namespace

TEST(FedAverage, SingleContributionIsIdentity) {
  auto p = init_params(NetShape{2, {4}, 11}, 3);
  EXPECT_EQ(fed_average({{"c1", p, 17}}), p);
}

TEST(FedAverage, EqualWeightsMean) {
  auto out = fed_average({{"a", scalarish(0.0), 5}, {"b", scalarish(1.0), 5}});
  for (double v : out.theta) EXPECT_EQ(v, 0.5);
}

TEST(FedAverage, WeightedMean) {
  auto out = fed_average({{"a", scalarish(2.0), 3}, {"b", scalarish(5.0), 1}});
  for (double v : out.theta) EXPECT_DOUBLE_EQ(v, (2.0 * 3 + 5.0 * 1) / 4);
  auto unweighted = fed_average({{"a", scalarish(2.0), 3}, {"b", scalarish(5.0), 1}}, AggregationRule::Unweighted);
  for (double v : unweighted.theta) EXPECT_DOUBLE_EQ(v, 3.5);
}

TEST(FedAverage, MismatchNamesIndex) {
  try {
    fed_average({{"a", scalarish(1), 1}, {"b", scalarish(1), 1}, {"c", init_params(NetShape{2, {1}, 11}, 1), 1}});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("contribution 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(fed_average({}), DomainError);
}

TEST(FedAverage, RandomInstancesMatchOracleAndProperties) {
  std::mt19937_64 rng(2024);
  for (int inst = 0; inst < 100; ++inst) {
    NetShape s{1 + rng() % 3, {1 + rng() % 4}, 11};
    const std::size_t k = 1 + rng() % 6;
    std::vector<WeightedParams> in;
    std::vector<std::vector<double>> thetas;
    std::vector<double> w;
    std::uniform_real_distribution<double> u(-3, 3);
    for (std::size_t i = 0; i < k; ++i) {
      ModelParams p{s, std::vector<double>(s.param_count())};
      for (auto& v : p.theta) v = u(rng);
      const std::size_t n = 1 + rng() % 500;
      in.push_back({"c" + std::to_string(i), p, n});
      thetas.push_back(p.theta);
      w.push_back(static_cast<double>(n));
    }
    auto out = fed_average(in);
    auto expect = oracle::weighted_mean(thetas, w);
    for (std::size_t j = 0; j < expect.size(); ++j) {
      EXPECT_NEAR(out.theta[j], expect[j], 1e-12);
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& t : thetas) lo = std::min(lo, t[j]), hi = std::max(hi, t[j]);
      EXPECT_GE(out.theta[j], lo);
      EXPECT_LE(out.theta[j], hi);
    }
    auto shuffled = in;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(fed_average(shuffled).theta, out.theta);
    std::vector<WeightedParams> copies(k, in.front());
    for (std::size_t i = 0; i < k; ++i) copies[i].source = "x" + std::to_string(i);
    EXPECT_EQ(fed_average(copies).theta, in.front().params.theta);
  }
}
