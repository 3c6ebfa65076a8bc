#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mhai/error.hpp"
#include "mhai/nn.hpp"

namespace mhai {

struct WeightedParams {
  std::string source;  // submitting client address
  ModelParams params;
  std::size_t n_samples = 1;
};

enum class AggregationRule { SampleWeighted, Unweighted };

/// FedAvg: theta = sum(n_i * theta_i) / sum(n_i), elementwise.
///
/// Contributions are summed in a fixed order (by source address, then sample
/// count, then theta) so the result does not depend on arrival order. Each
/// coordinate is clamped into [min_i, max_i], which only removes rounding
/// excursions and makes k identical inputs return that input exactly.
inline ModelParams fed_average(std::vector<WeightedParams> contributions,
                               AggregationRule rule = AggregationRule::SampleWeighted) {
  if (contributions.empty()) throw DomainError("fed_average needs at least one contribution");
  const NetShape& shape = contributions.front().params.shape;
  for (std::size_t i = 0; i < contributions.size(); ++i) {
    const auto& c = contributions[i];
    if (c.params.shape != shape || c.params.theta.size() != shape.param_count())
      throw DomainError("contribution " + std::to_string(i) + " (" + c.source + ") has a mismatched shape");
    if (c.n_samples < 1) throw DomainError("contribution " + std::to_string(i) + " has n_samples = 0");
  }
  std::sort(contributions.begin(), contributions.end(), [](const WeightedParams& a, const WeightedParams& b) {
    if (a.source != b.source) return a.source < b.source;
    if (a.n_samples != b.n_samples) return a.n_samples < b.n_samples;
    return a.params.theta < b.params.theta;
  });

  const std::size_t n = shape.param_count();
  std::vector<double> sum(n, 0.0), lo(n, INFINITY), hi(n, -INFINITY);
  double total = 0;
  for (const auto& c : contributions) {
    const double w = rule == AggregationRule::SampleWeighted ? static_cast<double>(c.n_samples) : 1.0;
    total += w;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = c.params.theta[j];
      sum[j] += w * v;
      lo[j] = std::min(lo[j], v);
      hi[j] = std::max(hi[j], v);
    }
  }
  ModelParams out{shape, std::move(sum)};
  for (std::size_t j = 0; j < n; ++j) out.theta[j] = std::clamp(out.theta[j] / total, lo[j], hi[j]);
  out.validate();
  return out;
}

}  // namespace mhai
