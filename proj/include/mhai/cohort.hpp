#pragma once

#include <map>
#include <string>
#include <vector>

#include "mhai/dataset.hpp"
#include "mhai/stream.hpp"

namespace mhai {

/// Restricts every record to `subset`. Timestamps, order and labels are kept.
inline PatientDataset project(const PatientDataset& ds, const StreamSubset& subset) {
  if (!subset.is_subset_of(ds.streams)) {
    std::string missing;
    for (const auto& s : subset.missing_from(ds.streams)) missing += (missing.empty() ? "" : ", ") + s.name;
    throw DomainError("patient " + ds.patient_id + " does not own stream(s): " + missing);
  }
  PatientDataset out{ds.patient_id, subset, {}};
  out.records.reserve(ds.size());
  for (const auto& r : ds.records) {
    SampleRecord p{r.timestamp, {}, r.label};
    for (const auto& s : subset.members()) p.values.emplace(s, r.values.at(s));
    out.records.push_back(std::move(p));
  }
  return out;
}

struct CohortMember {
  std::string patient_id;
  PatientDataset data;
};

using CohortMap = std::map<StreamSubset, std::vector<CohortMember>>;

/// Every patient joins the cohort of each non-empty subset of its streams.
inline CohortMap build_cohorts(const std::vector<PatientDataset>& patients) {
  CohortMap cohorts;
  for (const auto& p : patients)
    for (const auto& subset : power_set(p.streams)) cohorts[subset].push_back({p.patient_id, project(p, subset)});
  return cohorts;
}

}  // namespace mhai
