#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <initializer_list>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mhai/error.hpp"

namespace mhai {

/// Identifier of one physiological data stream (ECG, EDA, ...).
struct StreamId {
  std::string name;

  StreamId() = default;
  StreamId(std::string n) : name(std::move(n)) {}
  StreamId(const char* n) : name(n) {}

  auto operator<=>(const StreamId&) const = default;
  bool operator==(const StreamId&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const StreamId& s) { return os << s.name; }

inline constexpr std::size_t kMaxUniverse = 6;

inline std::vector<StreamId> default_universe() {
  return {"ECG", "EDA", "ST", "Resp", "SBP", "DBP"};
}

/// Rejects empty, duplicate, or oversized universes and names that would
/// break subset keys or CSV headers.
inline void validate_universe(const std::vector<StreamId>& universe) {
  if (universe.empty()) throw ConfigError("stream universe is empty");
  if (universe.size() > kMaxUniverse)
    throw ConfigError("stream universe has " + std::to_string(universe.size()) +
                      " streams; at most 6 are supported");
  std::set<StreamId> seen;
  for (const auto& s : universe) {
    if (s.name.empty() || s.name.find_first_of("+,:\n\r\t ") != std::string::npos || s.name == "t" ||
        s.name == "affect")
      throw ConfigError("invalid stream name '" + s.name + "'");
    if (!seen.insert(s).second) throw ConfigError("duplicate stream '" + s.name + "' in universe");
  }
}

/// Non-empty, sorted, duplicate-free set of streams. Canonical, so it is
/// usable directly as a map key and serializes identically for equal sets.
class StreamSubset {
 public:
  StreamSubset() = default;  // only valid as a placeholder; see empty()

  explicit StreamSubset(std::vector<StreamId> members) : members_(std::move(members)) {
    std::sort(members_.begin(), members_.end());
    if (members_.empty()) throw DomainError("stream subset must be non-empty");
    if (std::adjacent_find(members_.begin(), members_.end()) != members_.end())
      throw DomainError("stream subset has duplicate members");
  }

  StreamSubset(std::initializer_list<StreamId> members)
      : StreamSubset(std::vector<StreamId>(members)) {}

  /// Parses the `+`-joined key form, e.g. `ECG+EDA+ST`.
  static StreamSubset parse(std::string_view key) {
    std::vector<StreamId> out;
    std::size_t start = 0;
    while (true) {
      auto pos = key.find('+', start);
      auto part = key.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
      if (part.empty()) throw ParseError("malformed subset key '" + std::string(key) + "'");
      out.emplace_back(std::string(part));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    StreamSubset s(std::move(out));
    if (s.key() != key) throw ParseError("subset key '" + std::string(key) + "' is not canonical");
    return s;
  }

  const std::vector<StreamId>& members() const { return members_; }
  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }

  bool contains(const StreamId& s) const {
    return std::binary_search(members_.begin(), members_.end(), s);
  }

  bool is_subset_of(const StreamSubset& other) const {
    return std::includes(other.members_.begin(), other.members_.end(), members_.begin(), members_.end());
  }

  std::vector<StreamId> missing_from(const StreamSubset& other) const {
    std::vector<StreamId> out;
    std::set_difference(members_.begin(), members_.end(), other.members_.begin(), other.members_.end(),
                        std::back_inserter(out));
    return out;
  }

  std::string key() const {
    std::string k;
    for (const auto& m : members_) {
      if (!k.empty()) k += '+';
      k += m.name;
    }
    return k;
  }

  auto operator<=>(const StreamSubset&) const = default;
  bool operator==(const StreamSubset&) const = default;

 private:
  std::vector<StreamId> members_;
};

inline std::ostream& operator<<(std::ostream& os, const StreamSubset& s) { return os << s.key(); }

/// Ordering used for every list of subsets: by size, then lexicographic.
inline bool size_then_lex(const StreamSubset& a, const StreamSubset& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

/// All 2^n - 1 non-empty subsets, including the full set, ordered by size
/// then lexicographically.
inline std::vector<StreamSubset> power_set(const StreamSubset& streams) {
  if (streams.empty()) throw DomainError("power_set of an empty stream set");
  const auto& m = streams.members();
  const std::size_t n = m.size();
  std::vector<StreamSubset> out;
  out.reserve((std::size_t{1} << n) - 1);
  for (std::size_t k = 1; k <= n; ++k) {
    // Lexicographic k-combinations of the sorted member list.
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    while (true) {
      std::vector<StreamId> pick;
      pick.reserve(k);
      for (auto i : idx) pick.push_back(m[i]);
      out.emplace_back(std::move(pick));
      std::size_t i = k;
      while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
      if (i == 0) break;
      ++idx[i - 1];
      for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
  }
  return out;
}

}  // namespace mhai
