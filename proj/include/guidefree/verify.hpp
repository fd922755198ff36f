#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace guidefree {

/// One named comparison inside a suite: the largest gap over all cases
/// against its tolerance (gap < tolerance passes).
struct CheckSummary {
  std::string name;
  std::size_t cases = 0;
  double max_gap = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct SuiteReport {
  std::string suite;
  bool passed = false;
  std::vector<CheckSummary> checks;
  std::string json;  // full report: per-case gaps, replay seeds and problem tables

  const CheckSummary* find(const std::string& check) const;
};

struct VerifyOptions {
  std::uint64_t seed = 20240917;
  /// Replaces every gap tolerance of the suite (for theorem3 the allowed
  /// number of standard errors).
  std::optional<double> tolerance;
  int problems = 100;  // random instances for theorem1, theorem2, equivalence
};

/// theorem1, theorem2, theorem3, equivalence, corollaries.
const std::vector<std::string>& suite_names();

/// Throws std::invalid_argument for an unknown suite name.
SuiteReport run_suite(const std::string& suite, const VerifyOptions& options = {});

/// "all" runs every suite; the JSON nests the suite reports.
SuiteReport run_verify(const std::string& suite, const VerifyOptions& options = {});

}  // namespace guidefree
