#pragma once

#include <string>
#include <vector>

namespace idsee {

struct AcceptanceMetric {
  std::string name;
  double value = 0.0;
};

struct AcceptanceResult {
  int id = 0;
  std::string name;
  bool pass = false;          // numerical checks only (worker-invariant)
  double seconds = 0.0;
  double budget_seconds = 0.0;
  std::vector<AcceptanceMetric> metrics;
  std::vector<std::string> failures;
};

// Runs criteria 1-8 of the verification suite with the given worker count.
// All numerical outcomes are independent of `workers` by the deterministic
// reduction contract; only timings differ.
std::vector<AcceptanceResult> run_acceptance(int workers);

// Worker-invariant JSON summary (criterion ids, pass flags, metrics; no
// timings), serialized deterministically for byte-comparison across runs.
std::string acceptance_summary_json(const std::vector<AcceptanceResult>& r);

}  // namespace idsee
