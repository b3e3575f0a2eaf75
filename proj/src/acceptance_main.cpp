// Acceptance-suite driver: runs every criterion, prints one PASS/FAIL line
// per criterion, and checks that the summary is byte-identical across worker
// counts. Exit status 0 iff every criterion passes.
#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "idsee/acceptance.hpp"

int main() {
  using clock = std::chrono::steady_clock;

  std::vector<idsee::AcceptanceResult> base = idsee::run_acceptance(1);
  bool all_pass = true;
  for (const auto& r : base) {
    const bool in_budget = r.budget_seconds <= 0.0 || r.seconds < r.budget_seconds;
    const bool ok = r.pass && in_budget;
    all_pass = all_pass && ok;
    std::printf("criterion %d: %s  [%.1fs / budget %.0fs]  %s\n", r.id,
                ok ? "PASS" : "FAIL", r.seconds, r.budget_seconds,
                r.name.c_str());
    for (const auto& m : r.metrics)
      std::printf("    %-28s %.6g\n", m.name.c_str(), m.value);
    if (!r.pass)
      for (const auto& f : r.failures) std::printf("    failure: %s\n", f.c_str());
    if (!in_budget) std::printf("    failure: runtime budget exceeded\n");
  }

  // Criterion 9: a second full run with a different worker count must produce
  // a byte-identical summary (timings are excluded from the summary).
  const auto t0 = clock::now();
  std::vector<idsee::AcceptanceResult> alt = idsee::run_acceptance(4);
  const double secs = std::chrono::duration<double>(clock::now() - t0).count();
  const std::string s1 = idsee::acceptance_summary_json(base);
  const std::string s2 = idsee::acceptance_summary_json(alt);
  const bool c9 = (s1 == s2);
  all_pass = all_pass && c9;
  std::printf("criterion 9: %s  [%.1fs]  worker-count invariance of summary.json\n",
              c9 ? "PASS" : "FAIL", secs);
  if (!c9)
    std::printf("    failure: summaries differ between --workers 1 and 4\n");

  return all_pass ? 0 : 1;
}
