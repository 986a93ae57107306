#pragma once

#include <string>
#include <vector>

#include <cstdint>

namespace ctrack {

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;  // max error, case counts, counterexample seed on failure
};

// Individual suites. b_bar_scale is a fault-injection hook used by tests to
// verify the oracle suite actually detects a wrong recurrence.
SelftestResult selftest_scan_oracle(uint64_t seed, int cases, double tol,
                                    double b_bar_scale = 1.0);
SelftestResult selftest_streaming(uint64_t seed, int cases, double tol);
SelftestResult selftest_gradients(uint64_t seed);
SelftestResult selftest_giou(uint64_t seed, int cases);

std::vector<SelftestResult> run_selftests(uint64_t seed);

}  // namespace ctrack
