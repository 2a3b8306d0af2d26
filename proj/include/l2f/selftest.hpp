#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace l2f::selftest {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Property suites: finite-difference agreement of every primitive,
/// second-order identities, sampler range checks, determinism, and the
/// modulation range invariant.
std::vector<CheckResult> run_all(std::uint64_t seed = 20240u);

/// Prints one line per check; returns true when everything passed.
bool report(const std::vector<CheckResult>& results, std::ostream& os);

}  // namespace l2f::selftest
