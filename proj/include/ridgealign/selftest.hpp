#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace ridgealign {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

/// Number of acceptance checks; ids run from 1 to kCheckCount.
inline constexpr int kCheckCount = 12;

/// Runs one check. Checks with a runtime budget fail when they exceed it.
CheckResult run_check(int id);

/// Quick checks only unless `full`; the training and end-to-end checks (9 and
/// 10) take minutes. `on_result` fires after each check.
std::vector<CheckResult> run_checks(bool full, const std::function<void(const CheckResult&)>& on_result = {});

/// One "PASS|FAIL <id> <name>: <detail>" line per result. Timings are left
/// out unless asked for, so repeated runs print the same report.
void print_report(std::ostream& out, const std::vector<CheckResult>& results, bool with_timing = false);
void print_result(std::ostream& out, const CheckResult& result, bool with_timing = false);

}  // namespace ridgealign
