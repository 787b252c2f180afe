// Acceptance runner: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number.
#include <cstdlib>
#include <iostream>
#include <set>

#include "ridgealign/selftest.hpp"

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (int id = 1; id <= ridgealign::kCheckCount; ++id) {
    if (!only.empty() && !only.count(id)) continue;
    const ridgealign::CheckResult r = ridgealign::run_check(id);
    ridgealign::print_result(std::cout, r, true);
    std::cout.flush();
    failed += r.pass ? 0 : 1;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
