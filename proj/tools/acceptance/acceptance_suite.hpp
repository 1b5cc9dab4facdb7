#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pmsg::acceptance {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Runs every acceptance criterion; `jobs` > 1 evaluates criteria concurrently.
/// Results come back ordered by id regardless of scheduling.
std::vector<CriterionResult> run_all(int jobs = 1);

/// One "PASS|FAIL <id> <title> -- <detail>" line per criterion; returns true when all pass.
bool report(std::ostream& out, const std::vector<CriterionResult>& results);

}  // namespace pmsg::acceptance
