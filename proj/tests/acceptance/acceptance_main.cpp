// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Optional arguments select criteria by id.

#include <cstdio>
#include <cstdlib>
#include <set>
#include <string>

#include "qlab/checks.hpp"

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0, ran = 0;
  for (const auto& c : qlab::checks::acceptance_criteria()) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto o = qlab::checks::run_criterion(c);
    std::printf("%s\n", qlab::checks::format_outcome(o).c_str());
    std::fflush(stdout);
    ++ran;
    failed += o.verdict.passed ? 0 : 1;
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
