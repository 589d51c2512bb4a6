#pragma once

// The registered gradient-check graphs: every differentiable primitive over seeded
// inputs and shapes, plus the composed alignment, adaptation and full-model graphs.

#include <cstdint>
#include <string>
#include <vector>

#include "hfan/gradcheck.hpp"

namespace hfan {

struct SuiteResult {
  std::string graph;
  double worst = 0.0;  // max relative error over all cases of the graph
  std::size_t cases = 0;
  bool passed = false;
};

struct SuiteOptions {
  std::size_t seeds = 3;  // seeded cases per primitive shape
  bool primitives = true;
  bool composed = true;
  /// Adds a square op whose backward rule drops the factor of two; it must fail.
  bool corrupt = false;
};

std::vector<SuiteResult> run_gradcheck_suite(const SuiteOptions& options = {});

}  // namespace hfan
