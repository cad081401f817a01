#pragma once

#include <cstddef>
#include <string>
#include <vector>

// Central-difference checks of every differentiable op and of the composite
// generator + detector objective.
namespace pagen {

struct OpCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

std::vector<OpCheckResult> run_gradcheck_suite(double tolerance = 1e-4, double eps = 1e-5);

}  // namespace pagen
