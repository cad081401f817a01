#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pagen/tensor.hpp"

namespace pagen {

struct GradCheckResult {
  // max over checked coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences. `f` must rebuild its graph from the current values of `inputs`
// on every call. All inputs must be f64. When `max_coords_per_input` is
// nonzero, larger inputs are checked on a seeded random subset of coordinates.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                           double eps = 1e-5, std::size_t max_coords_per_input = 0,
                           std::uint64_t sample_seed = 0);

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double eps = 1e-5);

}  // namespace pagen
