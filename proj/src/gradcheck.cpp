#include "pagen/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace pagen {

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                           double eps, std::size_t max_coords_per_input,
                           std::uint64_t sample_seed) {
  for (const Tensor& x : inputs) {
    if (x.dtype() != DType::f64) throw UsageError("grad_check: inputs must be f64");
  }
  std::vector<bool> previous(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    previous[i] = inputs[i].requires_grad();
    inputs[i].set_requires_grad(true);
    inputs[i].zero_grad();
  }
  autograd::tape().clear();
  const Tensor loss = f();
  if (loss.numel() != 1) {
    throw UsageError("grad_check: function must be scalar-valued, got shape " +
                     shape_to_string(loss.shape()));
  }
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (Tensor& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

  GradCheckResult result;
  std::mt19937_64 rng(sample_seed);
  autograd::NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& x = inputs[i];
    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_input > 0 && coords.size() > max_coords_per_input) {
      std::vector<std::size_t> picked;
      std::sample(coords.begin(), coords.end(), std::back_inserter(picked),
                  static_cast<std::ptrdiff_t>(max_coords_per_input), rng);
      coords = std::move(picked);
    }
    std::span<double> values = x.mutable_data();
    for (std::size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + eps;
      const double up = f().item();
      values[c] = saved - eps;
      const double down = f().item();
      values[c] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][c];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.coordinates_checked;
      if (err > result.max_rel_error || result.coordinates_checked == 1) {
        result.max_rel_error = err;
        result.worst_input = i;
        result.worst_index = c;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].zero_grad();
    inputs[i].set_requires_grad(previous[i]);
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  Tensor inputs[] = {x};
  return grad_check([&] { return f(x); }, std::span<Tensor>(inputs), eps);
}

}  // namespace pagen
