#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pagen/errors.hpp"

namespace pagen {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Storage behind a Tensor handle. Values are held in double precision; an f32
// tensor keeps its values rounded to single precision.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  DType dtype = DType::f64;
  bool requires_grad = false;
  // Position of the producing op on the thread's tape; -1 for leaves.
  std::uint64_t tape_generation = 0;
  std::ptrdiff_t node_index = -1;
};

// Dense row-major N-d array with shared handle semantics. Copying a Tensor
// copies the handle, not the values.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::f64,
         bool requires_grad = false);

  static Tensor zeros(Shape shape, DType dtype = DType::f64);
  static Tensor full(Shape shape, double value, DType dtype = DType::f64);
  static Tensor scalar(double value, DType dtype = DType::f64);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  std::span<const double> data() const;
  // Direct write access, intended for optimizers and initializers acting on
  // leaf tensors between forward passes.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  // Accumulated gradient; zeros when nothing has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history, no gradient requirement.
  Tensor detach() const;
  // Deep copy that keeps requires_grad but drops history and gradient.
  Tensor clone() const;
  Tensor to(DType dtype) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// When enabled (the default) every constructed tensor, including op outputs,
// is checked for NaN/Inf.
void set_checked_mode(bool on);
bool checked_mode();

// Accumulates into (and lazily allocates) the gradient buffer of an impl.
std::span<double> grad_buffer(TensorImpl& impl);

namespace autograd {

// Receives the gradient of the op output and accumulates into its inputs.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

struct Node {
  std::string name;
  std::shared_ptr<TensorImpl> output;
  BackwardFn backward;
};

// Per-thread record of executed differentiable ops in execution order.
class Tape {
 public:
  std::uint64_t generation() const { return generation_; }
  std::size_t size() const { return nodes_.size(); }
  std::ptrdiff_t push(Node node);
  // Runs reverse-mode accumulation from `loss`, then retires the tape.
  void backward(const Tensor& loss);
  // Drops all recorded nodes and starts a new generation.
  void clear();

 private:
  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

Tape& tape();

bool grad_enabled();

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Wraps a freshly computed output into a tensor and, if any input requires a
// gradient and recording is enabled, appends a node to the tape.
Tensor record(std::string name, Shape shape, std::vector<double> values,
              std::span<const Tensor> inputs, BackwardFn backward, DType dtype = DType::f64);
Tensor record(std::string name, Shape shape, std::vector<double> values,
              std::initializer_list<Tensor> inputs, BackwardFn backward,
              DType dtype = DType::f64);

// Test hook: negates the gradient flowing into every node with this name.
// An empty string clears the fault.
void inject_backward_fault(std::string op_name);

}  // namespace autograd

// Reverse-mode pass from a scalar loss into all requires_grad ancestors.
void backward(const Tensor& loss);

}  // namespace pagen
