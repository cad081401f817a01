#include "pagen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pagen {

namespace {

bool g_checked_mode = true;

void round_to_dtype(std::vector<double>& values, DType dtype) {
  if (dtype != DType::f32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

void check_finite(std::span<const double> values, const char* what) {
  if (!g_checked_mode) return;
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + what);
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

void set_checked_mode(bool on) { g_checked_mode = on; }
bool checked_mode() { return g_checked_mode; }

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  check_finite(values, "tensor construction");
  round_to_dtype(values, dtype);
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->dtype = dtype;
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return Tensor({}, {value}, dtype); }

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const {
  shape();
  return impl_->dtype;
}

std::span<const double> Tensor::data() const {
  shape();
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() requires a single-element tensor, shape is " +
                         shape_to_string(shape()));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const {
  shape();
  return impl_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool on) {
  shape();
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const {
  shape();
  return !impl_->grad.empty();
}

std::span<const double> Tensor::grad() const {
  shape();
  return grad_buffer(*impl_);
}

std::span<double> Tensor::mutable_grad() {
  shape();
  return grad_buffer(*impl_);
}

void Tensor::zero_grad() {
  shape();
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, impl_->dtype, false); }

Tensor Tensor::clone() const {
  return Tensor(shape(), impl_->data, impl_->dtype, impl_->requires_grad);
}

Tensor Tensor::to(DType dtype) const {
  return Tensor(shape(), impl_->data, dtype, impl_->requires_grad);
}

std::span<double> grad_buffer(TensorImpl& impl) {
  if (impl.grad.size() != impl.data.size()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

namespace autograd {

namespace {

thread_local Tape t_tape;
thread_local bool t_grad_enabled = true;
std::string g_fault_op;

}  // namespace

Tape& tape() { return t_tape; }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void inject_backward_fault(std::string op_name) { g_fault_op = std::move(op_name); }

std::ptrdiff_t Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<std::ptrdiff_t>(nodes_.size()) - 1;
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     shape_to_string(loss.shape()));
  }
  TensorImpl& root = *loss.impl();
  if (!root.requires_grad) return;  // nothing upstream needs a gradient
  if (root.node_index < 0) {
    // A leaf loss: d loss / d loss = 1.
    grad_buffer(root)[0] += 1.0;
    return;
  }
  if (root.tape_generation != generation_ ||
      static_cast<std::size_t>(root.node_index) >= nodes_.size() ||
      nodes_[static_cast<std::size_t>(root.node_index)].output.get() != &root) {
    throw UsageError("backward without a matching forward pass (was backward already run?)");
  }
  grad_buffer(root)[0] += 1.0;

  std::vector<double> flipped;
  for (std::ptrdiff_t i = root.node_index; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    const std::vector<double>& g = node.output->grad;
    if (g.empty()) continue;
    if (!g_fault_op.empty() && node.name == g_fault_op) {
      flipped.assign(g.begin(), g.end());
      for (double& v : flipped) v = -v;
      node.backward(flipped);
    } else {
      node.backward(g);
    }
  }
  clear();
}

Tensor record(std::string name, Shape shape, std::vector<double> values,
              std::initializer_list<Tensor> inputs, BackwardFn backward, DType dtype) {
  return record(std::move(name), std::move(shape), std::move(values),
                std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(backward), dtype);
}

Tensor record(std::string name, Shape shape, std::vector<double> values,
              std::span<const Tensor> inputs, BackwardFn backward, DType dtype) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError(name + ": produced " + std::to_string(values.size()) +
                         " values for shape " + shape_to_string(shape));
  }
  if (g_checked_mode) {
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + name);
    }
  }
  round_to_dtype(values, dtype);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->dtype = dtype;

  bool needs_grad = false;
  if (t_grad_enabled) {
    for (const Tensor& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    impl->requires_grad = true;
    impl->tape_generation = t_tape.generation();
    impl->node_index = t_tape.push(Node{std::move(name), impl, std::move(backward)});
  }
  return Tensor(std::move(impl));
}

}  // namespace autograd

void backward(const Tensor& loss) { autograd::tape().backward(loss); }

}  // namespace pagen
