#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cssgr/error.hpp"
#include "cssgr/rng.hpp"

namespace cssgr {

// Row-major dense shapes. Rank 0 (empty shape) is a scalar with one element.
using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Tape;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;    // sized lazily on first accumulation
  bool requires_grad = false;  // leaf parameter
  bool grad_path = false;      // gradient must reach or flow through this value
  Tape* tape = nullptr;        // tape that produced this value, null for leaves

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Append-only record of one forward pass. Each recorded step propagates the
// adjoint of a single op; replaying the steps most-recent-first walks the
// computation graph in reverse topological order.
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  void replay_reverse() {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// RAII: makes a tape the active recording target for this thread — either a
// fresh owned tape or a caller-provided one that outlives the scope. Ops
// executed with no active scope run in pure inference mode.
class TapeScope {
 public:
  TapeScope() : target_(&owned_), previous_(active_) { active_ = target_; }
  explicit TapeScope(Tape& external) : target_(&external), previous_(active_) {
    active_ = target_;
  }
  ~TapeScope() { active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape& tape() { return *target_; }
  static Tape* active() { return active_; }

 private:
  Tape owned_;
  Tape* target_;
  Tape* previous_;
  inline static thread_local Tape* active_ = nullptr;
};

class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}

  explicit Tensor(Shape shape) : node_(std::make_shared<detail::TensorNode>()) {
    node_->shape = std::move(shape);
    node_->data.assign(shape_numel(node_->shape), 0.0);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = value;
    return t;
  }

  static Tensor scalar(double value) {
    Tensor t{Shape{}};
    t.node_->data[0] = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size())
      fail("shape", "Tensor::from: shape " + shape_str(shape) + " does not hold " +
                        std::to_string(values.size()) + " values");
    Tensor t(std::move(shape));
    t.node_->data = std::move(values);
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= rank())
      fail("shape", "axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return node_->shape[axis];
  }

  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }

  double& at(std::size_t i) { return node_->data[i]; }
  double at(std::size_t i) const { return node_->data[i]; }
  double& at(std::size_t i, std::size_t j) { return node_->data[i * node_->shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return node_->data[i * node_->shape[1] + j]; }

  double value() const {
    if (numel() != 1)
      fail("contract", "value() expects a single-element tensor, got " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool b) {
    node_->requires_grad = b;
    node_->grad_path = b || (node_->tape != nullptr);
  }

  // Accumulated gradient; reads as zeros when backward never reached it.
  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  double grad_at(std::size_t i) const { return grad()[i]; }
  double grad_at(std::size_t i, std::size_t j) const { return grad()[i * node_->shape[1] + j]; }

  void zero_grad() const { node_->grad.clear(); }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  detail::TensorNode* raw() const { return node_.get(); }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Seeds d(loss)/d(loss) = 1 and replays the producing tape in reverse.
// Gradients of leaf tensors accumulate across calls; intermediate gradient
// buffers are consumed and cleared as the replay walks past them.
inline void backward(const Tensor& loss) {
  auto* n = loss.raw();
  if (n->data.size() != 1)
    fail("contract", "backward expects a scalar loss, got shape " + shape_str(n->shape));
  if (n->tape == nullptr)
    fail("autodiff", "loss tensor was not produced by an op recorded on a tape");
  n->ensure_grad();
  n->grad[0] += 1.0;
  n->tape->replay_reverse();
}

inline Tensor make_param(Shape shape) {
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

inline Tensor make_uniform_param(Shape shape, Rng& rng, double half_range) {
  Tensor t = make_param(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-half_range, half_range);
  return t;
}

// Glorot-style uniform init in +-sqrt(6 / (fan_in + fan_out)), fans taken
// from the matrix dimensions.
inline Tensor make_xavier_param(Shape shape, Rng& rng) {
  if (shape.size() != 2) fail("shape", "make_xavier_param expects a matrix shape");
  const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  return make_uniform_param(std::move(shape), rng, bound);
}

inline Tensor make_scalar_param(double value) {
  Tensor t = make_param(Shape{});
  t.data()[0] = value;
  return t;
}

}  // namespace cssgr
