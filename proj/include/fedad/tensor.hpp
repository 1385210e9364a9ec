#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "fedad/errors.hpp"

namespace fedad {

using Shape = std::vector<std::size_t>;

namespace autograd {

// One recorded operation result. Values are immutable after construction;
// grad is the only mutable field and accumulates until explicitly zeroed.
struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return values.size(); }
  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// Scoped switch that disables recording (inference / snapshot evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

}  // namespace autograd

// Value-semantics handle to an immutable tensor node. Copying a Tensor
// aliases the same node; operations produce fresh nodes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool requires_grad() const { return node_->requires_grad; }
  bool is_scalar() const { return size() == 1; }
  double item() const;

  const std::vector<double>& values() const { return node_->values; }
  const std::vector<double>& grad() const;
  void zero_grad();

  // In-place value mutation for parameter updates. Only valid on leaves.
  void set_values(const std::vector<double>& v);
  std::vector<double>& mutable_values();

  std::shared_ptr<autograd::Node> node_;
};

// --- primitives ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor add_rowwise(const Tensor& mat, const Tensor& row);  // broadcast row over matrix rows
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);                // tanh approximation
Tensor softmax(const Tensor& a);             // last axis, max-subtracted
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor mse(const Tensor& pred, const Tensor& target);  // scalar

// Generic recorded op for composite losses with hand-written gradients.
Tensor make_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
               std::function<void(autograd::Node&)> backward);

// --- reverse pass ------------------------------------------------------------

// Topologically ordered list of the nodes reachable from a root (inputs first).
struct Tape {
  std::vector<autograd::Node*> nodes;
};

Tape build_tape(const Tensor& root);

// Populates gradients of every requires_grad leaf reachable from `loss`.
// Leaf gradients accumulate across calls; intermediate gradients are reset
// per call so replays are idempotent once leaves are zeroed.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double h);

}  // namespace fedad
