// Dense NCHW tensors with reverse-mode differentiation.
//
// Every operation records a node in the graph of its inputs when gradient
// recording is enabled and at least one input requires a gradient. Backward
// rules are written in terms of the same operations, so running `grad` with
// `create_graph = true` yields gradients that are themselves differentiable
// (double-backward). Operations whose backward rule is not expressible that
// way are tagged and rejected in create-graph mode.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssn {

using Real = double;
using Shape = std::vector<int>;

/// Raised when an operation's preconditions (shapes, scalar-ness, ...) do not hold.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {
struct Node;
using BackwardFn = std::function<std::vector<Tensor>(
    const Tensor& self, const Tensor& grad, const std::vector<bool>& needed)>;
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, Real value);
  static Tensor scalar(Real value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim() const { return static_cast<int>(shape().size()); }
  int size(int axis) const;
  std::size_t numel() const;
  std::span<const Real> data() const;
  Real at(std::size_t i) const { return data()[i]; }
  Real item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;
  std::uint64_t id() const;

  /// Same values, cut from the graph.
  Tensor detach() const;
  /// Copy of the values as a fresh leaf that records gradients.
  Tensor as_leaf() const;

  std::vector<Real> to_vector() const;

 private:
  friend struct detail::Node;
  friend Tensor make_op_result(Shape shape, std::vector<Real> data, const char* op,
                               std::vector<Tensor> inputs, detail::BackwardFn backward,
                               bool double_differentiable);
  friend std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                                  bool create_graph);

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Builds a graph node (or a plain constant when recording is off).
Tensor make_op_result(Shape shape, std::vector<Real> data, const char* op,
                      std::vector<Tensor> inputs, detail::BackwardFn backward,
                      bool double_differentiable = true);

// ---------------------------------------------------------------------------
// Gradient recording mode (thread-local).

bool grad_enabled();

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops broadcast numpy-style (right-aligned,
// singleton dims expand).

enum class Padding { zero, periodic };

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// scale * x + bias with scalar constants.
Tensor affine(const Tensor& x, Real scale, Real bias = 0.0);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Real slope = 0.2);
/// log(1 + exp(x)). First-order only.
Tensor softplus(const Tensor& x);

/// Sum over `axes`, keeping them as singleton dims.
Tensor sum(const Tensor& x, const std::vector<int>& axes);
Tensor mean(const Tensor& x, const std::vector<int>& axes);
/// Sum / mean over everything, returning a rank-0 scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Adjoint of broadcast_to: sums over the dims that broadcasting expanded.
Tensor sum_to(const Tensor& x, const Shape& shape);

/// Stride-1 cross-correlation, output has the input's spatial size. Kernel
/// extents must be odd. input [N,C,H,W], weight [O,C,k,k] -> [N,O,H,W].
Tensor conv2d(const Tensor& input, const Tensor& weight, Padding padding = Padding::zero);
/// d(conv2d)/d(weight) contracted with `grad_out`; bilinear in (input, grad_out).
Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, int kernel,
                          Padding padding = Padding::zero);
/// w[o,c,u,v] -> w[c,o,k-1-u,k-1-v]; conv2d with this kernel is the adjoint of conv2d.
Tensor flip_transpose(const Tensor& weight);

Tensor upsample_nearest(const Tensor& x, int factor = 2);
Tensor downsample_avg(const Tensor& x, int factor = 2);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return affine(x, -1.0); }

// ---------------------------------------------------------------------------
// Differentiation.

/// Gradients of scalar `output` w.r.t. each of `inputs` (zeros where
/// unreachable). Accumulation follows graph-construction order, so results are
/// deterministic. With `create_graph` the returned tensors are graph nodes.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

/// First-order gradients of a scalar loss for a set of leaves.
std::vector<Tensor> backward(const Tensor& loss, const std::vector<Tensor>& leaves);

/// ||d inner / d wrt||_2^2 as a differentiable scalar.
Tensor grad_norm_as_loss(const Tensor& inner, const Tensor& wrt);

}  // namespace ssn
