#include "ssn/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace ssn {

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> data;
  bool requires_grad = false;
  const char* op = "leaf";
  bool double_differentiable = true;
  std::uint64_t seq = 0;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

std::vector<std::ptrdiff_t> contiguous_strides(const Shape& shape) {
  std::vector<std::ptrdiff_t> strides(shape.size(), 0);
  std::ptrdiff_t s = 1;
  for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
    strides[d] = s;
    s *= shape[d];
  }
  return strides;
}

// Strides of `shape` viewed inside the rank-`rank` shape `target`: right
// aligned, 0 for broadcast dims.
std::vector<std::ptrdiff_t> broadcast_strides(const Shape& shape, const Shape& target) {
  const std::size_t rank = target.size();
  std::vector<std::ptrdiff_t> out(rank, 0);
  const auto own = contiguous_strides(shape);
  const std::size_t offset = rank - shape.size();
  for (std::size_t d = 0; d < shape.size(); ++d) {
    out[offset + d] = (shape[d] == 1 && target[offset + d] != 1) ? 0 : own[d];
  }
  return out;
}

// Row-major walk over `shape`; fn receives one offset per operand.
template <std::size_t K, class Fn>
void strided_loop(const Shape& shape, const std::array<std::vector<std::ptrdiff_t>, K>& strides,
                  Fn&& fn) {
  const std::size_t total = shape_numel(shape);
  if (total == 0) return;
  const int rank = static_cast<int>(shape.size());
  if (rank == 0) {
    std::array<std::ptrdiff_t, K> off{};
    fn(off);
    return;
  }
  const int inner = shape[rank - 1];
  std::array<std::ptrdiff_t, K> inner_stride{};
  for (std::size_t k = 0; k < K; ++k) inner_stride[k] = strides[k][rank - 1];
  std::vector<int> idx(rank, 0);
  std::array<std::ptrdiff_t, K> base{};
  const std::size_t outer = total / inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::array<std::ptrdiff_t, K> off = base;
    for (int i = 0; i < inner; ++i) {
      fn(off);
      for (std::size_t k = 0; k < K; ++k) off[k] += inner_stride[k];
    }
    for (int d = rank - 2; d >= 0; --d) {
      ++idx[d];
      for (std::size_t k = 0; k < K; ++k) base[k] += strides[k][d];
      if (idx[d] < shape[d]) break;
      for (std::size_t k = 0; k < K; ++k) base[k] -= strides[k][d] * shape[d];
      idx[d] = 0;
    }
  }
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ContractViolation(std::string(op) + ": shapes " + shape_str(a) + " and " +
                              shape_str(b) + " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

template <class F>
std::vector<Real> binary_kernel(const Tensor& a, const Tensor& b, const Shape& out, F f) {
  std::vector<Real> result(shape_numel(out));
  const auto da = a.data();
  const auto db = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < result.size(); ++i) result[i] = f(da[i], db[i]);
  } else if (b.numel() == 1 && a.shape() == out) {
    const Real bv = db[0];
    for (std::size_t i = 0; i < result.size(); ++i) result[i] = f(da[i], bv);
  } else if (a.numel() == 1 && b.shape() == out) {
    const Real av = da[0];
    for (std::size_t i = 0; i < result.size(); ++i) result[i] = f(av, db[i]);
  } else {
    std::array<std::vector<std::ptrdiff_t>, 2> strides{broadcast_strides(a.shape(), out),
                                                       broadcast_strides(b.shape(), out)};
    std::size_t i = 0;
    strided_loop<2>(out, strides, [&](const std::array<std::ptrdiff_t, 2>& off) {
      result[i++] = f(da[off[0]], db[off[1]]);
    });
  }
  return result;
}

template <class F>
std::vector<Real> unary_kernel(const Tensor& x, F f) {
  const auto d = x.data();
  std::vector<Real> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = f(d[i]);
  return out;
}

Tensor constant_like(const Tensor& x, std::vector<Real> values) {
  return Tensor(x.shape(), std::move(values), false);
}

std::vector<int> normalize_axes(const std::vector<int>& axes, int rank, const char* op) {
  std::vector<int> out;
  for (int a : axes) {
    const int ax = a < 0 ? a + rank : a;
    require(ax >= 0 && ax < rank, std::string(op) + ": axis out of range");
    out.push_back(ax);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void check_nchw(const Tensor& t, const char* op) {
  require(t.dim() == 4, std::string(op) + ": expected rank-4 NCHW tensor, got " +
                            shape_str(t.shape()));
}

// Column matrix [C*k*k, ld] for one image, written at column offset `cols`;
// `ld` is the row stride so several images can share one matrix.
void im2col(const Real* x, int channels, int height, int width, int kernel, Padding padding,
            Real* cols, std::ptrdiff_t ld) {
  const int pad = kernel / 2;
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    const Real* plane = x + static_cast<std::ptrdiff_t>(c) * hw;
    for (int u = 0; u < kernel; ++u) {
      for (int v = 0; v < kernel; ++v) {
        Real* row = cols + (static_cast<std::ptrdiff_t>(c) * kernel * kernel + u * kernel + v) * ld;
        const int dj = v - pad;
        const int lo = std::clamp(-dj, 0, width), hi = std::clamp(width - dj, 0, width);
        for (int i = 0; i < height; ++i) {
          int si = i + u - pad;
          Real* out = row + i * width;
          if (padding == Padding::periodic) {
            si = ((si % height) + height) % height;
          } else if (si < 0 || si >= height) {
            std::fill(out, out + width, 0.0);
            continue;
          }
          const Real* src = plane + si * width;
          if (padding == Padding::periodic) {
            for (int j = 0; j < width; ++j) out[j] = src[((j + dj) % width + width) % width];
          } else {
            std::fill(out, out + lo, 0.0);
            std::copy(src + lo + dj, src + hi + dj, out + lo);
            std::fill(out + hi, out + width, 0.0);
          }
        }
      }
    }
  }
}

// GEMM operands and results live in owned (aligned) matrices: Eigen picks
// alignment-dependent kernels for unaligned maps, which breaks bit-reproducibility.
std::vector<Real> conv2d_forward(const Tensor& input, const Tensor& weight, Padding padding) {
  const int n = input.size(0), c = input.size(1), h = input.size(2), w = input.size(3);
  const int o = weight.size(0), k = weight.size(2);
  const int hw = h * w, ckk = c * k * k;
  std::vector<Real> out(static_cast<std::size_t>(n) * o * hw);
  const RowMat wm = ConstMap(weight.data().data(), o, ckk);
  RowMat cols(ckk, hw);
  RowMat y(o, hw);
  for (int b = 0; b < n; ++b) {
    const Real* xb = input.data().data() + static_cast<std::ptrdiff_t>(b) * c * hw;
    if (k != 1) im2col(xb, c, h, w, k, padding, cols.data(), hw);
    else cols = ConstMap(xb, ckk, hw);
    y.noalias() = wm * cols;
    std::copy(y.data(), y.data() + y.size(), out.data() + static_cast<std::ptrdiff_t>(b) * o * hw);
  }
  return out;
}

std::vector<Real> conv2d_weight_grad_forward(const Tensor& input, const Tensor& grad_out,
                                             int kernel, Padding padding) {
  const int n = input.size(0), c = input.size(1), h = input.size(2), w = input.size(3);
  const int o = grad_out.size(1);
  const int hw = h * w, ckk = c * kernel * kernel;
  RowMat acc = RowMat::Zero(o, ckk);
  RowMat cols(ckk, hw);
  RowMat gm(o, hw);
  for (int b = 0; b < n; ++b) {
    const Real* xb = input.data().data() + static_cast<std::ptrdiff_t>(b) * c * hw;
    if (kernel != 1) im2col(xb, c, h, w, kernel, padding, cols.data(), hw);
    else cols = ConstMap(xb, ckk, hw);
    gm = ConstMap(grad_out.data().data() + static_cast<std::ptrdiff_t>(b) * o * hw, o, hw);
    acc.noalias() += gm * cols.transpose();
  }
  return std::vector<Real>(acc.data(), acc.data() + acc.size());
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<Real> data, bool requires_grad) {
  for (int d : shape) require(d >= 0, "Tensor: negative extent in " + shape_str(shape));
  if (data.size() != shape_numel(shape)) {
    throw ContractViolation("Tensor: data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  node_->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }
Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }
Tensor Tensor::full(const Shape& shape, Real value) {
  return Tensor(shape, std::vector<Real>(shape_numel(shape), value));
}
Tensor Tensor::scalar(Real value) { return Tensor({}, {value}); }

const Shape& Tensor::shape() const {
  require(defined(), "Tensor: use of undefined tensor");
  return node_->shape;
}

int Tensor::size(int axis) const {
  const int r = dim();
  const int a = axis < 0 ? axis + r : axis;
  require(a >= 0 && a < r, "Tensor::size: axis out of range");
  return node_->shape[a];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const Real> Tensor::data() const {
  require(defined(), "Tensor: use of undefined tensor");
  return node_->data;
}

Real Tensor::item() const {
  require(numel() == 1, "Tensor::item: tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_ || node_->inputs.empty(); }
const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }
std::uint64_t Tensor::id() const { return node_ ? node_->seq : 0; }

Tensor Tensor::detach() const {
  if (!requires_grad()) return *this;
  return Tensor(shape(), node_->data, false);
}

Tensor Tensor::as_leaf() const { return Tensor(shape(), node_->data, true); }

std::vector<Real> Tensor::to_vector() const { return node_->data; }

Tensor make_op_result(Shape shape, std::vector<Real> data, const char* op,
                      std::vector<Tensor> inputs, detail::BackwardFn backward,
                      bool double_differentiable) {
  Tensor out(std::move(shape), std::move(data), false);
  out.node_->op = op;
  if (t_grad_enabled && any_requires_grad(inputs)) {
    out.node_->requires_grad = true;
    out.node_->inputs = std::move(inputs);
    out.node_->backward = std::move(backward);
    out.node_->double_differentiable = double_differentiable;
  }
  return out;
}

bool grad_enabled() { return t_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_enabled) {
  t_grad_enabled = enabled;
}
GradModeGuard::~GradModeGuard() { t_grad_enabled = previous_; }


// ---------------------------------------------------------------------------
// Elementwise.

Tensor add(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "add");
  auto data = binary_kernel(a, b, out, [](Real x, Real y) { return x + y; });
  return make_op_result(
      std::move(out), std::move(data), "add", {a, b},
      [a, b](const Tensor&, const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(2);
        if (need[0]) r[0] = sum_to(g, a.shape());
        if (need[1]) r[1] = sum_to(g, b.shape());
        return r;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "sub");
  auto data = binary_kernel(a, b, out, [](Real x, Real y) { return x - y; });
  return make_op_result(
      std::move(out), std::move(data), "sub", {a, b},
      [a, b](const Tensor&, const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(2);
        if (need[0]) r[0] = sum_to(g, a.shape());
        if (need[1]) r[1] = sum_to(affine(g, -1.0), b.shape());
        return r;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "mul");
  auto data = binary_kernel(a, b, out, [](Real x, Real y) { return x * y; });
  return make_op_result(
      std::move(out), std::move(data), "mul", {a, b},
      [a, b](const Tensor&, const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(2);
        if (need[0]) r[0] = sum_to(mul(g, b), a.shape());
        if (need[1]) r[1] = sum_to(mul(g, a), b.shape());
        return r;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "div");
  auto data = binary_kernel(a, b, out, [](Real x, Real y) { return x / y; });
  return make_op_result(
      std::move(out), std::move(data), "div", {a, b},
      [a, b](const Tensor& self, const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(2);
        if (need[0]) r[0] = sum_to(div(g, b), a.shape());
        if (need[1]) r[1] = sum_to(affine(div(mul(g, self), b), -1.0), b.shape());
        return r;
      });
}

Tensor affine(const Tensor& x, Real scale, Real bias) {
  auto data = unary_kernel(x, [=](Real v) { return scale * v + bias; });
  return make_op_result(x.shape(), std::move(data), "affine", {x},
                        [scale](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{affine(g, scale)};
                        });
}

Tensor square(const Tensor& x) {
  auto data = unary_kernel(x, [](Real v) { return v * v; });
  return make_op_result(x.shape(), std::move(data), "square", {x},
                        [x](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{mul(g, affine(x, 2.0))};
                        });
}

Tensor sqrt(const Tensor& x) {
  auto data = unary_kernel(x, [](Real v) { return std::sqrt(v); });
  return make_op_result(x.shape(), std::move(data), "sqrt", {x},
                        [](const Tensor& self, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{div(affine(g, 0.5), self)};
                        });
}

Tensor abs(const Tensor& x) {
  auto data = unary_kernel(x, [](Real v) { return std::abs(v); });
  return make_op_result(
      x.shape(), std::move(data), "abs", {x},
      [x](const Tensor&, const Tensor& g, const std::vector<bool>&) {
        auto sign = constant_like(
            x, unary_kernel(x, [](Real v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }));
        return std::vector<Tensor>{mul(g, sign)};
      });
}

Tensor tanh(const Tensor& x) {
  auto data = unary_kernel(x, [](Real v) { return std::tanh(v); });
  return make_op_result(x.shape(), std::move(data), "tanh", {x},
                        [](const Tensor& self, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{mul(g, affine(square(self), -1.0, 1.0))};
                        });
}

Tensor leaky_relu(const Tensor& x, Real slope) {
  auto data = unary_kernel(x, [=](Real v) { return v > 0 ? v : slope * v; });
  return make_op_result(
      x.shape(), std::move(data), "leaky_relu", {x},
      [x, slope](const Tensor&, const Tensor& g, const std::vector<bool>&) {
        auto mask = constant_like(x, unary_kernel(x, [=](Real v) { return v > 0 ? 1.0 : slope; }));
        return std::vector<Tensor>{mul(g, mask)};
      });
}

Tensor softplus(const Tensor& x) {
  auto data = unary_kernel(x, [](Real v) {
    return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  });
  return make_op_result(
      x.shape(), std::move(data), "softplus", {x},
      [x](const Tensor&, const Tensor& g, const std::vector<bool>&) {
        auto sig = constant_like(x, unary_kernel(x, [](Real v) {
                                   return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                                 : std::exp(v) / (1.0 + std::exp(v));
                                 }));
        return std::vector<Tensor>{mul(g, sig)};
      },
      /*double_differentiable=*/false);
}

// ---------------------------------------------------------------------------
// Reductions and shape ops.

Tensor sum(const Tensor& x, const std::vector<int>& axes_in) {
  const auto axes = normalize_axes(axes_in, x.dim(), "sum");
  Shape out = x.shape();
  for (int a : axes) out[a] = 1;
  std::vector<Real> data(shape_numel(out), 0.0);
  auto ostrides = contiguous_strides(out);
  for (int a : axes) ostrides[a] = 0;
  const auto src = x.data();
  std::size_t i = 0;
  strided_loop<1>(x.shape(), {ostrides},
                  [&](const std::array<std::ptrdiff_t, 1>& off) { data[off[0]] += src[i++]; });
  return make_op_result(std::move(out), std::move(data), "sum", {x},
                        [x](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{broadcast_to(g, x.shape())};
                        });
}

Tensor mean(const Tensor& x, const std::vector<int>& axes) {
  const auto norm = normalize_axes(axes, x.dim(), "mean");
  std::size_t count = 1;
  for (int a : norm) count *= static_cast<std::size_t>(x.size(a));
  require(count > 0, "mean: empty reduction");
  return affine(sum(x, norm), 1.0 / static_cast<Real>(count));
}

Tensor sum(const Tensor& x) {
  std::vector<int> all(x.dim());
  std::iota(all.begin(), all.end(), 0);
  return reshape(sum(x, all), {});
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return affine(sum(x), 1.0 / static_cast<Real>(x.numel()));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ContractViolation("reshape: cannot view " + shape_str(x.shape()) + " as " +
                            shape_str(shape));
  }
  auto data = x.to_vector();
  return make_op_result(shape, std::move(data), "reshape", {x},
                        [x](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{reshape(g, x.shape())};
                        });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  const Shape out = broadcast_shape(x.shape(), shape, "broadcast_to");
  if (out != shape) {
    throw ContractViolation("broadcast_to: " + shape_str(x.shape()) + " cannot expand to " +
                            shape_str(shape));
  }
  if (x.shape() == shape) return x;
  std::vector<Real> data(shape_numel(shape));
  const auto src = x.data();
  std::size_t i = 0;
  strided_loop<1>(shape, {broadcast_strides(x.shape(), shape)},
                  [&](const std::array<std::ptrdiff_t, 1>& off) { data[i++] = src[off[0]]; });
  return make_op_result(shape, std::move(data), "broadcast_to", {x},
                        [x](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{sum_to(g, x.shape())};
                        });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape& xs = x.shape();
  require(xs.size() >= shape.size(),
          "sum_to: cannot reduce " + shape_str(xs) + " to " + shape_str(shape));
  const std::size_t lead = xs.size() - shape.size();
  std::vector<int> axes;
  for (std::size_t d = 0; d < xs.size(); ++d) {
    if (d < lead) {
      axes.push_back(static_cast<int>(d));
    } else if (shape[d - lead] == 1 && xs[d] != 1) {
      axes.push_back(static_cast<int>(d));
    } else if (shape[d - lead] != xs[d]) {
      throw ContractViolation("sum_to: cannot reduce " + shape_str(xs) + " to " +
                              shape_str(shape));
    }
  }
  return reshape(sum(x, axes), shape);
}

// ---------------------------------------------------------------------------
// Convolution.

Tensor conv2d(const Tensor& input, const Tensor& weight, Padding padding) {
  check_nchw(input, "conv2d");
  check_nchw(weight, "conv2d");
  const int k = weight.size(2);
  require(k == weight.size(3) && k % 2 == 1,
          "conv2d: kernel must be square with odd extent, got " + shape_str(weight.shape()));
  require(weight.size(1) == input.size(1), "conv2d: input " + shape_str(input.shape()) +
                                               " does not match weight " +
                                               shape_str(weight.shape()));
  Shape out{input.size(0), weight.size(0), input.size(2), input.size(3)};
  auto data = conv2d_forward(input, weight, padding);
  return make_op_result(
      std::move(out), std::move(data), "conv2d", {input, weight},
      [input, weight, padding, k](const Tensor&, const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(2);
        if (need[0]) r[0] = conv2d(g, flip_transpose(weight), padding);
        if (need[1]) r[1] = conv2d_weight_grad(input, g, k, padding);
        return r;
      });
}

Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, int kernel,
                          Padding padding) {
  check_nchw(input, "conv2d_weight_grad");
  check_nchw(grad_out, "conv2d_weight_grad");
  require(kernel % 2 == 1, "conv2d_weight_grad: kernel extent must be odd");
  require(input.size(0) == grad_out.size(0) && input.size(2) == grad_out.size(2) &&
              input.size(3) == grad_out.size(3),
          "conv2d_weight_grad: input " + shape_str(input.shape()) + " and grad " +
              shape_str(grad_out.shape()) + " disagree");
  Shape out{grad_out.size(1), input.size(1), kernel, kernel};
  auto data = conv2d_weight_grad_forward(input, grad_out, kernel, padding);
  return make_op_result(
      std::move(out), std::move(data), "conv2d_weight_grad", {input, grad_out},
      [input, grad_out, padding](const Tensor&, const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(2);
        if (need[0]) r[0] = conv2d(grad_out, flip_transpose(g), padding);
        if (need[1]) r[1] = conv2d(input, g, padding);
        return r;
      });
}

Tensor flip_transpose(const Tensor& weight) {
  check_nchw(weight, "flip_transpose");
  const int o = weight.size(0), c = weight.size(1), k = weight.size(2);
  require(k == weight.size(3), "flip_transpose: kernel must be square");
  std::vector<Real> data(weight.numel());
  const auto src = weight.data();
  for (int oo = 0; oo < o; ++oo)
    for (int cc = 0; cc < c; ++cc)
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v)
          data[((static_cast<std::size_t>(cc) * o + oo) * k + (k - 1 - u)) * k + (k - 1 - v)] =
              src[((static_cast<std::size_t>(oo) * c + cc) * k + u) * k + v];
  return make_op_result({c, o, k, k}, std::move(data), "flip_transpose", {weight},
                        [](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{flip_transpose(g)};
                        });
}

// ---------------------------------------------------------------------------
// Resampling.

Tensor upsample_nearest(const Tensor& x, int factor) {
  check_nchw(x, "upsample_nearest");
  require(factor >= 1, "upsample_nearest: factor must be positive");
  if (factor == 1) return x;
  const int n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const int oh = h * factor, ow = w * factor;
  std::vector<Real> data(static_cast<std::size_t>(n) * c * oh * ow);
  const auto src = x.data();
  for (int p = 0; p < n * c; ++p) {
    const Real* in = src.data() + static_cast<std::ptrdiff_t>(p) * h * w;
    Real* out = data.data() + static_cast<std::ptrdiff_t>(p) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) out[i * ow + j] = in[(i / factor) * w + j / factor];
  }
  return make_op_result({n, c, oh, ow}, std::move(data), "upsample_nearest", {x},
                        [factor](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{
                              affine(downsample_avg(g, factor), static_cast<Real>(factor * factor))};
                        });
}

Tensor downsample_avg(const Tensor& x, int factor) {
  check_nchw(x, "downsample_avg");
  require(factor >= 1, "downsample_avg: factor must be positive");
  if (factor == 1) return x;
  const int n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  require(h % factor == 0 && w % factor == 0,
          "downsample_avg: extents " + shape_str(x.shape()) + " not divisible by factor");
  const int oh = h / factor, ow = w / factor;
  std::vector<Real> data(static_cast<std::size_t>(n) * c * oh * ow, 0.0);
  const auto src = x.data();
  const Real norm = 1.0 / static_cast<Real>(factor * factor);
  for (int p = 0; p < n * c; ++p) {
    const Real* in = src.data() + static_cast<std::ptrdiff_t>(p) * h * w;
    Real* out = data.data() + static_cast<std::ptrdiff_t>(p) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        Real acc = 0.0;
        for (int u = 0; u < factor; ++u)
          for (int v = 0; v < factor; ++v) acc += in[(i * factor + u) * w + j * factor + v];
        out[i * ow + j] = acc * norm;
      }
  }
  return make_op_result({n, c, oh, ow}, std::move(data), "downsample_avg", {x},
                        [factor](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{affine(upsample_nearest(g, factor),
                                                            1.0 / static_cast<Real>(factor * factor))};
                        });
}

// ---------------------------------------------------------------------------
// Differentiation.

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph) {
  require(output.defined() && output.numel() == 1,
          "grad: output must be a scalar, got shape " +
              (output.defined() ? shape_str(output.shape()) : std::string("undefined")));
  using NodePtr = std::shared_ptr<detail::Node>;
  using detail::Node;

  std::unordered_map<const Node*, std::vector<std::size_t>> input_slots;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    require(inputs[i].defined(), "grad: undefined input tensor");
    input_slots[inputs[i].node_.get()].push_back(i);
  }

  // Post-order DFS from the output. A node is relevant when it is a requested
  // input or leads to one through nodes that record gradients.
  std::unordered_map<const Node*, bool> relevant;
  std::vector<NodePtr> order;
  struct Frame {
    NodePtr node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({output.node_, 0});
  relevant.emplace(output.node_.get(), false);
  while (!stack.empty()) {
    Frame& top = stack.back();
    Node* n = top.node.get();
    if (n->requires_grad && top.next < n->inputs.size()) {
      const NodePtr& child = n->inputs[top.next++].node_;
      if (relevant.emplace(child.get(), false).second) stack.push_back({child, 0});
      continue;
    }
    bool rel = input_slots.count(n) > 0;
    if (n->requires_grad) {
      for (const Tensor& in : n->inputs) rel = rel || relevant[in.node_.get()];
    }
    relevant[n] = rel;
    if (rel) order.push_back(top.node);
    stack.pop_back();
  }
  std::sort(order.begin(), order.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->seq > b->seq; });

  std::vector<Tensor> result(inputs.size());
  std::unordered_map<const Node*, Tensor> grads;
  {
    GradModeGuard mode(create_graph);
    if (relevant[output.node_.get()]) grads[output.node_.get()] = Tensor::ones(output.shape());
    for (const NodePtr& node : order) {
      auto it = grads.find(node.get());
      if (it == grads.end()) continue;
      Tensor g = it->second;
      if (auto slot = input_slots.find(node.get()); slot != input_slots.end()) {
        for (std::size_t i : slot->second) result[i] = g;
      }
      grads.erase(it);
      if (!node->requires_grad || node->inputs.empty()) continue;
      std::vector<bool> needed(node->inputs.size());
      bool any = false;
      for (std::size_t i = 0; i < needed.size(); ++i) {
        needed[i] = relevant[node->inputs[i].node_.get()];
        any = any || needed[i];
      }
      if (!any) continue;
      if (create_graph && !node->double_differentiable) {
        throw ContractViolation(std::string("grad: operation '") + node->op +
                                "' is not double-differentiable");
      }
      auto input_grads = node->backward(Tensor(node), g, needed);
      for (std::size_t i = 0; i < needed.size(); ++i) {
        if (!needed[i] || !input_grads[i].defined()) continue;
        const Node* target = node->inputs[i].node_.get();
        auto [pos, inserted] = grads.try_emplace(target, input_grads[i]);
        if (!inserted) pos->second = add(pos->second, input_grads[i]);
      }
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!result[i].defined()) result[i] = Tensor::zeros(inputs[i].shape());
  }
  return result;
}

std::vector<Tensor> backward(const Tensor& loss, const std::vector<Tensor>& leaves) {
  return grad(loss, leaves, false);
}

Tensor grad_norm_as_loss(const Tensor& inner, const Tensor& wrt) {
  auto g = grad(inner, {wrt}, true);
  return sum(square(g[0]));
}

}  // namespace ssn
