#include "ssn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ssn/layers.hpp"

namespace ssn::gradcheck {

namespace {

Tensor with_element(const Tensor& t, std::size_t i, Real value) {
  std::vector<Real> v = t.to_vector();
  v[i] = value;
  return Tensor(t.shape(), std::move(v));
}

Real eval(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  NoGradGuard guard;
  const Tensor out = f(inputs);
  if (out.numel() != 1) throw ContractViolation("gradcheck: function must return a scalar");
  return out.item();
}

std::vector<Tensor> as_leaves(const std::vector<Tensor>& inputs) {
  std::vector<Tensor> leaves;
  for (const auto& t : inputs) leaves.push_back(t.as_leaf());
  return leaves;
}

// Numeric gradient of `g` w.r.t. every element of every input, flattened.
std::vector<Real> flat_numeric(const std::function<Real(const std::vector<Tensor>&)>& g,
                               const std::vector<Tensor>& inputs, Real step) {
  std::vector<Real> out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const Real x = inputs[k].at(i);
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[k] = with_element(inputs[k], i, x + step);
      minus[k] = with_element(inputs[k], i, x - step);
      out.push_back((g(plus) - g(minus)) / (2.0 * step));
    }
  }
  return out;
}

std::vector<Real> flatten(const std::vector<Tensor>& ts) {
  std::vector<Real> out;
  for (const auto& t : ts) {
    const auto d = t.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

Real penalty_value(const ScalarFn& inner, const std::vector<Tensor>& inputs, std::size_t wrt) {
  std::vector<Tensor> leaves = inputs;
  leaves[wrt] = inputs[wrt].as_leaf();
  GradModeGuard on(true);
  const Tensor g = grad(inner(leaves), {leaves[wrt]})[0];
  Real s = 0.0;
  for (Real v : g.data()) s += v * v;
  return s;
}

}  // namespace

Real relative_error(std::span<const Real> analytic, std::span<const Real> numeric) {
  if (analytic.size() != numeric.size()) throw ContractViolation("relative_error: size mismatch");
  Real worst = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return worst / scale;
}

std::vector<std::vector<Real>> numeric_gradient(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                                Real step) {
  std::vector<std::vector<Real>> out(inputs.size());
  const auto flat = flat_numeric([&](const std::vector<Tensor>& in) { return eval(f, in); },
                                 inputs, step);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    out[k].assign(flat.begin() + offset, flat.begin() + offset + inputs[k].numel());
    offset += inputs[k].numel();
  }
  return out;
}

Real check_gradient(const ScalarFn& f, const std::vector<Tensor>& inputs, Real step) {
  const std::vector<Tensor> leaves = as_leaves(inputs);
  std::vector<Tensor> analytic;
  {
    GradModeGuard on(true);
    analytic = grad(f(leaves), leaves);
  }
  const auto numeric = flat_numeric([&](const std::vector<Tensor>& in) { return eval(f, in); },
                                    inputs, step);
  return relative_error(flatten(analytic), numeric);
}

Real check_double_backward(const ScalarFn& inner, const std::vector<Tensor>& inputs,
                           std::size_t wrt, Real step) {
  const std::vector<Tensor> leaves = as_leaves(inputs);
  std::vector<Tensor> analytic;
  {
    GradModeGuard on(true);
    analytic = grad(grad_norm_as_loss(inner(leaves), leaves[wrt]), leaves);
  }
  const auto numeric = flat_numeric(
      [&](const std::vector<Tensor>& in) { return penalty_value(inner, in, wrt); }, inputs, step);
  return relative_error(flatten(analytic), numeric);
}

Real check_double_backward_nested(const ScalarFn& inner, const std::vector<Tensor>& inputs,
                                  std::size_t wrt, Real inner_step, Real outer_step) {
  const std::vector<Tensor> leaves = as_leaves(inputs);
  std::vector<Tensor> analytic;
  {
    GradModeGuard on(true);
    analytic = grad(grad_norm_as_loss(inner(leaves), leaves[wrt]), leaves);
  }
  auto fd_penalty = [&](const std::vector<Tensor>& in) {
    Real s = 0.0;
    for (std::size_t i = 0; i < in[wrt].numel(); ++i) {
      const Real x = in[wrt].at(i);
      std::vector<Tensor> plus = in, minus = in;
      plus[wrt] = with_element(in[wrt], i, x + inner_step);
      minus[wrt] = with_element(in[wrt], i, x - inner_step);
      const Real d = (eval(inner, plus) - eval(inner, minus)) / (2.0 * inner_step);
      s += d * d;
    }
    return s;
  };
  const auto numeric = flat_numeric(fd_penalty, inputs, outer_step);
  return relative_error(flatten(analytic), numeric);
}

Tensor random_normal(const Shape& shape, std::mt19937_64& rng, Real scale) {
  std::normal_distribution<Real> n(0.0, scale);
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = n(rng);
  return Tensor(shape, std::move(v));
}

Tensor random_away_from_zero(const Shape& shape, std::mt19937_64& rng, Real lo, Real hi) {
  std::uniform_real_distribution<Real> u(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor(shape, std::move(v));
}

Tensor random_positive(const Shape& shape, std::mt19937_64& rng, Real lo, Real hi) {
  std::uniform_real_distribution<Real> u(lo, hi);
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = u(rng);
  return Tensor(shape, std::move(v));
}

// ---------------------------------------------------------------------------

namespace {

using Builder = std::function<std::vector<Tensor>(std::mt19937_64&)>;
using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct Case {
  std::string name;
  Builder inputs;
  OpFn op;
  bool second_order = false;
  std::size_t wrt = 0;
};

// Projects a tensor-valued op onto a fixed random direction so every output
// element contributes to the scalar under test.
ScalarFn projected(const OpFn& op, const std::vector<Tensor>& inputs, std::mt19937_64& rng) {
  Tensor probe;
  {
    NoGradGuard guard;
    probe = random_normal(op(inputs).shape(), rng);
  }
  return [op, probe](const std::vector<Tensor>& in) { return sum(mul(op(in), probe)); };
}

std::vector<Case> cases() {
  using V = std::vector<Tensor>;
  using R = std::mt19937_64;
  const Shape s4{2, 3, 4, 4};
  std::vector<Case> c;
  auto normal2 = [s4](R& r) { return V{random_normal(s4, r), random_normal(s4, r)}; };
  auto normal1 = [s4](R& r) { return V{random_normal(s4, r)}; };

  c.push_back({"add (broadcast)", [](R& r) { return V{random_normal({2, 3, 4, 4}, r), random_normal({1, 3, 1, 4}, r)}; },
               [](const V& x) { return add(x[0], x[1]); }});
  c.push_back({"sub", normal2, [](const V& x) { return sub(x[0], x[1]); }});
  c.push_back({"mul (broadcast)", [](R& r) { return V{random_normal({2, 3, 4, 4}, r), random_normal({2, 3, 1, 1}, r)}; },
               [](const V& x) { return mul(x[0], x[1]); }});
  c.push_back({"div", [s4](R& r) { return V{random_normal(s4, r), random_away_from_zero(s4, r, 0.5, 2.0)}; },
               [](const V& x) { return div(x[0], x[1]); }});
  c.push_back({"affine", normal1, [](const V& x) { return affine(x[0], -1.7, 0.3); }});
  c.push_back({"square", normal1, [](const V& x) { return square(x[0]); }});
  c.push_back({"sqrt", [s4](R& r) { return V{random_positive(s4, r, 0.2, 3.0)}; },
               [](const V& x) { return sqrt(x[0]); }});
  c.push_back({"abs", [s4](R& r) { return V{random_away_from_zero(s4, r, 0.05, 2.0)}; },
               [](const V& x) { return abs(x[0]); }});
  c.push_back({"tanh", normal1, [](const V& x) { return tanh(x[0]); }});
  c.push_back({"leaky_relu", [s4](R& r) { return V{random_away_from_zero(s4, r, 0.05, 2.0)}; },
               [](const V& x) { return leaky_relu(x[0]); }});
  c.push_back({"softplus", normal1, [](const V& x) { return softplus(x[0]); }});
  c.push_back({"sum (axes)", normal1, [](const V& x) { return sum(x[0], {0, 2}); }});
  c.push_back({"mean (axes)", normal1, [](const V& x) { return mean(x[0], {1, 3}); }});
  c.push_back({"sum (all)", normal1, [](const V& x) { return sum(x[0]); }});
  c.push_back({"mean (all)", normal1, [](const V& x) { return mean(x[0]); }});
  c.push_back({"reshape", normal1, [](const V& x) { return reshape(x[0], {6, 16}); }});
  c.push_back({"broadcast_to", [](R& r) { return V{random_normal({1, 3, 1, 4}, r)}; },
               [](const V& x) { return broadcast_to(x[0], {2, 3, 4, 4}); }});
  c.push_back({"sum_to", normal1, [](const V& x) { return sum_to(x[0], {1, 3, 1, 4}); }});
  c.push_back({"conv2d 3x3 zero", [](R& r) { return V{random_normal({2, 3, 5, 5}, r), random_normal({4, 3, 3, 3}, r)}; },
               [](const V& x) { return conv2d(x[0], x[1]); }});
  c.push_back({"conv2d 3x3 periodic", [](R& r) { return V{random_normal({2, 3, 5, 5}, r), random_normal({4, 3, 3, 3}, r)}; },
               [](const V& x) { return conv2d(x[0], x[1], Padding::periodic); }});
  c.push_back({"conv2d 1x1", [](R& r) { return V{random_normal({2, 3, 4, 4}, r), random_normal({2, 3, 1, 1}, r)}; },
               [](const V& x) { return conv2d(x[0], x[1]); }});
  c.push_back({"conv2d_weight_grad", [](R& r) { return V{random_normal({2, 3, 5, 5}, r), random_normal({2, 4, 5, 5}, r)}; },
               [](const V& x) { return conv2d_weight_grad(x[0], x[1], 3); }});
  c.push_back({"flip_transpose", [](R& r) { return V{random_normal({4, 3, 3, 3}, r)}; },
               [](const V& x) { return flip_transpose(x[0]); }});
  c.push_back({"upsample_nearest", [](R& r) { return V{random_normal({2, 3, 3, 3}, r)}; },
               [](const V& x) { return upsample_nearest(x[0]); }});
  c.push_back({"downsample_avg", normal1, [](const V& x) { return downsample_avg(x[0]); }});

  using namespace layers;
  c.push_back({"positive_style", [s4](R& r) { return V{random_away_from_zero(s4, r, 0.05, 2.0)}; },
               [](const V& x) { return positive_style(x[0]); }});
  c.push_back({"spade", [](R& r) {
                 return V{random_normal({2, 3, 4, 4}, r), random_normal({1, 3, 4, 4}, r), random_normal({1, 3, 4, 4}, r)};
               },
               [](const V& x) { return spade(x[0], {x[1], x[2]}); }});
  c.push_back({"adain", [](R& r) {
                 return V{random_normal({2, 3, 4, 4}, r), random_normal({2, 3, 1, 1}, r), random_normal({2, 3, 1, 1}, r)};
               },
               [](const V& x) { return adain(x[0], {x[1], x[2]}); }});
  c.push_back({"modulated_conv", [](R& r) {
                 return V{random_normal({2, 3, 4, 4}, r), random_positive({2, 3, 1, 1}, r, 0.3, 2.0), random_normal({4, 3, 3, 3}, r)};
               },
               [](const V& x) { return modulated_conv(x[0], {x[1], {}}, x[2], Padding::zero); }});
  c.push_back({"spatially_modulated_conv zero", [](R& r) {
                 return V{random_normal({2, 3, 4, 4}, r), random_positive({1, 3, 4, 4}, r, 0.3, 2.0), random_normal({4, 3, 3, 3}, r)};
               },
               [](const V& x) { return spatially_modulated_conv(x[0], {x[1], {}}, x[2], Padding::zero); }});
  c.push_back({"spatially_modulated_conv periodic", [](R& r) {
                 return V{random_normal({2, 3, 4, 4}, r), random_positive({2, 3, 4, 4}, r, 0.3, 2.0), random_normal({4, 3, 3, 3}, r)};
               },
               [](const V& x) { return spatially_modulated_conv(x[0], {x[1], {}}, x[2], Padding::periodic); }});

  // Second order: penalty on the gradient w.r.t. input 0.
  auto second = [&c](const char* name, Builder b, OpFn op) {
    c.push_back({name, std::move(b), std::move(op), true, 0});
  };
  second("conv2d + leaky_relu", [](R& r) { return V{random_normal({1, 2, 4, 4}, r), random_normal({3, 2, 3, 3}, r)}; },
         [](const V& x) { return leaky_relu(conv2d(square(x[0]), x[1])); });
  second("mul / add / affine", [](R& r) { return V{random_normal({2, 3, 2, 2}, r), random_normal({1, 3, 2, 2}, r)}; },
         [](const V& x) { return affine(add(mul(x[0], mul(x[0], x[1])), x[1]), 0.5, 0.1); });
  second("mean / sum", [](R& r) { return V{random_normal({2, 3, 2, 2}, r), random_normal({2, 3, 2, 2}, r)}; },
         [](const V& x) { return mul(sum(square(x[0]), {1}), mean(mul(x[0], x[1]), {2, 3})); });
  second("sub / div / sqrt", [](R& r) { return V{random_positive({2, 3, 2, 2}, r, 0.5, 2.0), random_positive({1, 3, 2, 2}, r, 0.5, 2.0)}; },
         [](const V& x) { return div(sub(x[0], x[1]), sqrt(add(x[0], x[1]))); });
  second("tanh / abs", [](R& r) { return V{random_away_from_zero({2, 3, 2, 2}, r, 0.1, 1.5)}; },
         [](const V& x) { return mul(tanh(x[0]), abs(x[0])); });
  second("upsample / downsample / reshape", [](R& r) { return V{random_normal({1, 2, 2, 2}, r)}; },
         [](const V& x) { return reshape(downsample_avg(square(upsample_nearest(x[0]))), {1, 8}); });
  second("conv2d_weight_grad", [](R& r) { return V{random_normal({1, 2, 4, 4}, r), random_normal({1, 2, 4, 4}, r)}; },
         [](const V& x) { return conv2d_weight_grad(square(x[0]), x[1], 3); });
  second("modulated_conv", [](R& r) {
           return V{random_normal({1, 2, 3, 3}, r), random_positive({1, 2, 1, 1}, r, 0.5, 2.0), random_normal({2, 2, 3, 3}, r)};
         },
         [](const V& x) { return square(layers::modulated_conv(x[0], {x[1], {}}, x[2], Padding::zero)); });
  second("spatially_modulated_conv", [](R& r) {
           return V{random_positive({1, 2, 3, 3}, r, 0.5, 2.0), random_normal({1, 2, 3, 3}, r), random_normal({2, 2, 3, 3}, r)};
         },
         [](const V& x) {
           return leaky_relu(layers::spatially_modulated_conv(x[1], {layers::positive_style(x[0]), {}}, x[2], Padding::zero));
         });
  return c;
}

}  // namespace

std::vector<CaseResult> run_suite(std::uint64_t seed, int points) {
  std::mt19937_64 rng(seed);
  std::vector<CaseResult> results;
  for (const Case& c : cases()) {
    CaseResult r{c.name, c.second_order, points, 0.0,
                 c.second_order ? kSecondOrderTolerance : kFirstOrderTolerance};
    for (int p = 0; p < points; ++p) {
      const auto inputs = c.inputs(rng);
      const ScalarFn f = projected(c.op, inputs, rng);
      const Real e = c.second_order ? check_double_backward(f, inputs, c.wrt) : check_gradient(f, inputs);
      r.worst_error = std::max(r.worst_error, std::isfinite(e) ? e : INFINITY);
    }
    results.push_back(std::move(r));
  }

  // Nested numeric oracle on a small network, penalty on the input gradient.
  CaseResult nested{"nested finite differences: conv-lrelu-conv network", true, points, 0.0,
                    kSecondOrderTolerance};
  for (int p = 0; p < points; ++p) {
    std::vector<Tensor> inputs{random_normal({1, 1, 3, 3}, rng), random_normal({2, 1, 3, 3}, rng, 0.5),
                               random_normal({1, 2, 3, 3}, rng, 0.5)};
    const ScalarFn f = [](const std::vector<Tensor>& x) {
      return mean(square(conv2d(leaky_relu(conv2d(x[0], x[1])), x[2])));
    };
    nested.worst_error = std::max(nested.worst_error, check_double_backward_nested(f, inputs, 0));
  }
  results.push_back(std::move(nested));
  return results;
}

}  // namespace ssn::gradcheck
