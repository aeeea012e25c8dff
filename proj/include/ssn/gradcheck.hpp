// Central finite-difference checks for first- and second-order gradients.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ssn/tensor.hpp"

namespace ssn::gradcheck {

inline constexpr Real kStep = 1e-5;
inline constexpr Real kFirstOrderTolerance = 1e-4;
inline constexpr Real kSecondOrderTolerance = 1e-3;

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// max_i |analytic_i - numeric_i| / max(max_i |numeric_i|, 1), over all inputs.
Real relative_error(std::span<const Real> analytic, std::span<const Real> numeric);

/// Central differences of `f` w.r.t. every element of every input.
std::vector<std::vector<Real>> numeric_gradient(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                                Real step = kStep);

/// Worst relative error of grad(f) against central differences.
Real check_gradient(const ScalarFn& f, const std::vector<Tensor>& inputs, Real step = kStep);

/// Gradient of ||d inner/d inputs[wrt]||^2 w.r.t. every input (double-backward)
/// against central differences of the same penalty; the penalty's forward value
/// uses first-order autodiff.
Real check_double_backward(const ScalarFn& inner, const std::vector<Tensor>& inputs,
                           std::size_t wrt, Real step = kStep);

/// Fully numeric oracle: the penalty is evaluated with an inner central
/// difference and differentiated with an outer one.
Real check_double_backward_nested(const ScalarFn& inner, const std::vector<Tensor>& inputs,
                                  std::size_t wrt, Real inner_step = 1e-5,
                                  Real outer_step = 1e-4);

Tensor random_normal(const Shape& shape, std::mt19937_64& rng, Real scale = 1.0);
/// Uniform magnitudes in [lo, hi] with random signs.
Tensor random_away_from_zero(const Shape& shape, std::mt19937_64& rng, Real lo, Real hi);
Tensor random_positive(const Shape& shape, std::mt19937_64& rng, Real lo, Real hi);

struct CaseResult {
  std::string name;
  bool second_order = false;
  int points = 0;
  Real worst_error = 0.0;
  Real tolerance = 0.0;
  bool passed() const { return worst_error < tolerance; }
};

/// Every op and layer at `points` random inputs, plus double-backward over
/// the second-order closure and a nested finite-difference network check.
std::vector<CaseResult> run_suite(std::uint64_t seed = 7, int points = 10);

}  // namespace ssn::gradcheck
