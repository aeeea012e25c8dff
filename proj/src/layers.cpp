#include "ssn/layers.hpp"

#include <algorithm>

namespace ssn::layers {

namespace {

// sqrt(var + eps^2); flags when var falls below the floor.
Tensor floored_std(const Tensor& var, NormFlags* flags) {
  if (flags) {
    const auto v = var.data();
    if (std::any_of(v.begin(), v.end(),
                    [](Real x) { return x < kNormEpsilon * kNormEpsilon; })) {
      flags->clamped = true;
    }
  }
  return sqrt(affine(var, 1.0, kNormEpsilon * kNormEpsilon));
}

void check_style_extent(const Tensor& h, const Tensor& s, bool spatial, const char* op) {
  if (s.dim() != 4 || s.size(1) != h.size(1) || (s.size(0) != 1 && s.size(0) != h.size(0))) {
    throw ContractViolation(std::string(op) + ": style " + shape_str(s.shape()) +
                            " does not condition activation " + shape_str(h.shape()));
  }
  const bool matches = spatial ? (s.size(2) == h.size(2) && s.size(3) == h.size(3))
                               : (s.size(2) == 1 && s.size(3) == 1);
  if (!matches) {
    throw ContractViolation(std::string(op) + ": style extents " + shape_str(s.shape()) +
                            " do not match activation " + shape_str(h.shape()));
  }
}

Tensor normalize(const Tensor& h, const std::vector<int>& axes, NormFlags* flags) {
  Tensor centered = sub(h, mean(h, axes));
  Tensor var = mean(square(centered), axes);
  return div(centered, floored_std(var, flags));
}

}  // namespace

Tensor positive_style(const Tensor& raw) { return affine(abs(raw), 1.0, kStyleFloor); }

Tensor spade(const Tensor& h, const SpatialStyle& style, NormFlags* flags) {
  if (h.dim() != 4 || h.size(0) < 1) throw ContractViolation("spade: expected NCHW batch");
  check_style_extent(h, style.scale, true, "spade");
  Tensor out = mul(style.scale, normalize(h, {0, 2, 3}, flags));
  if (style.bias.defined()) {
    check_style_extent(h, style.bias, true, "spade");
    out = add(out, style.bias);
  }
  return out;
}

Tensor adain(const Tensor& h, const ChannelStyle& style, NormFlags* flags) {
  if (h.dim() != 4 || h.size(0) < 1) throw ContractViolation("adain: expected NCHW batch");
  check_style_extent(h, style.scale, false, "adain");
  Tensor out = mul(style.scale, normalize(h, {2, 3}, flags));
  if (style.bias.defined()) {
    check_style_extent(h, style.bias, false, "adain");
    out = add(out, style.bias);
  }
  return out;
}

Tensor expected_std_channel(const Tensor& weight, const Tensor& scale, NormFlags* flags) {
  const int o = weight.size(0), c = weight.size(1);
  const int n = scale.size(0);
  Tensor w2 = reshape(sum(square(weight), {2, 3}), {1, o, c});
  Tensor s2 = reshape(square(scale), {n, 1, c});
  Tensor var = reshape(sum(mul(w2, s2), {2}), {n, o, 1, 1});
  return floored_std(var, flags);
}

Tensor expected_std_spatial(const Tensor& weight, const Tensor& scale, Padding padding,
                            NormFlags* flags) {
  Tensor var = mean(conv2d(square(scale), square(weight), padding), {2, 3});
  return floored_std(var, flags);
}

Tensor modulated_conv(const Tensor& h, const ChannelStyle& style, const Tensor& weight,
                      Padding padding, NormFlags* flags) {
  check_style_extent(h, style.scale, false, "modulated_conv");
  Tensor out = conv2d(mul(style.scale, h), weight, padding);
  return div(out, expected_std_channel(weight, style.scale, flags));
}

Tensor spatially_modulated_conv(const Tensor& h, const SpatialStyle& style, const Tensor& weight,
                                Padding padding, NormFlags* flags) {
  check_style_extent(h, style.scale, true, "spatially_modulated_conv");
  Tensor out = conv2d(mul(style.scale, h), weight, padding);
  return div(out, expected_std_spatial(weight, style.scale, padding, flags));
}

Tensor fold_modulation(const ChannelStyle& style, const Tensor& weight) {
  if (style.scale.size(0) != 1) {
    throw ContractViolation("fold_modulation: needs a single style, got " +
                            shape_str(style.scale.shape()));
  }
  const int o = weight.size(0), c = weight.size(1);
  Tensor sigma = reshape(expected_std_channel(weight, style.scale), {o, 1, 1, 1});
  Tensor s = reshape(style.scale, {1, c, 1, 1});
  return div(mul(weight, s), sigma);
}

}  // namespace ssn::layers
