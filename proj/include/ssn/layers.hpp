// Conditioning layers: SPADE, AdaIN, modulated convolution and spatially
// modulated convolution.
#pragma once

#include "ssn/tensor.hpp"

namespace ssn::layers {

/// Variance / expected-std floor used by every normalization below.
inline constexpr Real kNormEpsilon = 1e-8;
/// Offset added after abs() when mapping raw style logits to strictly positive styles.
inline constexpr Real kStyleFloor = 1e-4;

/// Spatial conditioning: scale [1|N, C, H, W], bias optional (SPADE only).
struct SpatialStyle {
  Tensor scale;
  Tensor bias;
};

/// Per-channel conditioning: scale [1|N, C, 1, 1], bias used by AdaIN only.
struct ChannelStyle {
  Tensor scale;
  Tensor bias;
};

/// Set when a statistic hit the epsilon floor.
struct NormFlags {
  bool clamped = false;
};

/// abs(raw) + 1e-4, the positive style mapping used before modulation.
Tensor positive_style(const Tensor& raw);

/// Normalizes with per-channel statistics pooled over (N, H, W).
Tensor spade(const Tensor& h, const SpatialStyle& style, NormFlags* flags = nullptr);

/// Normalizes with per-example, per-channel statistics pooled over (H, W).
Tensor adain(const Tensor& h, const ChannelStyle& style, NormFlags* flags = nullptr);

/// Expected output std of w * (s h) for unit-variance h: sqrt(sum_{c,u,v} w^2 s^2).
/// w [O,C,k,k], s [N,C,1,1] -> [N,O,1,1].
Tensor expected_std_channel(const Tensor& weight, const Tensor& scale, NormFlags* flags = nullptr);

/// Expected output std of w * (s . h) averaged over positions:
/// sqrt(mean_{i,j} (w^2 * s^2)_{o,i,j}), with the convolution padded like the
/// forward pass. w [O,C,k,k], s [N,C,H,W] -> [N,O,1,1].
Tensor expected_std_spatial(const Tensor& weight, const Tensor& scale, Padding padding,
                            NormFlags* flags = nullptr);

Tensor modulated_conv(const Tensor& h, const ChannelStyle& style, const Tensor& weight,
                      Padding padding = Padding::zero, NormFlags* flags = nullptr);

Tensor spatially_modulated_conv(const Tensor& h, const SpatialStyle& style, const Tensor& weight,
                                Padding padding = Padding::zero, NormFlags* flags = nullptr);

/// The weight (s w) / sigma_E that turns modulated_conv into a plain conv2d.
/// Requires a single style (batch 1).
Tensor fold_modulation(const ChannelStyle& style, const Tensor& weight);

}  // namespace ssn::layers
