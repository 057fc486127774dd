#pragma once

#include <span>
#include <vector>

namespace pssc::gating {

/// Soft gate activations in [0,1] along one feature-map axis.
struct GateVector {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

/// H x W mask in [0,1], the mean of `num_rects` rectangle outer products.
struct SpatialMask {
  int height = 0;
  int width = 0;
  int num_rects = 1;
  std::vector<double> values;  // row-major

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }
};

/// Cumulative sum of the softmax of `logits`: a soft step that rises to 1.
GateVector cumax(std::span<const double> logits);

/// cumax(lo) * (1 - cumax(hi)): a soft interval indicator.
GateVector band_pass_gate(std::span<const double> logits_lo, std::span<const double> logits_hi);

/// Outer product of a height gate and a width gate.
SpatialMask rect_mask(const GateVector& gate_h, const GateVector& gate_w);

/// Mean of J single-rectangle masks of identical shape.
SpatialMask aggregate_masks(std::span<const SpatialMask> rects);

/// Ablation mask: outer product of softmax(logits_h) and softmax(logits_w),
/// scaled so the largest entry is 1.
SpatialMask softmax_mask(std::span<const double> logits_h, std::span<const double> logits_w);

// Vector kernels shared with the autograd ops. Backward kernels accumulate
// into `grad_in`.

template <typename T>
void softmax_forward(std::span<const T> logits, std::span<T> out);
template <typename T>
void softmax_backward(std::span<const T> probs, std::span<const T> grad_out, std::span<T> grad_in);

template <typename T>
void cumax_forward(std::span<const T> logits, std::span<T> probs, std::span<T> out);
template <typename T>
void cumax_backward(std::span<const T> probs, std::span<const T> grad_out, std::span<T> grad_in);

}  // namespace pssc::gating
