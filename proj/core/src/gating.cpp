#include "pssc/gating.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pssc::gating {
namespace {

void require_finite(std::span<const double> v, const char* what) {
  if (v.empty()) throw std::invalid_argument(std::string(what) + ": empty logits");
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite logit");
  }
}

void require_gate(const GateVector& g, const char* what) {
  if (g.values.empty()) throw std::invalid_argument(std::string(what) + ": empty gate");
  for (double x : g.values) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument(std::string(what) + ": gate entry outside [0,1]");
  }
}

}  // namespace

template <typename T>
void softmax_forward(std::span<const T> logits, std::span<T> out) {
  const T peak = *std::max_element(logits.begin(), logits.end());
  T total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
}

template <typename T>
void softmax_backward(std::span<const T> probs, std::span<const T> grad_out, std::span<T> grad_in) {
  T dot = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_out[i];
  for (std::size_t i = 0; i < probs.size(); ++i) grad_in[i] += probs[i] * (grad_out[i] - dot);
}

template <typename T>
void cumax_forward(std::span<const T> logits, std::span<T> probs, std::span<T> out) {
  softmax_forward<T>(logits, probs);
  T run = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    run += probs[i];
    out[i] = std::min(run, T(1));
  }
  // The last entry is exactly one up to rounding; pin it.
  out[out.size() - 1] = T(1);
}

template <typename T>
void cumax_backward(std::span<const T> probs, std::span<const T> grad_out, std::span<T> grad_in) {
  // d out_i / d p_j = [j <= i]  =>  grad_p_j = sum_{i >= j} grad_out_i
  std::vector<T> grad_p(probs.size());
  T run = 0;
  for (std::size_t i = probs.size(); i-- > 0;) {
    run += grad_out[i];
    grad_p[i] = run;
  }
  softmax_backward<T>(probs, grad_p, grad_in);
}

template void softmax_forward<float>(std::span<const float>, std::span<float>);
template void softmax_forward<double>(std::span<const double>, std::span<double>);
template void softmax_backward<float>(std::span<const float>, std::span<const float>, std::span<float>);
template void softmax_backward<double>(std::span<const double>, std::span<const double>, std::span<double>);
template void cumax_forward<float>(std::span<const float>, std::span<float>, std::span<float>);
template void cumax_forward<double>(std::span<const double>, std::span<double>, std::span<double>);
template void cumax_backward<float>(std::span<const float>, std::span<const float>, std::span<float>);
template void cumax_backward<double>(std::span<const double>, std::span<const double>, std::span<double>);

GateVector cumax(std::span<const double> logits) {
  require_finite(logits, "cumax");
  std::vector<double> probs(logits.size());
  GateVector g{std::vector<double>(logits.size())};
  cumax_forward<double>(logits, probs, g.values);
  return g;
}

GateVector band_pass_gate(std::span<const double> logits_lo, std::span<const double> logits_hi) {
  if (logits_lo.size() != logits_hi.size()) {
    throw std::invalid_argument("band_pass_gate: logits length mismatch (" + std::to_string(logits_lo.size()) +
                                " vs " + std::to_string(logits_hi.size()) + ")");
  }
  GateVector lo = cumax(logits_lo);
  const GateVector hi = cumax(logits_hi);
  for (std::size_t i = 0; i < lo.values.size(); ++i) lo.values[i] *= 1.0 - hi.values[i];
  return lo;
}

SpatialMask rect_mask(const GateVector& gate_h, const GateVector& gate_w) {
  require_gate(gate_h, "rect_mask");
  require_gate(gate_w, "rect_mask");
  SpatialMask m;
  m.height = static_cast<int>(gate_h.size());
  m.width = static_cast<int>(gate_w.size());
  m.values.resize(gate_h.size() * gate_w.size());
  for (int i = 0; i < m.height; ++i) {
    for (int j = 0; j < m.width; ++j) m.values[static_cast<std::size_t>(i) * m.width + j] = gate_h[i] * gate_w[j];
  }
  return m;
}

SpatialMask aggregate_masks(std::span<const SpatialMask> rects) {
  if (rects.empty()) throw std::invalid_argument("aggregate_masks: need at least one rectangle");
  SpatialMask out;
  out.height = rects.front().height;
  out.width = rects.front().width;
  out.num_rects = 0;
  out.values.assign(rects.front().values.size(), 0.0);
  for (const auto& r : rects) {
    if (r.height != out.height || r.width != out.width || r.values.size() != out.values.size()) {
      throw std::invalid_argument("aggregate_masks: rectangle shapes differ");
    }
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += r.values[i];
    out.num_rects += r.num_rects;
  }
  const double inv = 1.0 / static_cast<double>(rects.size());
  for (auto& v : out.values) v *= inv;
  return out;
}

SpatialMask softmax_mask(std::span<const double> logits_h, std::span<const double> logits_w) {
  require_finite(logits_h, "softmax_mask");
  require_finite(logits_w, "softmax_mask");
  GateVector h{std::vector<double>(logits_h.size())};
  GateVector w{std::vector<double>(logits_w.size())};
  softmax_forward<double>(logits_h, h.values);
  softmax_forward<double>(logits_w, w.values);
  const double hmax = *std::max_element(h.values.begin(), h.values.end());
  const double wmax = *std::max_element(w.values.begin(), w.values.end());
  for (auto& v : h.values) v /= hmax;
  for (auto& v : w.values) v /= wmax;
  return rect_mask(h, w);
}

}  // namespace pssc::gating
