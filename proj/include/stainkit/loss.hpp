#pragma once

#include <cmath>
#include <vector>

#include "stainkit/image.hpp"
#include "stainkit/numeric.hpp"

namespace stainkit {

/// Whether loss inputs are raw logits (sigmoid applied inside) or probabilities.
enum class LossInput { logits, probabilities };

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace detail {

inline void check_loss_inputs(const FloatMap& a, const FloatMap& b, const Mask& mask) {
  require_same_shape(a, b, "loss inputs");
  require_same_shape(a, mask, "loss mask");
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    if (mask.at_pixel(p) && (!std::isfinite(a.at_pixel(p)) || !std::isfinite(b.at_pixel(p))))
      fail(ErrorCode::InvalidArgument, "loss inputs must be finite");
  }
}

template <typename F>
double masked_mean_abs(const FloatMap& a, const FloatMap& b, const Mask& mask, F transform) {
  detail::check_loss_inputs(a, b, mask);
  std::vector<double> terms;
  terms.reserve(a.pixel_count());
  for (std::size_t p = 0; p < a.pixel_count(); ++p)
    if (mask.at_pixel(p)) terms.push_back(std::abs(transform(a.at_pixel(p)) - transform(b.at_pixel(p))));
  if (terms.empty()) fail(ErrorCode::EmptyMask, "loss mask selects no pixels");
  return pairwise_sum(terms) / static_cast<double>(terms.size());
}

}  // namespace detail

/// Mean absolute difference over masked pixels; row-major pairwise summation.
inline double masked_mae(const FloatMap& a, const FloatMap& b, const Mask& mask) {
  return detail::masked_mean_abs(a, b, mask, [](double v) { return v; });
}

/// Stain consistency loss: mean |sigmoid(a_i) - sigmoid(b_i)| over object pixels.
/// An empty mask is an error rather than a zero loss.
inline double stain_consistency_loss(const FloatMap& a, const FloatMap& b, const Mask& mask,
                                     LossInput input = LossInput::logits) {
  if (input == LossInput::probabilities) return masked_mae(a, b, mask);
  return detail::masked_mean_abs(a, b, mask, sigmoid);
}

/// d loss / d a_i = sigmoid'(a_i) * sign(sigmoid(a_i) - sigmoid(b_i)) / m on masked
/// pixels (0 at ties and off the mask).
inline FloatMap stain_consistency_gradient(const FloatMap& a, const FloatMap& b, const Mask& mask,
                                           LossInput input = LossInput::logits) {
  detail::check_loss_inputs(a, b, mask);
  const std::size_t m = count_set(mask);
  if (m == 0) fail(ErrorCode::EmptyMask, "loss mask selects no pixels");
  FloatMap grad(a.height(), a.width(), 0.0);
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    if (!mask.at_pixel(p)) continue;
    const double pa = input == LossInput::logits ? sigmoid(a.at_pixel(p)) : a.at_pixel(p);
    const double pb = input == LossInput::logits ? sigmoid(b.at_pixel(p)) : b.at_pixel(p);
    const double sign = pa > pb ? 1.0 : (pa < pb ? -1.0 : 0.0);
    const double local = input == LossInput::logits ? pa * (1.0 - pa) : 1.0;
    grad.at_pixel(p) = local * sign / static_cast<double>(m);
  }
  return grad;
}

}  // namespace stainkit
