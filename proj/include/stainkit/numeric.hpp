#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "stainkit/error.hpp"

namespace stainkit {

/// Pairwise (tree) summation in index order; result depends only on the input sequence.
inline double pairwise_sum(std::span<const double> v) {
  constexpr std::size_t kBlock = 8;
  if (v.size() <= kBlock) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Percentile with linear interpolation between closest ranks (numpy's
/// default). Reorders `values` in place.
inline double percentile_inplace(std::span<double> values, double pct) {
  if (values.empty()) fail(ErrorCode::InvalidArgument, "percentile of an empty set");
  if (!(pct >= 0.0 && pct <= 100.0)) fail(ErrorCode::InvalidArgument, "percentile outside [0, 100]");
  const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + lo, values.end());
  const double a = values[lo];
  if (frac == 0.0 || lo + 1 >= values.size()) return a;
  const double b = *std::min_element(values.begin() + lo + 1, values.end());
  return a + frac * (b - a);
}

inline double percentile(std::vector<double> values, double pct) { return percentile_inplace(values, pct); }

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Corrected two-pass mean and population standard deviation. The residual
/// sum of the second pass fixes the mean's rounding, so constant input gives
/// exactly zero spread.
inline MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) fail(ErrorCode::InvalidArgument, "mean of an empty set");
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / n;
  double r = 0.0, ss = 0.0;
  for (double x : v) {
    r += x - mean;
    ss += (x - mean) * (x - mean);
  }
  return {mean + r / n, std::sqrt(std::max(0.0, ss - r * r / n) / n)};
}

}  // namespace stainkit
