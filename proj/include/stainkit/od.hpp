#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "stainkit/image.hpp"

namespace stainkit {

/// Logarithm base used for the RGB <-> optical density conversions. Both
/// directions always use the same base so they are exact inverses.
enum class OdBase { ten, e };

constexpr std::string_view to_string(OdBase base) { return base == OdBase::ten ? "ten" : "e"; }

inline OdBase parse_od_base(std::string_view s) {
  if (s == "ten" || s == "10") return OdBase::ten;
  if (s == "e") return OdBase::e;
  fail(ErrorCode::InvalidArgument, "unknown OD base '" + std::string(s) + "' (expected ten|e)");
}

inline double od_log(double x, OdBase base) { return base == OdBase::ten ? std::log10(x) : std::log(x); }
inline double od_exp(double x, OdBase base) { return base == OdBase::ten ? std::pow(10.0, x) : std::exp(x); }

/// Largest optical density produced by rgb_to_od (channel value clamped to 1).
inline double od_max(OdBase base = OdBase::ten) { return od_log(255.0, base); }

constexpr double kDefaultTissueThreshold = 0.15;

namespace detail {

inline const std::array<double, 256>& od_table(OdBase base) {
  static const auto make = [](OdBase b) {
    std::array<double, 256> t{};
    for (int v = 0; v < 256; ++v) t[v] = -od_log(std::max(v, 1) / 255.0, b);
    return t;
  };
  static const std::array<double, 256> ten = make(OdBase::ten);
  static const std::array<double, 256> e = make(OdBase::e);
  return base == OdBase::ten ? ten : e;
}

}  // namespace detail

/// od = -log(max(v, 1) / 255) per channel.
inline OdImage rgb_to_od(const RgbImage& img, OdBase base = OdBase::ten) {
  const auto& table = detail::od_table(base);
  OdImage od(img.height(), img.width());
  auto src = img.data();
  auto dst = od.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = table[src[i]];
  return od;
}

/// 255 * base^(-od) without clamping; the pre-quantisation view of od_to_rgb.
template <typename Tag>
FloatRgbImage od_to_float_rgb(const Image<double, 3, Tag>& od, OdBase base = OdBase::ten) {
  FloatRgbImage out(od.height(), od.width());
  auto src = od.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = 255.0 * od_exp(-src[i], base);
  return out;
}

/// Inverse of od_to_float_rgb. Values must be positive; no clamping is applied.
inline OdImage float_rgb_to_od(const FloatRgbImage& rgb, OdBase base = OdBase::ten) {
  OdImage od(rgb.height(), rgb.width());
  auto src = rgb.data();
  auto dst = od.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!(src[i] > 0.0) || !std::isfinite(src[i]))
      fail(ErrorCode::InvalidArgument, "float RGB value must be positive and finite");
    dst[i] = -od_log(src[i] / 255.0, base);
  }
  return od;
}

inline std::uint8_t quantize_channel(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::round(v));
}

inline RgbImage quantize(const FloatRgbImage& rgb) {
  RgbImage out(rgb.height(), rgb.width());
  auto src = rgb.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = quantize_channel(src[i]);
  return out;
}

/// v = round(255 * base^(-od)) clamped to [0, 255].
template <typename Tag>
RgbImage od_to_rgb(const Image<double, 3, Tag>& od, OdBase base = OdBase::ten) {
  RgbImage out(od.height(), od.width());
  auto src = od.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = quantize_channel(255.0 * od_exp(-src[i], base));
  return out;
}

/// A pixel is tissue when its largest channel OD exceeds the threshold.
inline TissueMask tissue_mask(const OdImage& od, double threshold = kDefaultTissueThreshold) {
  if (!(threshold >= 0.0)) fail(ErrorCode::InvalidArgument, "tissue threshold must be >= 0");
  TissueMask mask(od.height(), od.width());
  for (std::size_t p = 0; p < od.pixel_count(); ++p) {
    double m = std::max({od.at_pixel(p, 0), od.at_pixel(p, 1), od.at_pixel(p, 2)});
    mask.at_pixel(p) = m > threshold ? 1 : 0;
  }
  return mask;
}

}  // namespace stainkit
