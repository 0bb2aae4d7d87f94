#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "stainkit/numeric.hpp"
#include "stainkit/od.hpp"

namespace stainkit {

// Ruderman l-alpha-beta opponent space: RGB -> LMS -> log10 -> decorrelated axes.

struct LabTag {};
using LabImage = Image<double, 3, LabTag>;

namespace detail {

inline const Eigen::Matrix3d& rgb_to_lms_matrix() {
  static const Eigen::Matrix3d m = [] {
    Eigen::Matrix3d r;
    r << 0.3811, 0.5783, 0.0402,
         0.1967, 0.7244, 0.0782,
         0.0241, 0.1288, 0.8444;
    return r;
  }();
  return m;
}

inline const Eigen::Matrix3d& log_lms_to_lab_matrix() {
  static const Eigen::Matrix3d m = [] {
    Eigen::Matrix3d p;
    p << 1, 1, 1,
         1, 1, -2,
         1, -1, 0;
    Eigen::Vector3d d(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(6.0), 1.0 / std::sqrt(2.0));
    return Eigen::Matrix3d(d.asDiagonal() * p);
  }();
  return m;
}

inline const Eigen::Matrix3d& lms_to_rgb_matrix() {
  static const Eigen::Matrix3d m = rgb_to_lms_matrix().inverse();
  return m;
}

inline const Eigen::Matrix3d& lab_to_log_lms_matrix() {
  static const Eigen::Matrix3d m = log_lms_to_lab_matrix().inverse();
  return m;
}

}  // namespace detail

/// Channel values are clamped to >= 1 so the logarithm stays finite. Accepts
/// 8-bit or pre-quantisation float RGB.
template <typename T, typename Tag>
LabImage rgb_to_lab(const Image<T, 3, Tag>& img) {
  const Eigen::Matrix3d& to_lms = detail::rgb_to_lms_matrix();
  const Eigen::Matrix3d& to_lab = detail::log_lms_to_lab_matrix();
  LabImage lab(img.height(), img.width());
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    Eigen::Vector3d rgb;
    for (int c = 0; c < 3; ++c) rgb(c) = std::max<double>(img.at_pixel(p, c), 1.0) / 255.0;
    Eigen::Vector3d lms = to_lms * rgb;
    for (int c = 0; c < 3; ++c) lms(c) = std::log10(lms(c));
    const Eigen::Vector3d out = to_lab * lms;
    for (int c = 0; c < 3; ++c) lab.at_pixel(p, c) = out(c);
  }
  return lab;
}

/// Back to RGB in [0,255] nominal range, unclamped.
inline FloatRgbImage lab_to_float_rgb(const LabImage& lab) {
  const Eigen::Matrix3d& to_log_lms = detail::lab_to_log_lms_matrix();
  const Eigen::Matrix3d& to_rgb = detail::lms_to_rgb_matrix();
  FloatRgbImage out(lab.height(), lab.width());
  for (std::size_t p = 0; p < lab.pixel_count(); ++p) {
    Eigen::Vector3d v(lab.at_pixel(p, 0), lab.at_pixel(p, 1), lab.at_pixel(p, 2));
    Eigen::Vector3d lms = to_log_lms * v;
    for (int c = 0; c < 3; ++c) lms(c) = std::pow(10.0, lms(c));
    const Eigen::Vector3d rgb = to_rgb * lms * 255.0;
    for (int c = 0; c < 3; ++c) out.at_pixel(p, c) = rgb(c);
  }
  return out;
}

struct LabStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

/// Per-channel mean and population std over all pixels.
inline LabStats lab_stats(const LabImage& lab) {
  LabStats s;
  std::vector<double> channel(lab.pixel_count());
  for (int c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < lab.pixel_count(); ++p) channel[p] = lab.at_pixel(p, c);
    const MeanStd ms = mean_std(channel);
    s.mean[c] = ms.mean;
    s.std[c] = ms.std;
  }
  return s;
}

/// out = (in - src.mean) * (target.std / max(src.std, 1e-8)) + target.mean, per channel.
inline LabImage lab_transfer(const LabImage& lab, const LabStats& src, const LabStats& target) {
  LabImage out(lab.height(), lab.width());
  std::array<double, 3> scale{};
  for (int c = 0; c < 3; ++c) scale[c] = target.std[c] / std::max(src.std[c], 1e-8);
  for (std::size_t p = 0; p < lab.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c)
      out.at_pixel(p, c) = (lab.at_pixel(p, c) - src.mean[c]) * scale[c] + target.mean[c];
  return out;
}

}  // namespace stainkit
