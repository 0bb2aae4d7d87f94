#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "stainkit/fft.hpp"
#include "stainkit/lab.hpp"
#include "stainkit/separation.hpp"

namespace stainkit {

enum class NormMethod { reinhard, macenko, histogram, fda };

inline NormMethod parse_norm_method(std::string_view s) {
  if (s == "reinhard") return NormMethod::reinhard;
  if (s == "macenko") return NormMethod::macenko;
  if (s == "hm" || s == "histogram") return NormMethod::histogram;
  if (s == "fda") return NormMethod::fda;
  fail(ErrorCode::InvalidArgument, "unknown normalisation method '" + std::string(s) + "'");
}

constexpr double kDefaultFdaBeta = 0.01;
constexpr double kMacenkoReferencePercentile = 99.0;

struct ReinhardRef {
  LabStats lab;
};

struct MacenkoRef {
  StainMatrix stains = StainMatrix::identity();
  std::array<double, 3> p99{};
};

/// Cumulative per-channel counts; cdf(c, v) = cumulative[c][v] / total.
struct HistogramRef {
  std::array<std::array<std::uint64_t, 256>, 3> cumulative{};
  std::uint64_t total = 0;

  double cdf(int channel, int value) const {
    return static_cast<double>(cumulative[channel][value]) / static_cast<double>(total);
  }
};

/// Centred (fftshifted) amplitude spectrum per channel.
struct FdaRef {
  int height = 0;
  int width = 0;
  std::array<std::vector<double>, 3> amplitude;
  double beta = kDefaultFdaBeta;
};

using ReferenceTarget = std::variant<ReinhardRef, MacenkoRef, HistogramRef, FdaRef>;

struct NormalizeOptions {
  SeparationConfig separation;
  double fda_beta = kDefaultFdaBeta;
};

namespace detail {

inline std::size_t shifted_index(int k, int n) { return static_cast<std::size_t>((k + n / 2) % n); }

inline std::vector<std::complex<double>> channel_spectrum(const RgbImage& img, int c) {
  std::vector<std::complex<double>> grid(img.pixel_count());
  for (std::size_t p = 0; p < grid.size(); ++p) grid[p] = img.at_pixel(p, c);
  fft2d(grid, img.height(), img.width(), false);
  return grid;
}

inline HistogramRef histogram_of(const RgbImage& img) {
  HistogramRef h;
  std::array<std::array<std::uint64_t, 256>, 3> counts{};
  for (std::size_t p = 0; p < img.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c) ++counts[c][img.at_pixel(p, c)];
  for (int c = 0; c < 3; ++c) {
    std::uint64_t run = 0;
    for (int v = 0; v < 256; ++v) h.cumulative[c][v] = run += counts[c][v];
  }
  h.total = img.pixel_count();
  return h;
}

/// Percentile of each concentration channel over the masked pixels.
inline std::array<double, 3> masked_percentiles(const ConcentrationMap& s, const Mask& mask, double pct) {
  std::array<double, 3> out{};
  std::vector<double> values;
  values.reserve(s.pixel_count());
  for (int j = 0; j < 3; ++j) {
    values.clear();
    for (Eigen::Index p = 0; p < s.values.cols(); ++p)
      if (mask.at_pixel(static_cast<std::size_t>(p))) values.push_back(s.values(j, p));
    if (values.empty()) fail(ErrorCode::EmptyMask, "no tissue pixels for percentile");
    out[j] = percentile_inplace(values, pct);
  }
  return out;
}

inline const Mask& stats_mask(const Separation& sep, const SeparationConfig& cfg, Mask& storage) {
  if (cfg.stats_domain == StatsDomain::tissue) return sep.tissue;
  storage = full_mask(sep.od.height(), sep.od.width());
  return storage;
}

}  // namespace detail

/// Precomputes the method-specific reference statistics.
inline ReferenceTarget make_reference(const RgbImage& img, NormMethod method, const NormalizeOptions& opt = {}) {
  switch (method) {
    case NormMethod::reinhard:
      return ReinhardRef{lab_stats(rgb_to_lab(img))};
    case NormMethod::macenko: {
      const Separation sep = separate(img, opt.separation);
      Mask storage;
      const Mask& m = detail::stats_mask(sep, opt.separation, storage);
      return MacenkoRef{sep.stains, detail::masked_percentiles(sep.concentrations, m, kMacenkoReferencePercentile)};
    }
    case NormMethod::histogram:
      return detail::histogram_of(img);
    case NormMethod::fda: {
      if (!(opt.fda_beta >= 0.0 && opt.fda_beta <= 0.5)) fail(ErrorCode::InvalidArgument, "FDA beta must lie in [0, 0.5]");
      FdaRef ref;
      ref.height = img.height();
      ref.width = img.width();
      ref.beta = opt.fda_beta;
      for (int c = 0; c < 3; ++c) {
        const auto spec = detail::channel_spectrum(img, c);
        auto& amp = ref.amplitude[c];
        amp.assign(spec.size(), 0.0);
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x)
            amp[detail::shifted_index(y, img.height()) * img.width() + detail::shifted_index(x, img.width())] =
                std::abs(spec[static_cast<std::size_t>(y) * img.width() + x]);
      }
      return ref;
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown normalisation method");
}

// --- Reinhard ---------------------------------------------------------------

inline FloatRgbImage reinhard_normalize_float(const RgbImage& img, const ReinhardRef& ref) {
  const LabImage lab = rgb_to_lab(img);
  return lab_to_float_rgb(lab_transfer(lab, lab_stats(lab), ref.lab));
}

inline RgbImage reinhard_normalize(const RgbImage& img, const ReinhardRef& ref) {
  return quantize(reinhard_normalize_float(img, ref));
}

// --- Macenko ----------------------------------------------------------------

/// Concentrations scaled by ref_p99 / src_p99 and recomposed with the reference stains.
inline FloatRgbImage macenko_normalize_float(const RgbImage& img, const MacenkoRef& ref, const SeparationConfig& cfg = {}) {
  Separation sep = separate(img, cfg);
  Mask storage;
  const auto src = detail::masked_percentiles(sep.concentrations, detail::stats_mask(sep, cfg, storage),
                                              kMacenkoReferencePercentile);
  for (int j = 0; j < 3; ++j) sep.concentrations.values.row(j) *= ref.p99[j] / std::max(src[j], 1e-8);
  return recompose_float_rgb(ref.stains, sep.concentrations, cfg.od_base);
}

inline RgbImage macenko_normalize(const RgbImage& img, const MacenkoRef& ref, const SeparationConfig& cfg = {}) {
  return quantize(macenko_normalize_float(img, ref, cfg));
}

// --- Histogram matching -----------------------------------------------------

/// Per-channel lookup: v -> smallest u with G(u) >= F(v). Compared in integer
/// arithmetic (cross-multiplied counts) so equal CDF values tie exactly.
inline std::array<std::array<std::uint8_t, 256>, 3> histogram_lookup(const HistogramRef& src, const HistogramRef& ref) {
  std::array<std::array<std::uint8_t, 256>, 3> lut{};
  for (int c = 0; c < 3; ++c) {
    int u = 0;
    for (int v = 0; v < 256; ++v) {
      // F is non-decreasing in v, so the search resumes where it stopped.
      const unsigned __int128 target = static_cast<unsigned __int128>(src.cumulative[c][v]) * ref.total;
      while (u < 255 && static_cast<unsigned __int128>(ref.cumulative[c][u]) * src.total < target) ++u;
      lut[c][v] = static_cast<std::uint8_t>(u);
    }
  }
  return lut;
}

inline RgbImage histogram_match(const RgbImage& img, const HistogramRef& ref) {
  const auto lut = histogram_lookup(detail::histogram_of(img), ref);
  RgbImage out(img.height(), img.width());
  for (std::size_t p = 0; p < img.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c) out.at_pixel(p, c) = lut[c][img.at_pixel(p, c)];
  return out;
}

// --- Fourier domain adaptation ---------------------------------------------

/// Swaps the low-frequency amplitude inside the centred square window of
/// half-width floor(beta * min(H, W)) for the reference amplitude, keeping the
/// source phase. beta = 0 disables the swap. Returns the real part, unclamped.
inline FloatRgbImage fda_transfer_float(const RgbImage& img, const FdaRef& ref, double beta) {
  if (!(beta >= 0.0 && beta <= 0.5)) fail(ErrorCode::InvalidArgument, "FDA beta must lie in [0, 0.5]");
  const int h = img.height(), w = img.width();
  const int b = static_cast<int>(std::floor(beta * std::min(h, w)));
  const int cy = h / 2, cx = w / 2, ry = ref.height / 2, rx = ref.width / 2;
  const bool swap = beta > 0.0;
  if (swap) {
    const int y0 = std::max(0, cy - b) - cy + ry, y1 = std::min(h - 1, cy + b) - cy + ry;
    const int x0 = std::max(0, cx - b) - cx + rx, x1 = std::min(w - 1, cx + b) - cx + rx;
    if (y0 < 0 || x0 < 0 || y1 >= ref.height || x1 >= ref.width)
      fail(ErrorCode::DimensionMismatch, "reference spectrum " + std::to_string(ref.height) + "x" +
                                             std::to_string(ref.width) + " does not cover the FDA window");
  }
  FloatRgbImage out(h, w);
  for (int c = 0; c < 3; ++c) {
    auto spec = detail::channel_spectrum(img, c);
    if (swap) {
      for (int y = 0; y < h; ++y) {
        const int sy = static_cast<int>(detail::shifted_index(y, h));
        if (std::abs(sy - cy) > b) continue;
        for (int x = 0; x < w; ++x) {
          const int sx = static_cast<int>(detail::shifted_index(x, w));
          if (std::abs(sx - cx) > b) continue;
          auto& f = spec[static_cast<std::size_t>(y) * w + x];
          const double amp =
              ref.amplitude[c][static_cast<std::size_t>(sy - cy + ry) * ref.width + (sx - cx + rx)];
          const double mag = std::abs(f);
          f = mag > 0.0 ? f * (amp / mag) : std::complex<double>(amp, 0.0);
        }
      }
    }
    fft2d(spec, h, w, true);
    const double norm = 1.0 / (static_cast<double>(h) * w);
    for (std::size_t p = 0; p < spec.size(); ++p) out.at_pixel(p, c) = spec[p].real() * norm;
  }
  return out;
}

inline RgbImage fda_transfer(const RgbImage& img, const FdaRef& ref, double beta) {
  return quantize(fda_transfer_float(img, ref, beta));
}

inline RgbImage fda_transfer(const RgbImage& img, const FdaRef& ref) { return fda_transfer(img, ref, ref.beta); }

/// Dispatches on the reference kind.
inline RgbImage normalize(const RgbImage& img, const ReferenceTarget& ref, const NormalizeOptions& opt = {}) {
  return std::visit(
      [&](const auto& r) -> RgbImage {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, ReinhardRef>) return reinhard_normalize(img, r);
        else if constexpr (std::is_same_v<R, MacenkoRef>) return macenko_normalize(img, r, opt.separation);
        else if constexpr (std::is_same_v<R, HistogramRef>) return histogram_match(img, r);
        else return fda_transfer(img, r);
      },
      ref);
}

}  // namespace stainkit
