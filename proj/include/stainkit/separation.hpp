#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "stainkit/numeric.hpp"
#include "stainkit/od.hpp"

namespace stainkit {

constexpr std::size_t kMinTissuePixels = 100;
constexpr double kDefaultAnglePercentile = 1.0;
constexpr double kMaxConditionNumber = 1e8;
constexpr double kMinStainAngleDeg = 1.0;

/// 3x3 matrix whose columns are unit optical-density colour vectors, one per stain.
class StainMatrix {
 public:
  /// Validates unit-norm columns (1e-9), finiteness and condition number < 1e8.
  explicit StainMatrix(const Eigen::Matrix3d& m) : m_(m) {
    if (!m_.allFinite()) fail(ErrorCode::SingularMatrix, "stain matrix has non-finite entries");
    for (int j = 0; j < 3; ++j) {
      if (std::abs(m_.col(j).norm() - 1.0) > 1e-9)
        fail(ErrorCode::InvalidArgument, "stain matrix column " + std::to_string(j) + " is not unit norm");
    }
    if (!(condition_number(m_) < kMaxConditionNumber))
      fail(ErrorCode::SingularMatrix, "stain matrix is not invertible (condition number >= 1e8)");
  }

  /// Normalises each column, then validates.
  static StainMatrix from_unnormalized(Eigen::Matrix3d m) {
    for (int j = 0; j < 3; ++j) {
      const double n = m.col(j).norm();
      if (!(n > 0.0) || !std::isfinite(n))
        fail(ErrorCode::SingularMatrix, "stain matrix column " + std::to_string(j) + " has zero norm");
      m.col(j) /= n;
    }
    return StainMatrix(m);
  }

  static StainMatrix identity() { return StainMatrix(Eigen::Matrix3d::Identity()); }

  /// Row-major 9-vector.
  std::array<double, 9> flatten() const {
    std::array<double, 9> out{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out[r * 3 + c] = m_(r, c);
    return out;
  }

  const Eigen::Matrix3d& matrix() const noexcept { return m_; }
  Eigen::Vector3d column(int j) const { return m_.col(j); }
  double operator()(int r, int c) const { return m_(r, c); }

  static double condition_number(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m);
    const auto& s = svd.singularValues();
    return s(2) > 0.0 ? s(0) / s(2) : std::numeric_limits<double>::infinity();
  }

 private:
  Eigen::Matrix3d m_;
};

/// Angle between two direction vectors in degrees.
inline double angle_between_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

/// Per-pixel stain concentrations, 3 x N (column p = pixel p in row-major order).
struct ConcentrationMap {
  int height = 0;
  int width = 0;
  Eigen::Matrix3Xd values;

  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(values.cols()); }

  /// Interleaved 3-plane view, suitable for PFM export.
  Image<double, 3> to_image() const {
    std::vector<double> data(values.data(), values.data() + values.size());
    return Image<double, 3>(height, width, std::move(data));
  }
};

struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

/// Which pixels the concentration statistics are computed over.
enum class StatsDomain { all, tissue };

constexpr std::string_view to_string(StatsDomain d) { return d == StatsDomain::all ? "all" : "tissue"; }

inline StatsDomain parse_stats_domain(std::string_view s) {
  if (s == "all") return StatsDomain::all;
  if (s == "tissue") return StatsDomain::tissue;
  fail(ErrorCode::InvalidArgument, "unknown stats domain '" + std::string(s) + "' (expected all|tissue)");
}

namespace detail {

template <typename Tag>
Eigen::Map<const Eigen::Matrix3Xd> as_matrix(const Image<double, 3, Tag>& img) {
  return {img.data().data(), 3, static_cast<Eigen::Index>(img.pixel_count())};
}

// Percentile of atan2(t2, t1) over all columns. When every t1 is positive the
// ratio t2/t1 orders the angles identically, so the selection runs on ratios
// and only the two bracketing ranks are mapped back through atan.
inline std::array<double, 2> extreme_angles(const Eigen::Matrix2Xd& t, double pct) {
  const Eigen::Index n = t.cols();
  std::vector<double> key(static_cast<std::size_t>(n));
  const bool ratio_ok = (t.row(0).array() > 0.0).all();
  for (Eigen::Index i = 0; i < n; ++i)
    key[i] = ratio_ok ? t(1, i) / t(0, i) : std::atan2(t(1, i), t(0, i));

  auto pick = [&](double p) {
    const double rank = p / 100.0 * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const double frac = rank - static_cast<double>(lo);
    std::nth_element(key.begin(), key.begin() + lo, key.end());
    double a = key[lo];
    double b = a;
    if (frac > 0.0 && lo + 1 < key.size()) b = *std::min_element(key.begin() + lo + 1, key.end());
    if (ratio_ok) {
      a = std::atan(a);
      b = std::atan(b);
    }
    return a + frac * (b - a);
  };
  return {pick(pct), pick(100.0 - pct)};
}

}  // namespace detail

/// Macenko stain-vector estimation over the masked pixels.
///
/// The tissue OD tuples are projected onto the plane of their two leading
/// singular vectors; the angle_percentile and (100 - angle_percentile)
/// percentile directions in that plane become stains 1 and 2, and stain 3 is
/// their normalised cross product. Columns are sign-fixed to a non-negative
/// entry sum and ordered so stain 1 has the larger red OD (ties: larger green).
inline StainMatrix estimate_stain_matrix(const OdImage& od, const TissueMask& mask,
                                         double angle_percentile = kDefaultAnglePercentile) {
  require_same_shape(od, mask, "estimate_stain_matrix");
  if (!(angle_percentile > 0.0 && angle_percentile < 50.0))
    fail(ErrorCode::InvalidArgument, "angle percentile must lie in (0, 50)");

  const std::size_t n = count_set(mask);
  if (n < kMinTissuePixels)
    fail(ErrorCode::InsufficientTissue,
         std::to_string(n) + " tissue pixels, at least " + std::to_string(kMinTissuePixels) + " required");

  Eigen::Matrix3Xd x(3, static_cast<Eigen::Index>(n));
  for (std::size_t p = 0, k = 0; p < od.pixel_count(); ++p) {
    if (!mask.at_pixel(p)) continue;
    x.col(static_cast<Eigen::Index>(k++)) << od.at_pixel(p, 0), od.at_pixel(p, 1), od.at_pixel(p, 2);
  }

  // Right singular vectors of the n x 3 tuple matrix = eigenvectors of X X^T.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(x * x.transpose());
  Eigen::Matrix<double, 3, 2> plane;
  plane.col(0) = eig.eigenvectors().col(2);
  plane.col(1) = eig.eigenvectors().col(1);
  for (int j = 0; j < 2; ++j)
    if (plane.col(j).sum() < 0.0) plane.col(j) = -plane.col(j);

  const Eigen::Matrix2Xd t = plane.transpose() * x;
  const auto [phi_lo, phi_hi] = detail::extreme_angles(t, angle_percentile);
  if (std::abs(phi_hi - phi_lo) * 180.0 / std::numbers::pi < kMinStainAngleDeg)
    fail(ErrorCode::DegenerateStains, "extreme stain directions are within 1 degree of each other");

  auto direction = [&](double phi) -> Eigen::Vector3d {
    Eigen::Vector3d v = plane.col(0) * std::cos(phi) + plane.col(1) * std::sin(phi);
    if (v.sum() < 0.0) v = -v;
    return v.normalized();
  };
  Eigen::Vector3d a = direction(phi_lo);
  Eigen::Vector3d b = direction(phi_hi);
  if (b(0) > a(0) || (b(0) == a(0) && b(1) > a(1))) std::swap(a, b);

  Eigen::Vector3d third = a.cross(b).normalized();
  if (third.sum() < 0.0) third = -third;

  Eigen::Matrix3d m;
  m << a, b, third;
  return StainMatrix(m);
}

/// S = C^-1 * OD per pixel (LU solve), negatives clamped to 0.
template <typename Tag>
ConcentrationMap compute_concentrations(const Image<double, 3, Tag>& od, const StainMatrix& c) {
  Eigen::PartialPivLU<Eigen::Matrix3d> lu(c.matrix());
  ConcentrationMap s;
  s.height = od.height();
  s.width = od.width();
  s.values = lu.solve(detail::as_matrix(od)).cwiseMax(0.0);
  if (!s.values.allFinite()) fail(ErrorCode::SingularMatrix, "concentration solve produced non-finite values");
  return s;
}

/// C * S clamped to >= 0.
inline OdImage recompose(const StainMatrix& c, const ConcentrationMap& s) {
  OdImage od(s.height, s.width);
  Eigen::Map<Eigen::Matrix3Xd>(od.data().data(), 3, s.values.cols()) = (c.matrix() * s.values).cwiseMax(0.0);
  return od;
}

/// 255 * base^(-(C * S)) with no clamping: the float pipeline output before quantisation.
inline FloatRgbImage recompose_float_rgb(const StainMatrix& c, const ConcentrationMap& s, OdBase base) {
  FloatRgbImage out(s.height, s.width);
  Eigen::Map<Eigen::Matrix3Xd> dst(out.data().data(), 3, s.values.cols());
  dst = c.matrix() * s.values;
  for (double& v : out.data()) v = 255.0 * od_exp(-v, base);
  return out;
}

/// Per-stain mean and population standard deviation over the masked pixels.
inline ChannelStats concentration_stats(const ConcentrationMap& s, const Mask& mask) {
  if (mask.height() != s.height || mask.width() != s.width)
    fail(ErrorCode::ShapeMismatch, "concentration_stats: mask does not match concentration map");
  std::size_t n = 0;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (Eigen::Index p = 0; p < s.values.cols(); ++p) {
    if (!mask.at_pixel(static_cast<std::size_t>(p))) continue;
    sum += s.values.col(p);
    ++n;
  }
  if (n == 0) fail(ErrorCode::EmptyMask, "no pixels selected for concentration statistics");
  const Eigen::Vector3d mean = sum / static_cast<double>(n);
  // Corrected two-pass: the residual sum r absorbs the rounding in the mean.
  Eigen::Vector3d r = Eigen::Vector3d::Zero(), ss = Eigen::Vector3d::Zero();
  for (Eigen::Index p = 0; p < s.values.cols(); ++p) {
    if (!mask.at_pixel(static_cast<std::size_t>(p))) continue;
    const Eigen::Vector3d d = s.values.col(p) - mean;
    r += d;
    ss += d.cwiseAbs2();
  }
  const double nd = static_cast<double>(n);
  ChannelStats out;
  for (int j = 0; j < 3; ++j) {
    out.mean[j] = mean(j) + r(j) / nd;
    out.std[j] = std::sqrt(std::max(0.0, ss(j) - r(j) * r(j) / nd) / nd);
  }
  return out;
}

struct SeparationConfig {
  OdBase od_base = OdBase::ten;
  /// Tissue threshold in base-10 OD units; rescaled when od_base is e.
  double tissue_threshold = kDefaultTissueThreshold;
  double angle_percentile = kDefaultAnglePercentile;
  StatsDomain stats_domain = StatsDomain::tissue;

  double native_threshold() const {
    return od_base == OdBase::ten ? tissue_threshold : tissue_threshold * std::numbers::ln10;
  }
};

/// Everything extracted from one image by colour deconvolution.
struct Separation {
  OdImage od;
  TissueMask tissue;
  StainMatrix stains = StainMatrix::identity();
  ConcentrationMap concentrations;
  ChannelStats stats;
};

inline Separation separate(const RgbImage& img, const SeparationConfig& cfg = {}) {
  Separation out;
  out.od = rgb_to_od(img, cfg.od_base);
  out.tissue = tissue_mask(out.od, cfg.native_threshold());
  out.stains = estimate_stain_matrix(out.od, out.tissue, cfg.angle_percentile);
  out.concentrations = compute_concentrations(out.od, out.stains);
  out.stats = cfg.stats_domain == StatsDomain::tissue
                  ? concentration_stats(out.concentrations, out.tissue)
                  : concentration_stats(out.concentrations, full_mask(img.height(), img.width()));
  return out;
}

}  // namespace stainkit
