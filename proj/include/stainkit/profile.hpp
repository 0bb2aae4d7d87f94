#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "stainkit/file_io.hpp"
#include "stainkit/random.hpp"
#include "stainkit/separation.hpp"

namespace stainkit {

constexpr double kCovarianceEpsilon = 1e-8;
constexpr double kMinSampledStd = 1e-6;
constexpr int kMaxColourResamples = 8;
constexpr int kProfileSchemaVersion = 1;

/// Per-image statistics: stain matrix (row-major), concentration means and stds.
struct ImageStainStats {
  std::array<double, 9> c{};
  std::array<double, 3> a{};
  std::array<double, 3> d{};
};

inline ImageStainStats to_image_stats(const Separation& sep) {
  return {sep.stains.flatten(), sep.stats.mean, sep.stats.std};
}

inline ImageStainStats extract_image_stats(const RgbImage& img, const SeparationConfig& cfg = {}) {
  return to_image_stats(separate(img, cfg));
}

/// Mean and centred second moments, mergeable across partial reductions
/// (Chan et al. pairwise update).
template <int Dim>
class MomentAccumulator {
 public:
  using Vector = Eigen::Matrix<double, Dim, 1>;
  using Matrix = Eigen::Matrix<double, Dim, Dim>;

  void add(const Vector& x) {
    ++n_;
    const Vector delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_).transpose();
  }

  void merge(const MomentAccumulator& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(n_), nb = static_cast<double>(other.n_);
    const Vector delta = other.mean_ - mean_;
    const double n = na + nb;
    m2_ += other.m2_ + delta * delta.transpose() * (na * nb / n);
    mean_ += delta * (nb / n);
    n_ += other.n_;
  }

  std::size_t count() const noexcept { return n_; }
  const Vector& mean() const noexcept { return mean_; }

  /// Unbiased covariance (divisor n - 1), zero for a single sample, symmetrised.
  Matrix covariance() const {
    if (n_ < 2) return Matrix::Zero();
    Matrix c = m2_ / static_cast<double>(n_ - 1);
    return (c + c.transpose()) * 0.5;
  }

 private:
  std::size_t n_ = 0;
  Vector mean_ = Vector::Zero();
  Matrix m2_ = Matrix::Zero();
};

/// Fitted Gaussians over stain matrices (9-D), concentration means and stds (3-D each).
struct StainProfile {
  Eigen::Matrix<double, 9, 1> mean_c = Eigen::Matrix<double, 9, 1>::Zero();
  Eigen::Matrix<double, 9, 9> cov_c = Eigen::Matrix<double, 9, 9>::Identity() * kCovarianceEpsilon;
  Eigen::Vector3d mean_a = Eigen::Vector3d::Zero();
  Eigen::Matrix3d cov_a = Eigen::Matrix3d::Identity() * kCovarianceEpsilon;
  Eigen::Vector3d mean_d = Eigen::Vector3d::Zero();
  Eigen::Matrix3d cov_d = Eigen::Matrix3d::Identity() * kCovarianceEpsilon;
  std::size_t n_images = 1;
  OdBase od_base = OdBase::ten;
  StatsDomain stats_domain = StatsDomain::tissue;

  friend bool operator==(const StainProfile&, const StainProfile&) = default;
};

enum class CovarianceKind { full, diagonal };

class ProfileAccumulator {
 public:
  void add(const ImageStainStats& s) {
    c_.add(Eigen::Map<const Eigen::Matrix<double, 9, 1>>(s.c.data()));
    a_.add(Eigen::Map<const Eigen::Vector3d>(s.a.data()));
    d_.add(Eigen::Map<const Eigen::Vector3d>(s.d.data()));
  }

  void merge(const ProfileAccumulator& other) {
    c_.merge(other.c_);
    a_.merge(other.a_);
    d_.merge(other.d_);
  }

  std::size_t count() const noexcept { return c_.count(); }

  StainProfile finish(CovarianceKind kind = CovarianceKind::full, OdBase base = OdBase::ten,
                      StatsDomain domain = StatsDomain::tissue) const {
    if (count() == 0) fail(ErrorCode::EmptyDataset, "no image statistics to fit");
    auto regularise = [kind](auto cov) {
      if (kind == CovarianceKind::diagonal) cov = decltype(cov)(cov.diagonal().asDiagonal());
      cov.diagonal().array() += kCovarianceEpsilon;
      return cov;
    };
    StainProfile p;
    p.mean_c = c_.mean();
    p.cov_c = regularise(c_.covariance());
    p.mean_a = a_.mean();
    p.cov_a = regularise(a_.covariance());
    p.mean_d = d_.mean();
    p.cov_d = regularise(d_.covariance());
    p.n_images = count();
    p.od_base = base;
    p.stats_domain = domain;
    return p;
  }

 private:
  MomentAccumulator<9> c_;
  MomentAccumulator<3> a_;
  MomentAccumulator<3> d_;
};

/// Sample means, (n-1) covariances (zero for n = 1), plus 1e-8 * I.
inline StainProfile fit_profile(std::span<const ImageStainStats> stats,
                                CovarianceKind kind = CovarianceKind::full,
                                OdBase base = OdBase::ten, StatsDomain domain = StatsDomain::tissue) {
  if (stats.empty()) fail(ErrorCode::EmptyDataset, "cannot fit a profile to zero images");
  ProfileAccumulator acc;
  for (const auto& s : stats) acc.add(s);
  return acc.finish(kind, base, domain);
}

struct SampledStain {
  StainMatrix c_prime = StainMatrix::identity();
  std::array<double, 3> a_prime{};
  std::array<double, 3> d_prime{};
};

struct SampledConcentrationStats {
  std::array<double, 3> a_prime{};
  std::array<double, 3> d_prime{};
};

namespace detail {

template <int Dim>
Eigen::Matrix<double, Dim, Dim> cholesky_factor(const Eigen::Matrix<double, Dim, Dim>& cov, const char* name) {
  Eigen::LLT<Eigen::Matrix<double, Dim, Dim>> llt(cov);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::Validation, std::string(name) + " is not positive definite");
  return llt.matrixL();
}

template <int Dim>
Eigen::Matrix<double, Dim, 1> draw_gaussian(const Eigen::Matrix<double, Dim, 1>& mean,
                                            const Eigen::Matrix<double, Dim, Dim>& chol, Rng& rng) {
  Eigen::Matrix<double, Dim, 1> z;
  for (int i = 0; i < Dim; ++i) z(i) = rng.normal();
  return mean + chol * z;
}

}  // namespace detail

/// Cholesky factors of a profile, computed once and reused for every draw.
class ProfileSampler {
 public:
  explicit ProfileSampler(const StainProfile& profile)
      : profile_(profile),
        chol_c_(detail::cholesky_factor<9>(profile.cov_c, "cov_c")),
        chol_a_(detail::cholesky_factor<3>(profile.cov_a, "cov_a")),
        chol_d_(detail::cholesky_factor<3>(profile.cov_d, "cov_d")) {}

  const StainProfile& profile() const noexcept { return profile_; }

  /// Draws a colour matrix, renormalising columns; retries non-invertible draws up to 8 times.
  StainMatrix sample_colour_matrix(Rng& rng) const {
    for (int attempt = 0; attempt < kMaxColourResamples; ++attempt) {
      const Eigen::Matrix<double, 9, 1> v = detail::draw_gaussian<9>(profile_.mean_c, chol_c_, rng);
      Eigen::Matrix3d m;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = v(r * 3 + c);
      try {
        return StainMatrix::from_unnormalized(m);
      } catch (const Error&) {
        continue;
      }
    }
    fail(ErrorCode::DegenerateSample,
         std::to_string(kMaxColourResamples) + " consecutive non-invertible colour matrix draws");
  }

  /// Draws concentration means then stds; stds are clamped to >= 1e-6.
  SampledConcentrationStats sample_concentration_stats(Rng& rng) const {
    SampledConcentrationStats out;
    const Eigen::Vector3d a = detail::draw_gaussian<3>(profile_.mean_a, chol_a_, rng);
    const Eigen::Vector3d d = detail::draw_gaussian<3>(profile_.mean_d, chol_d_, rng);
    for (int j = 0; j < 3; ++j) {
      out.a_prime[j] = a(j);
      out.d_prime[j] = std::max(d(j), kMinSampledStd);
    }
    return out;
  }

  /// Draw order: colour matrix, then means, then stds.
  SampledStain sample(Rng& rng) const {
    SampledStain s;
    s.c_prime = sample_colour_matrix(rng);
    auto cs = sample_concentration_stats(rng);
    s.a_prime = cs.a_prime;
    s.d_prime = cs.d_prime;
    return s;
  }

 private:
  StainProfile profile_;
  Eigen::Matrix<double, 9, 9> chol_c_;
  Eigen::Matrix3d chol_a_;
  Eigen::Matrix3d chol_d_;
};

inline SampledStain sample_stain(const StainProfile& profile, Rng& rng) { return ProfileSampler(profile).sample(rng); }

// --- JSON persistence -------------------------------------------------------

namespace detail {

template <typename Derived>
nlohmann::json to_json_array(const Eigen::MatrixBase<Derived>& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
  return arr;
}

template <typename Mat>
Mat from_json_array(const nlohmann::json& j, const char* field) {
  if (!j.contains(field)) fail(ErrorCode::Schema, std::string("missing field '") + field + "'");
  const auto& arr = j.at(field);
  Mat m;
  const auto expected = static_cast<std::size_t>(m.rows() * m.cols());
  if (!arr.is_array() || arr.size() != expected)
    fail(ErrorCode::Schema, std::string("field '") + field + "' must be an array of " + std::to_string(expected) +
                                " numbers");
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto& v = arr[static_cast<std::size_t>(r * m.cols() + c)];
      if (!v.is_number()) fail(ErrorCode::Schema, std::string("field '") + field + "' holds a non-number");
      m(r, c) = v.get<double>();
      if (!std::isfinite(m(r, c))) fail(ErrorCode::Validation, std::string("field '") + field + "' is not finite");
    }
  }
  return m;
}

template <typename Mat>
void validate_covariance(const Mat& cov, const char* field) {
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    fail(ErrorCode::Validation, std::string(field) + " is not symmetric");
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) fail(ErrorCode::Validation, std::string(field) + " is not positive definite");
}

inline const nlohmann::json& require(const nlohmann::json& j, const char* field) {
  if (!j.contains(field)) fail(ErrorCode::Schema, std::string("missing field '") + field + "'");
  return j.at(field);
}

}  // namespace detail

/// Decimal doubles are emitted in shortest round-trip form, so save/load is bit-exact.
inline std::string profile_to_json(const StainProfile& p) {
  nlohmann::ordered_json j;
  j["schema_version"] = kProfileSchemaVersion;
  j["n_images"] = p.n_images;
  j["od_base"] = std::string(to_string(p.od_base));
  j["stats_domain"] = std::string(to_string(p.stats_domain));
  j["mean_c"] = detail::to_json_array(p.mean_c);
  j["cov_c"] = detail::to_json_array(p.cov_c);
  j["mean_a"] = detail::to_json_array(p.mean_a);
  j["cov_a"] = detail::to_json_array(p.cov_a);
  j["mean_d"] = detail::to_json_array(p.mean_d);
  j["cov_d"] = detail::to_json_array(p.cov_d);
  return j.dump(2) + "\n";
}

inline StainProfile profile_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Schema, std::string("malformed profile JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::Schema, "profile must be a JSON object");
  const auto& version = detail::require(j, "schema_version");
  if (!version.is_number_integer() || version.get<int>() != kProfileSchemaVersion)
    fail(ErrorCode::Schema, "unsupported schema_version (expected " + std::to_string(kProfileSchemaVersion) + ")");

  StainProfile p;
  const auto& n = detail::require(j, "n_images");
  if (!n.is_number_integer()) fail(ErrorCode::Schema, "field 'n_images' must be an integer");
  if (n.get<long long>() < 1) fail(ErrorCode::Validation, "n_images must be >= 1");
  p.n_images = n.get<std::size_t>();
  const auto& base = detail::require(j, "od_base");
  const auto& domain = detail::require(j, "stats_domain");
  if (!base.is_string() || !domain.is_string()) fail(ErrorCode::Schema, "od_base and stats_domain must be strings");
  try {
    p.od_base = parse_od_base(base.get<std::string>());
    p.stats_domain = parse_stats_domain(domain.get<std::string>());
  } catch (const Error& e) {
    fail(ErrorCode::Schema, e.what());
  }
  p.mean_c = detail::from_json_array<Eigen::Matrix<double, 9, 1>>(j, "mean_c");
  p.cov_c = detail::from_json_array<Eigen::Matrix<double, 9, 9>>(j, "cov_c");
  p.mean_a = detail::from_json_array<Eigen::Vector3d>(j, "mean_a");
  p.cov_a = detail::from_json_array<Eigen::Matrix3d>(j, "cov_a");
  p.mean_d = detail::from_json_array<Eigen::Vector3d>(j, "mean_d");
  p.cov_d = detail::from_json_array<Eigen::Matrix3d>(j, "cov_d");
  detail::validate_covariance(p.cov_c, "cov_c");
  detail::validate_covariance(p.cov_a, "cov_a");
  detail::validate_covariance(p.cov_d, "cov_d");
  return p;
}

inline void save_profile(const StainProfile& p, const std::filesystem::path& path) {
  write_text_atomic(path, profile_to_json(p));
}

inline StainProfile load_profile(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return profile_from_json(std::string(bytes.begin(), bytes.end()));
}

}  // namespace stainkit
