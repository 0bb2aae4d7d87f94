#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "stainkit/lab.hpp"
#include "stainkit/profile.hpp"

namespace stainkit {

/// Which way the concentration re-standardisation runs.
///  printed:      s' = (d_x / d_x') * (s - a_x') + a_x
///  conventional: s' = (d_x' / d_x) * (s - a_x) + a_x'
enum class TransferDirection { printed, conventional };

inline TransferDirection parse_transfer_direction(std::string_view s) {
  if (s == "printed") return TransferDirection::printed;
  if (s == "conventional") return TransferDirection::conventional;
  fail(ErrorCode::InvalidArgument, "unknown direction '" + std::string(s) + "' (expected printed|conventional)");
}

struct AugmentConfig {
  SeparationConfig separation;
  TransferDirection direction = TransferDirection::printed;
};

inline void check_conventions(const StainProfile& profile, const AugmentConfig& cfg) {
  if (profile.od_base != cfg.separation.od_base || profile.stats_domain != cfg.separation.stats_domain) {
    fail(ErrorCode::ConventionMismatch,
         "profile was fitted with od_base=" + std::string(to_string(profile.od_base)) +
             ", stats_domain=" + std::string(to_string(profile.stats_domain)) + " but runtime uses od_base=" +
             std::string(to_string(cfg.separation.od_base)) +
             ", stats_domain=" + std::string(to_string(cfg.separation.stats_domain)));
  }
}

/// Re-standardises each concentration channel towards the sampled statistics, then clamps at 0.
inline ConcentrationMap transform_concentrations(const ConcentrationMap& s, const ChannelStats& source,
                                                 const std::array<double, 3>& a_prime,
                                                 const std::array<double, 3>& d_prime, TransferDirection direction) {
  ConcentrationMap out;
  out.height = s.height;
  out.width = s.width;
  out.values.resize(3, s.values.cols());
  for (int j = 0; j < 3; ++j) {
    double scale = 0, shift = 0;
    if (direction == TransferDirection::printed) {
      scale = source.std[j] / std::max(d_prime[j], kMinSampledStd);
      shift = a_prime[j];
      out.values.row(j) = ((s.values.row(j).array() - shift) * scale + source.mean[j]).cwiseMax(0.0).matrix();
    } else {
      scale = d_prime[j] / std::max(source.std[j], 1e-8);
      shift = source.mean[j];
      out.values.row(j) = ((s.values.row(j).array() - shift) * scale + a_prime[j]).cwiseMax(0.0).matrix();
    }
  }
  return out;
}

// --- Stain consistency augmentation ---------------------------------------

/// Float pipeline: replaces the image's stain matrix with target.c_prime and
/// re-standardises its concentrations with target's statistics.
inline FloatRgbImage sca_transform_float(const Separation& sep, const SampledStain& target, const AugmentConfig& cfg) {
  const ConcentrationMap s =
      transform_concentrations(sep.concentrations, sep.stats, target.a_prime, target.d_prime, cfg.direction);
  return recompose_float_rgb(target.c_prime, s, cfg.separation.od_base);
}

inline RgbImage sca_transform(const RgbImage& img, const SampledStain& target, const AugmentConfig& cfg = {}) {
  return quantize(sca_transform_float(separate(img, cfg.separation), target, cfg));
}

inline FloatRgbImage sca_augment_float(const RgbImage& img, const ProfileSampler& sampler, Rng& rng,
                                       const AugmentConfig& cfg = {}) {
  check_conventions(sampler.profile(), cfg);
  const Separation sep = separate(img, cfg.separation);
  return sca_transform_float(sep, sampler.sample(rng), cfg);
}

inline RgbImage sca_augment(const RgbImage& img, const ProfileSampler& sampler, Rng& rng,
                            const AugmentConfig& cfg = {}) {
  return quantize(sca_augment_float(img, sampler, rng, cfg));
}

inline RgbImage sca_augment(const RgbImage& img, const StainProfile& profile, Rng& rng,
                            const AugmentConfig& cfg = {}) {
  return sca_augment(img, ProfileSampler(profile), rng, cfg);
}

// --- Stain consistency learning pairs -------------------------------------

struct SclPair {
  RgbImage image_a;
  RgbImage image_b;
};

/// Pre-quantisation pair with the shared concentrations and both colour matrices.
struct SclPairFloat {
  FloatRgbImage image_a;
  FloatRgbImage image_b;
  StainMatrix c_a = StainMatrix::identity();
  StainMatrix c_b = StainMatrix::identity();
  ConcentrationMap concentrations;
};

/// Draw order: means, stds, colour matrix a, colour matrix b.
inline SclPairFloat scl_pair_float(const RgbImage& img, const ProfileSampler& sampler, Rng& rng,
                                   const AugmentConfig& cfg = {}) {
  check_conventions(sampler.profile(), cfg);
  const Separation sep = separate(img, cfg.separation);
  const SampledConcentrationStats stats = sampler.sample_concentration_stats(rng);
  StainMatrix c_a = sampler.sample_colour_matrix(rng);
  StainMatrix c_b = sampler.sample_colour_matrix(rng);
  SclPairFloat out;
  out.c_a = c_a;
  out.c_b = c_b;
  out.concentrations =
      transform_concentrations(sep.concentrations, sep.stats, stats.a_prime, stats.d_prime, cfg.direction);
  out.image_a = recompose_float_rgb(c_a, out.concentrations, cfg.separation.od_base);
  out.image_b = recompose_float_rgb(c_b, out.concentrations, cfg.separation.od_base);
  return out;
}

inline SclPair scl_pair(const RgbImage& img, const ProfileSampler& sampler, Rng& rng, const AugmentConfig& cfg = {}) {
  auto f = scl_pair_float(img, sampler, rng, cfg);
  return {quantize(f.image_a), quantize(f.image_b)};
}

inline SclPair scl_pair(const RgbImage& img, const StainProfile& profile, Rng& rng, const AugmentConfig& cfg = {}) {
  return scl_pair(img, ProfileSampler(profile), rng, cfg);
}

// --- Stain jitter ------------------------------------------------------------

struct JitterParams {
  double alpha = 0.25;
  double beta = 0.05;
};

enum class JitterMatrix { per_image, fixed };

inline JitterMatrix parse_jitter_matrix(std::string_view s) {
  if (s == "per-image") return JitterMatrix::per_image;
  if (s == "fixed") return JitterMatrix::fixed;
  fail(ErrorCode::InvalidArgument, "unknown jitter matrix '" + std::string(s) + "' (expected per-image|fixed)");
}

/// Haematoxylin, eosin and DAB colour vectors (Ruifrok and Johnston), unit columns.
inline const StainMatrix& reference_hed_matrix() {
  static const StainMatrix m = [] {
    Eigen::Matrix3d c;
    c << 0.65, 0.07, 0.27,
         0.70, 0.99, 0.57,
         0.29, 0.11, 0.78;
    return StainMatrix::from_unnormalized(c);
  }();
  return m;
}

struct JitterDraw {
  std::array<double, 3> scale{};
  std::array<double, 3> shift{};
};

/// Three scales from U(1-alpha, 1+alpha), then three shifts from U(-beta, beta).
inline JitterDraw draw_jitter(const JitterParams& p, Rng& rng) {
  if (!(p.alpha >= 0.0) || !(p.beta >= 0.0)) fail(ErrorCode::InvalidArgument, "jitter alpha and beta must be >= 0");
  JitterDraw d;
  for (auto& s : d.scale) s = rng.uniform(1.0 - p.alpha, 1.0 + p.alpha);
  for (auto& s : d.shift) s = rng.uniform(-p.beta, p.beta);
  return d;
}

inline FloatRgbImage stain_jitter_float(const RgbImage& img, const JitterDraw& draw,
                                        JitterMatrix matrix = JitterMatrix::per_image,
                                        const SeparationConfig& cfg = {}) {
  OdImage od = rgb_to_od(img, cfg.od_base);
  StainMatrix c = matrix == JitterMatrix::fixed
                      ? reference_hed_matrix()
                      : estimate_stain_matrix(od, tissue_mask(od, cfg.native_threshold()), cfg.angle_percentile);
  ConcentrationMap s = compute_concentrations(od, c);
  for (int j = 0; j < 3; ++j)
    s.values.row(j) = (s.values.row(j).array() * draw.scale[j] + draw.shift[j]).cwiseMax(0.0).matrix();
  return recompose_float_rgb(c, s, cfg.od_base);
}

inline RgbImage stain_jitter(const RgbImage& img, const JitterParams& p, Rng& rng,
                             JitterMatrix matrix = JitterMatrix::per_image, const SeparationConfig& cfg = {}) {
  return quantize(stain_jitter_float(img, draw_jitter(p, rng), matrix, cfg));
}

// --- RandStainNA (l-alpha-beta variant) ---------------------------------------

struct ScalarGaussian {
  double mean = 0.0;
  double std = 0.0;
};

/// Per channel: distribution of image-level means and of image-level stds.
struct LabProfile {
  std::array<ScalarGaussian, 3> channel_mean{};
  std::array<ScalarGaussian, 3> channel_std{};
  std::size_t n_images = 1;
};

/// Scalar Gaussians with (n-1) divisor; stored std = sqrt(variance + 1e-8).
inline LabProfile fit_lab_profile_from_stats(std::span<const LabStats> stats) {
  if (stats.empty()) fail(ErrorCode::EmptyDataset, "cannot fit a Lab profile to zero images");
  LabProfile lp;
  lp.n_images = stats.size();
  auto fit = [&](auto get) {
    double sum = 0.0;
    for (const auto& s : stats) sum += get(s);
    const double mean = sum / static_cast<double>(stats.size());
    double ss = 0.0;
    for (const auto& s : stats) ss += (get(s) - mean) * (get(s) - mean);
    const double var = stats.size() > 1 ? ss / static_cast<double>(stats.size() - 1) : 0.0;
    return ScalarGaussian{mean, std::sqrt(var + kCovarianceEpsilon)};
  };
  for (int c = 0; c < 3; ++c) {
    lp.channel_mean[c] = fit([c](const LabStats& s) { return s.mean[c]; });
    lp.channel_std[c] = fit([c](const LabStats& s) { return s.std[c]; });
  }
  return lp;
}

inline LabProfile fit_lab_profile(std::span<const RgbImage> images) {
  std::vector<LabStats> stats;
  stats.reserve(images.size());
  for (const auto& img : images) stats.push_back(lab_stats(rgb_to_lab(img)));
  return fit_lab_profile_from_stats(stats);
}

/// Target means for all channels first, then target stds (clamped to >= 0).
inline LabStats sample_lab_target(const LabProfile& lp, Rng& rng) {
  LabStats t;
  for (int c = 0; c < 3; ++c) t.mean[c] = lp.channel_mean[c].mean + lp.channel_mean[c].std * rng.normal();
  for (int c = 0; c < 3; ++c) t.std[c] = std::max(0.0, lp.channel_std[c].mean + lp.channel_std[c].std * rng.normal());
  return t;
}

inline FloatRgbImage randstainna_float(const RgbImage& img, const LabStats& target) {
  const LabImage lab = rgb_to_lab(img);
  return lab_to_float_rgb(lab_transfer(lab, lab_stats(lab), target));
}

inline RgbImage randstainna_augment(const RgbImage& img, const LabProfile& lp, Rng& rng) {
  return quantize(randstainna_float(img, sample_lab_target(lp, rng)));
}

constexpr std::string_view kLabProfileKind = "lab";

inline std::string lab_profile_to_json(const LabProfile& lp) {
  nlohmann::ordered_json j;
  j["schema_version"] = kProfileSchemaVersion;
  j["kind"] = kLabProfileKind;
  j["n_images"] = lp.n_images;
  auto arr = [](const std::array<ScalarGaussian, 3>& g, bool want_mean) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : g) a.push_back(want_mean ? x.mean : x.std);
    return a;
  };
  j["mean_of_means"] = arr(lp.channel_mean, true);
  j["std_of_means"] = arr(lp.channel_mean, false);
  j["mean_of_stds"] = arr(lp.channel_std, true);
  j["std_of_stds"] = arr(lp.channel_std, false);
  return j.dump(2) + "\n";
}

inline LabProfile lab_profile_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Schema, std::string("malformed Lab profile JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("kind") || j["kind"] != kLabProfileKind)
    fail(ErrorCode::Schema, "not a Lab profile (field 'kind' must be \"lab\")");
  const auto& version = detail::require(j, "schema_version");
  if (!version.is_number_integer() || version.get<int>() != kProfileSchemaVersion)
    fail(ErrorCode::Schema, "unsupported schema_version");
  LabProfile lp;
  const auto& n = detail::require(j, "n_images");
  if (!n.is_number_integer() || n.get<long long>() < 1) fail(ErrorCode::Validation, "n_images must be >= 1");
  lp.n_images = n.get<std::size_t>();
  auto read = [&](const char* field, std::array<ScalarGaussian, 3>& g, bool is_mean) {
    const auto v = detail::from_json_array<Eigen::Vector3d>(j, field);
    for (int c = 0; c < 3; ++c) {
      if (!is_mean && v(c) < 0.0) fail(ErrorCode::Validation, std::string(field) + " must be >= 0");
      (is_mean ? g[c].mean : g[c].std) = v(c);
    }
  };
  read("mean_of_means", lp.channel_mean, true);
  read("std_of_means", lp.channel_mean, false);
  read("mean_of_stds", lp.channel_std, true);
  read("std_of_stds", lp.channel_std, false);
  return lp;
}

inline void save_lab_profile(const LabProfile& lp, const std::filesystem::path& path) {
  write_text_atomic(path, lab_profile_to_json(lp));
}

inline LabProfile load_lab_profile(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return lab_profile_from_json(std::string(bytes.begin(), bytes.end()));
}

}  // namespace stainkit
