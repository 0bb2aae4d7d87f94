#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace stainkit;

namespace {

/// Sampled stain equal to the image's own separation.
SampledStain own_stain(const Separation& sep) {
  SampledStain s;
  s.c_prime = sep.stains;
  s.a_prime = sep.stats.mean;
  s.d_prime = sep.stats.std;
  return s;
}

/// 36-bin hue histogram over pixels with visible saturation.
std::array<int, 36> hue_histogram(const RgbImage& img) {
  std::array<int, 36> h{};
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    const double r = img.at_pixel(p, 0), g = img.at_pixel(p, 1), b = img.at_pixel(p, 2);
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    if (mx - mn < 10.0) continue;
    double hue;
    if (mx == r)
      hue = std::fmod((g - b) / (mx - mn) + 6.0, 6.0);
    else if (mx == g)
      hue = (b - r) / (mx - mn) + 2.0;
    else
      hue = (r - g) / (mx - mn) + 4.0;
    ++h[static_cast<std::size_t>(std::min(35.0, hue * 6.0))];
  }
  return h;
}

ConcentrationMap random_concentrations(Rng& rng, int n) {
  ConcentrationMap s;
  s.height = 1;
  s.width = n;
  s.values.resize(3, n);
  for (Eigen::Index i = 0; i < s.values.size(); ++i) s.values.data()[i] = rng.uniform(0.0, 2.0);
  return s;
}

const StainProfile& shared_profile() {
  static const StainProfile p = fixtures::corpus_profile(404, 12);
  return p;
}

}  // namespace

TEST(TransformConcentrations, OwnStatsIsIdentityInBothDirections) {
  Rng rng(1);
  const ConcentrationMap s = random_concentrations(rng, 200);
  const ChannelStats st = concentration_stats(s, full_mask(1, 200));
  for (TransferDirection dir : {TransferDirection::printed, TransferDirection::conventional}) {
    const ConcentrationMap t = transform_concentrations(s, st, st.mean, st.std, dir);
    EXPECT_LT((t.values - s.values).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TransformConcentrations, PrintedAndConventionalForms) {
  ConcentrationMap s;
  s.height = 1;
  s.width = 1;
  s.values = Eigen::Matrix3Xd::Constant(3, 1, 1.0);
  ChannelStats src;
  src.mean = {0.5, 0.5, 0.5};
  src.std = {0.2, 0.2, 0.2};
  const std::array<double, 3> a{0.7, 0.7, 0.7}, d{0.4, 0.4, 0.4};
  // printed: (0.2 / 0.4) * (1 - 0.7) + 0.5 = 0.65
  EXPECT_NEAR(transform_concentrations(s, src, a, d, TransferDirection::printed).values(0, 0), 0.65, 1e-15);
  // conventional: (0.4 / 0.2) * (1 - 0.5) + 0.7 = 1.7
  EXPECT_NEAR(transform_concentrations(s, src, a, d, TransferDirection::conventional).values(0, 0), 1.7, 1e-15);
}

TEST(TransformConcentrations, ClampsAtZero) {
  ConcentrationMap s;
  s.height = 1;
  s.width = 1;
  s.values = Eigen::Matrix3Xd::Zero(3, 1);
  ChannelStats src;
  src.mean = {1.0, 1.0, 1.0};
  src.std = {1.0, 1.0, 1.0};
  const ConcentrationMap t = transform_concentrations(s, src, {5.0, 5.0, 5.0}, {1.0, 1.0, 1.0}, TransferDirection::printed);
  EXPECT_EQ(t.values.minCoeff(), 0.0);
}

TEST(Sca, OwnStatsReproducesInput) {
  for (std::size_t i = 0; i < 8; ++i) {
    const RgbImage img = synthetic::corpus_image(55, i, 96);
    const Separation sep = separate(img);
    for (TransferDirection dir : {TransferDirection::printed, TransferDirection::conventional}) {
      AugmentConfig cfg;
      cfg.direction = dir;
      const RgbImage out = sca_transform(img, own_stain(sep), cfg);
      EXPECT_GE(fixtures::fraction_within(img, out, sep.tissue, 2), 0.95) << "image " << i;
    }
  }
}

TEST(Sca, SeedDeterminism) {
  const RgbImage img = synthetic::corpus_image(56, 0, 96);
  Rng a(9), b(9);
  EXPECT_EQ(sca_augment(img, shared_profile(), a), sca_augment(img, shared_profile(), b));
}

TEST(Sca, ConsecutiveAugmentationsAreDistinct) {
  const RgbImage img = synthetic::corpus_image(57, 0, 128);
  const ProfileSampler sampler(shared_profile());
  Rng rng(2023);
  std::vector<RgbImage> outs;
  for (int k = 0; k < 4; ++k) outs.push_back(sca_augment(img, sampler, rng));
  for (int i = 0; i < 4; ++i) {
    const auto hi = hue_histogram(outs[static_cast<std::size_t>(i)]);
    EXPECT_GT(std::accumulate(hi.begin(), hi.end(), 0), 0);
    for (int j = i + 1; j < 4; ++j) EXPECT_NE(hi, hue_histogram(outs[static_cast<std::size_t>(j)])) << i << " vs " << j;
  }
}

TEST(Sca, RefusesMismatchedConventions) {
  const RgbImage img = synthetic::corpus_image(58, 0, 64);
  StainProfile p = shared_profile();
  p.od_base = OdBase::e;
  Rng rng(1);
  try {
    sca_augment(img, p, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConventionMismatch);
  }
  AugmentConfig cfg;
  cfg.separation.stats_domain = StatsDomain::all;
  EXPECT_THROW(sca_augment(img, shared_profile(), rng, cfg), Error);
}

TEST(Sca, PreservesShapeAcrossSeeds) {
  const RgbImage img = synthetic::corpus_image(59, 0, 48);
  const ProfileSampler sampler(shared_profile());
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const RgbImage out = sca_augment(img, sampler, rng);
    EXPECT_TRUE(out.same_shape(img));
  }
}

TEST(SclPair, ConcentrationsAreShared) {
  const ProfileSampler sampler(shared_profile());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const RgbImage img = synthetic::corpus_image(60, seed, 64);
    Rng rng(seed);
    const SclPairFloat pair = scl_pair_float(img, sampler, rng);
    const ConcentrationMap sa = compute_concentrations(float_rgb_to_od(pair.image_a), pair.c_a);
    const ConcentrationMap sb = compute_concentrations(float_rgb_to_od(pair.image_b), pair.c_b);
    EXPECT_LT((sa.values - sb.values).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((sa.values - pair.concentrations.values).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_GT((pair.c_a.matrix() - pair.c_b.matrix()).norm(), 0.0);
  }
}

TEST(SclPair, DrawOrderIsStatsThenTwoMatrices) {
  const ProfileSampler sampler(shared_profile());
  const RgbImage img = synthetic::corpus_image(61, 0, 64);
  Rng rng(77), replay(77);
  const SclPairFloat pair = scl_pair_float(img, sampler, rng);

  const SampledConcentrationStats stats = sampler.sample_concentration_stats(replay);
  SampledStain a, b;
  a.a_prime = b.a_prime = stats.a_prime;
  a.d_prime = b.d_prime = stats.d_prime;
  a.c_prime = sampler.sample_colour_matrix(replay);
  b.c_prime = sampler.sample_colour_matrix(replay);
  const Separation sep = separate(img);
  EXPECT_EQ(pair.image_a, sca_transform_float(sep, a, {}));
  EXPECT_EQ(pair.image_b, sca_transform_float(sep, b, {}));
}

TEST(SclPair, SeedDeterminism) {
  const RgbImage img = synthetic::corpus_image(62, 0, 64);
  Rng a(5), b(5);
  const SclPair x = scl_pair(img, shared_profile(), a), y = scl_pair(img, shared_profile(), b);
  EXPECT_EQ(x.image_a, y.image_a);
  EXPECT_EQ(x.image_b, y.image_b);
}

TEST(StainJitter, ZeroParamsIsIdentity) {
  for (std::size_t i = 0; i < 5; ++i) {
    const RgbImage img = synthetic::corpus_image(63, i, 96);
    const Separation sep = separate(img);
    Rng rng(1);
    const RgbImage out = stain_jitter(img, JitterParams{0.0, 0.0}, rng);
    EXPECT_GE(fixtures::fraction_within(img, out, sep.tissue, 2), 0.95) << "image " << i;
  }
}

TEST(StainJitter, ZeroParamsIsIdentityForFixedMatrixInItsOwnSpan) {
  // The fixed matrix only reproduces images it can represent with
  // non-negative concentrations; other images lose the clamped part.
  Rng rng(6);
  Eigen::Matrix3Xd s(3, 48 * 48);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.uniform(0.0, 0.8);
  const RgbImage img = synthetic::compose(reference_hed_matrix().matrix() * s, 48, 48);
  const RgbImage out = stain_jitter(img, JitterParams{0.0, 0.0}, rng, JitterMatrix::fixed);
  EXPECT_LE(fixtures::max_abs_diff(img, out), 1);
}

TEST(StainJitter, DrawsStayInRange) {
  Rng rng(2);
  const JitterParams p{0.25, 0.05};
  for (int k = 0; k < 1000; ++k) {
    const JitterDraw d = draw_jitter(p, rng);
    for (int j = 0; j < 3; ++j) {
      EXPECT_GE(d.scale[j], 0.75);
      EXPECT_LE(d.scale[j], 1.25);
      EXPECT_GE(d.shift[j], -0.05);
      EXPECT_LE(d.shift[j], 0.05);
    }
  }
  EXPECT_THROW(draw_jitter(JitterParams{-0.1, 0.0}, rng), Error);
}

TEST(StainJitter, SeedDeterminismAndDrawOrder) {
  const RgbImage img = synthetic::corpus_image(64, 0, 64);
  Rng a(3), b(3), c(3);
  const RgbImage x = stain_jitter(img, {}, a);
  EXPECT_EQ(x, stain_jitter(img, {}, b));
  JitterDraw d;
  for (auto& s : d.scale) s = c.uniform(0.75, 1.25);
  for (auto& s : d.shift) s = c.uniform(-0.05, 0.05);
  EXPECT_EQ(x, quantize(stain_jitter_float(img, d)));
}

TEST(StainJitter, FixedMatrixHandlesImagesWithoutTissue) {
  Rng rng(4);
  const RgbImage white(16, 16, 255);
  EXPECT_EQ(stain_jitter(white, {}, rng, JitterMatrix::fixed).height(), 16);
  EXPECT_THROW(stain_jitter(white, {}, rng, JitterMatrix::per_image), Error);
}

TEST(RandStainNA, OwnStatsIsIdentity) {
  for (std::size_t i = 0; i < 5; ++i) {
    const RgbImage img = synthetic::corpus_image(65, i, 64);
    const RgbImage out = quantize(randstainna_float(img, lab_stats(rgb_to_lab(img))));
    // Pixels at 0 are read as 1 by the log transform, so compare from 1 upwards.
    int worst = 0;
    for (std::size_t k = 0; k < img.data().size(); ++k)
      worst = std::max(worst, std::abs(std::max<int>(img.data()[k], 1) - int(out.data()[k])));
    EXPECT_LE(worst, 1);
  }
}

TEST(RandStainNA, ZeroTargetStdGivesConstantImage) {
  const RgbImage img = synthetic::corpus_image(66, 0, 48);
  const LabImage lab = rgb_to_lab(img);
  LabStats target = lab_stats(lab);
  target.std = {0.0, 0.0, 0.0};
  const LabImage moved = lab_transfer(lab, lab_stats(lab), target);
  for (std::size_t p = 0; p < moved.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(moved.at_pixel(p, c), target.mean[c]);
  const RgbImage out = quantize(randstainna_float(img, target));
  for (std::size_t p = 1; p < out.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at_pixel(p, c), out.at_pixel(0, c));
}

TEST(RandStainNA, SeedDeterminismAndDrawOrder) {
  std::vector<RgbImage> imgs;
  for (std::size_t i = 0; i < 4; ++i) imgs.push_back(synthetic::corpus_image(67, i, 48));
  const LabProfile lp = fit_lab_profile(imgs);
  Rng a(8), b(8), c(8);
  const RgbImage x = randstainna_augment(imgs[0], lp, a);
  EXPECT_EQ(x, randstainna_augment(imgs[0], lp, b));
  LabStats t;
  for (int k = 0; k < 3; ++k) t.mean[k] = lp.channel_mean[k].mean + lp.channel_mean[k].std * c.normal();
  for (int k = 0; k < 3; ++k) t.std[k] = std::max(0.0, lp.channel_std[k].mean + lp.channel_std[k].std * c.normal());
  EXPECT_EQ(x, quantize(randstainna_float(imgs[0], t)));
}

TEST(LabProfile, IdenticalImagesHaveOnlyRegularisation) {
  const RgbImage img = synthetic::corpus_image(68, 0, 32);
  const std::vector<RgbImage> v(3, img);
  const LabProfile lp = fit_lab_profile(v);
  const LabStats st = lab_stats(rgb_to_lab(img));
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(lp.channel_mean[c].mean, st.mean[c]);
    EXPECT_NEAR(lp.channel_mean[c].std, 1e-4, 1e-12);
    EXPECT_NEAR(lp.channel_std[c].std, 1e-4, 1e-12);
  }
}

TEST(LabProfile, TwoPointClosedFormAndPermutationInvariance) {
  LabStats x, y;
  y.mean = {2.0, 2.0, 2.0};
  y.std = {4.0, 4.0, 4.0};
  const std::vector<LabStats> v{x, y}, r{y, x};
  const LabProfile lp = fit_lab_profile_from_stats(v), lr = fit_lab_profile_from_stats(r);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(lp.channel_mean[c].mean, 1.0);
    EXPECT_NEAR(lp.channel_mean[c].std, std::sqrt(2.0 + 1e-8), 1e-12);
    EXPECT_NEAR(lp.channel_std[c].std, std::sqrt(8.0 + 1e-8), 1e-12);
    EXPECT_EQ(lp.channel_mean[c].mean, lr.channel_mean[c].mean);
    EXPECT_EQ(lp.channel_std[c].std, lr.channel_std[c].std);
  }
  EXPECT_THROW(fit_lab_profile_from_stats({}), Error);
}

TEST(LabProfile, JsonRoundTripIsByteStable) {
  std::vector<RgbImage> imgs;
  for (std::size_t i = 0; i < 3; ++i) imgs.push_back(synthetic::corpus_image(69, i, 32));
  const LabProfile lp = fit_lab_profile(imgs);
  const std::string text = lab_profile_to_json(lp);
  EXPECT_EQ(lab_profile_to_json(lab_profile_from_json(text)), text);
  EXPECT_THROW(lab_profile_from_json(profile_to_json(shared_profile())), Error);
}
