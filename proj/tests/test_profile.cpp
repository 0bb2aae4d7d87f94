#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

using namespace stainkit;

namespace {

ImageStainStats random_stats(Rng& rng) {
  ImageStainStats s;
  for (double& v : s.c) v = rng.uniform(0.0, 1.0);
  for (double& v : s.a) v = rng.uniform(0.0, 1.0);
  for (double& v : s.d) v = rng.uniform(0.0, 0.5);
  return s;
}

/// Profile centred on an H&E-like matrix with small correlated spread.
StainProfile known_profile() {
  StainProfile p;
  Eigen::Matrix3d c;
  c.col(0) = Eigen::Vector3d(0.65, 0.70, 0.29).normalized();
  c.col(1) = Eigen::Vector3d(0.07, 0.99, 0.11).normalized();
  c.col(2) = c.col(0).cross(c.col(1)).normalized();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) p.mean_c(r * 3 + k) = c(r, k);
  Eigen::Matrix<double, 9, 9> l = Eigen::Matrix<double, 9, 9>::Identity() * 1e-3;
  l(4, 1) = 5e-4;
  p.cov_c = l * l.transpose();
  p.mean_a = Eigen::Vector3d(0.6, 0.4, 0.05);
  Eigen::Matrix3d la;
  la << 0.1, 0, 0, 0.05, 0.08, 0, 0, 0.01, 0.02;
  p.cov_a = la * la.transpose();
  p.mean_d = Eigen::Vector3d(0.3, 0.2, 0.1);
  p.cov_d = Eigen::Vector3d(0.01, 0.005, 0.001).asDiagonal();
  p.n_images = 50;
  return p;
}

template <int Dim>
void expect_within_se(const std::vector<Eigen::Matrix<double, Dim, 1>>& draws, const Eigen::Matrix<double, Dim, 1>& mean,
                      const Eigen::Matrix<double, Dim, Dim>& cov, const char* what) {
  Eigen::Matrix<double, Dim, 1> avg = Eigen::Matrix<double, Dim, 1>::Zero();
  for (const auto& d : draws) avg += d;
  avg /= static_cast<double>(draws.size());
  for (int i = 0; i < Dim; ++i) {
    const double se = std::sqrt(cov(i, i) / static_cast<double>(draws.size()));
    EXPECT_LT(std::abs(avg(i) - mean(i)), 5.0 * se) << what << "[" << i << "]";
  }
}

void expect_profiles_near(const StainProfile& a, const StainProfile& b, double tol) {
  EXPECT_LT((a.mean_c - b.mean_c).cwiseAbs().maxCoeff(), tol);
  EXPECT_LT((a.cov_c - b.cov_c).cwiseAbs().maxCoeff(), tol);
  EXPECT_LT((a.mean_a - b.mean_a).cwiseAbs().maxCoeff(), tol);
  EXPECT_LT((a.cov_a - b.cov_a).cwiseAbs().maxCoeff(), tol);
  EXPECT_LT((a.mean_d - b.mean_d).cwiseAbs().maxCoeff(), tol);
  EXPECT_LT((a.cov_d - b.cov_d).cwiseAbs().maxCoeff(), tol);
  EXPECT_EQ(a.n_images, b.n_images);
}

}  // namespace

TEST(ExtractImageStats, MixedTwoStainImageMatchesForwardSynthesis) {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const auto truth = synthetic::random_two_stain_matrix(rng);
    const int h = 64, w = 64;
    Eigen::Matrix2Xd s0(2, h * w);
    for (Eigen::Index p = 0; p < s0.cols(); ++p) {
      const double kind = rng.uniform();
      s0(0, p) = kind < 0.7 ? rng.uniform(0.35, 1.0) : 0.0;
      s0(1, p) = kind > 0.3 ? rng.uniform(0.35, 1.0) : 0.0;
    }
    const RgbImage img = synthetic::compose(truth * s0, h, w);
    const Separation sep = separate(img);
    ASSERT_EQ(count_set(sep.tissue), static_cast<std::size_t>(h * w));
    const ImageStainStats st = to_image_stats(sep);

    EXPECT_LT(angle_between_deg(sep.stains.column(0), truth.col(0)), 2.0);
    EXPECT_LT(angle_between_deg(sep.stains.column(1), truth.col(1)), 2.0);
    for (int j = 0; j < 2; ++j) {
      const double mean = s0.row(j).mean();
      const double sd = std::sqrt((s0.row(j).array() - mean).square().mean());
      // Worst case over 50 such images was 0.6% (mean) and 1.0% (std); the
      // error comes from the percentile extremes tilting the recovered vectors.
      EXPECT_NEAR(st.a[j], mean, 0.02 * mean) << "trial " << trial << " stain " << j;
      EXPECT_NEAR(st.d[j], sd, 0.03 * sd) << "trial " << trial << " stain " << j;
    }
    EXPECT_LT(st.a[2], 0.02);
  }
}

TEST(ExtractImageStats, ConstantConcentrationsAreRankOne) {
  // Every pixel has the same OD tuple, so there is no second direction.
  Rng rng(32);
  const auto truth = synthetic::random_two_stain_matrix(rng);
  Eigen::Matrix2Xd s0(2, 32 * 32);
  s0.row(0).setConstant(0.6);
  s0.row(1).setConstant(0.3);
  try {
    extract_image_stats(synthetic::compose(truth * s0, 32, 32));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateStains);
  }
}

TEST(ExtractImageStats, WhiteImageHasInsufficientTissue) {
  try {
    extract_image_stats(RgbImage(32, 32, 255));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientTissue);
  }
}

TEST(ExtractImageStats, InvariantToHorizontalFlip) {
  for (std::size_t i = 0; i < 5; ++i) {
    const RgbImage img = synthetic::corpus_image(17, i, 96);
    const ImageStainStats a = extract_image_stats(img), b = extract_image_stats(flip_horizontal(img));
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(a.c[k], b.c[k], 1e-9);
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(a.a[k], b.a[k], 1e-9);
      EXPECT_NEAR(a.d[k], b.d[k], 1e-9);
    }
  }
}

TEST(FitProfile, IdenticalStatsGiveEpsilonCovariance) {
  Rng rng(1);
  const ImageStainStats s = random_stats(rng);
  const std::vector<ImageStainStats> v(5, s);
  const StainProfile p = fit_profile(v);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(p.mean_a(k), s.a[k]);
  for (int k = 0; k < 9; ++k) EXPECT_DOUBLE_EQ(p.mean_c(k), s.c[k]);
  EXPECT_LT((p.cov_c - Eigen::Matrix<double, 9, 9>::Identity() * 1e-8).cwiseAbs().maxCoeff(), 1e-20);
  EXPECT_LT((p.cov_a - Eigen::Matrix3d::Identity() * 1e-8).cwiseAbs().maxCoeff(), 1e-20);
  EXPECT_EQ(p.n_images, 5u);
}

TEST(FitProfile, TwoPointClosedForm) {
  ImageStainStats x, y;
  y.a = {2.0, 2.0, 2.0};
  const std::vector<ImageStainStats> v{x, y};
  const StainProfile p = fit_profile(v);
  EXPECT_LT((p.mean_a - Eigen::Vector3d::Ones()).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::Matrix3d expected = Eigen::Matrix3d::Constant(2.0) + Eigen::Matrix3d::Identity() * 1e-8;
  EXPECT_LT((p.cov_a - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitProfile, SingleImageHasZeroCovariancePlusEpsilon) {
  Rng rng(2);
  const std::vector<ImageStainStats> v{random_stats(rng)};
  const StainProfile p = fit_profile(v);
  EXPECT_EQ(p.cov_d, Eigen::Matrix3d::Identity() * 1e-8);
}

TEST(FitProfile, EmptyIsError) {
  try {
    fit_profile({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(FitProfile, RecoversGaussianMean) {
  const StainProfile truth = known_profile();
  const ProfileSampler sampler(truth);
  Rng rng(3);
  std::vector<ImageStainStats> stats;
  std::vector<Eigen::Vector3d> a_draws;
  for (int i = 0; i < 1000; ++i) {
    ImageStainStats s;
    const auto cs = sampler.sample_concentration_stats(rng);
    s.a = cs.a_prime;
    a_draws.push_back(Eigen::Vector3d(s.a[0], s.a[1], s.a[2]));
    stats.push_back(s);
  }
  const StainProfile p = fit_profile(stats);
  for (int i = 0; i < 3; ++i)
    EXPECT_LT(std::abs(p.mean_a(i) - truth.mean_a(i)), 5.0 * std::sqrt(truth.cov_a(i, i) / 1000.0));
  // Sample covariance of the same draws, computed directly.
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& d : a_draws) cov += (d - p.mean_a) * (d - p.mean_a).transpose();
  cov /= 999.0;
  EXPECT_LT((p.cov_a - cov - Eigen::Matrix3d::Identity() * 1e-8).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitProfile, PermutationInvariantAndMergeable) {
  Rng rng(4);
  std::vector<ImageStainStats> v;
  for (int i = 0; i < 40; ++i) v.push_back(random_stats(rng));
  const StainProfile p = fit_profile(v);

  std::vector<ImageStainStats> r(v.rbegin(), v.rend());
  expect_profiles_near(p, fit_profile(r), 1e-14);

  ProfileAccumulator left, right;
  for (int i = 0; i < 40; ++i) (i < 13 ? left : right).add(v[static_cast<std::size_t>(i)]);
  left.merge(right);
  expect_profiles_near(p, left.finish(), 1e-14);
}

TEST(FitProfile, CovariancesAreSymmetricPositiveDefinite) {
  Rng rng(5);
  std::vector<ImageStainStats> v;
  for (int i = 0; i < 4; ++i) v.push_back(random_stats(rng));  // fewer images than dimensions
  const StainProfile p = fit_profile(v);
  EXPECT_EQ(p.cov_c, p.cov_c.transpose());
  using Llt9 = Eigen::LLT<Eigen::Matrix<double, 9, 9>>;
  EXPECT_EQ(Llt9(p.cov_c).info(), Eigen::Success);
  EXPECT_EQ(Eigen::LLT<Eigen::Matrix3d>(p.cov_a).info(), Eigen::Success);
  EXPECT_EQ(Eigen::LLT<Eigen::Matrix3d>(p.cov_d).info(), Eigen::Success);
}

TEST(FitProfile, DiagonalKindDropsOffDiagonal) {
  Rng rng(6);
  std::vector<ImageStainStats> v;
  for (int i = 0; i < 10; ++i) v.push_back(random_stats(rng));
  const StainProfile full = fit_profile(v), diag = fit_profile(v, CovarianceKind::diagonal);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) EXPECT_EQ(diag.cov_c(i, j), i == j ? full.cov_c(i, i) : 0.0);
}

TEST(SampleStain, TinyCovarianceSamplesTheMean) {
  Rng rng(7);
  std::vector<ImageStainStats> v(3, extract_image_stats(synthetic::corpus_image(1, 0, 96)));
  const StainProfile p = fit_profile(v);
  for (int k = 0; k < 20; ++k) {
    const SampledStain s = sample_stain(p, rng);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(s.c_prime(r, c), p.mean_c(r * 3 + c), 1e-3);
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR(s.a_prime[j], p.mean_a(j), 1e-3);
      EXPECT_NEAR(s.d_prime[j], std::max(p.mean_d(j), 1e-6), 1e-3);
    }
  }
}

TEST(SampleStain, SeedDeterminism) {
  const StainProfile p = known_profile();
  Rng a(42), b(42);
  for (int k = 0; k < 10; ++k) {
    const SampledStain x = sample_stain(p, a), y = sample_stain(p, b);
    EXPECT_EQ(x.c_prime.matrix(), y.c_prime.matrix());
    EXPECT_EQ(x.a_prime, y.a_prime);
    EXPECT_EQ(x.d_prime, y.d_prime);
  }
}

TEST(SampleStain, ColumnsAreUnitAndStdsFloored) {
  StainProfile p = known_profile();
  p.mean_d = Eigen::Vector3d(0.0, -1.0, 0.01);
  const ProfileSampler sampler(p);
  Rng rng(8);
  for (int k = 0; k < 200; ++k) {
    const SampledStain s = sampler.sample(rng);
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR(s.c_prime.column(j).norm(), 1.0, 1e-9);
      EXPECT_GE(s.d_prime[j], 1e-6);
    }
    EXPECT_EQ(s.d_prime[1], 1e-6);
  }
}

TEST(SampleStain, MonteCarloMeanWithinFiveStandardErrors) {
  const StainProfile p = known_profile();
  const ProfileSampler sampler(p);
  Rng rng(9);
  std::vector<Eigen::Matrix<double, 9, 1>> c;
  std::vector<Eigen::Vector3d> a, d;
  for (int k = 0; k < 10000; ++k) {
    const SampledStain s = sampler.sample(rng);
    Eigen::Matrix<double, 9, 1> flat;
    for (int r = 0; r < 3; ++r)
      for (int q = 0; q < 3; ++q) flat(r * 3 + q) = s.c_prime(r, q);
    c.push_back(flat);
    a.emplace_back(s.a_prime[0], s.a_prime[1], s.a_prime[2]);
    d.emplace_back(s.d_prime[0], s.d_prime[1], s.d_prime[2]);
  }
  // Column renormalisation biases C by O(variance) = 1e-6, well under one standard error.
  expect_within_se<9>(c, p.mean_c, p.cov_c, "c");
  expect_within_se<3>(a, p.mean_a, p.cov_a, "a");
  expect_within_se<3>(d, p.mean_d, p.cov_d, "d");
}

TEST(SampleStain, SingularMeanExhaustsResamples) {
  StainProfile p;
  p.mean_c << 1, 1, 0, 0, 0, 1, 0, 0, 0;  // columns 1 and 2 identical
  p.cov_c = Eigen::Matrix<double, 9, 9>::Identity() * 1e-30;
  Rng rng(10);
  try {
    sample_stain(p, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateSample);
  }
}

TEST(ProfileJson, SaveLoadSaveIsByteStable) {
  const auto dir = fixtures::fresh_dir("profile_json");
  const StainProfile p = fixtures::corpus_profile(3, 6);
  save_profile(p, dir / "a.json");
  const StainProfile q = load_profile(dir / "a.json");
  EXPECT_EQ(p, q);
  save_profile(q, dir / "b.json");
  EXPECT_EQ(read_file(dir / "a.json"), read_file(dir / "b.json"));
}

TEST(ProfileJson, PreservesConventions) {
  StainProfile p = known_profile();
  p.od_base = OdBase::e;
  p.stats_domain = StatsDomain::all;
  EXPECT_EQ(profile_from_json(profile_to_json(p)), p);
}

TEST(ProfileJson, MissingCovarianceRowNamesTheField) {
  auto j = nlohmann::json::parse(profile_to_json(known_profile()));
  auto& cov = j["cov_a"];
  cov.erase(cov.begin() + 6, cov.end());
  try {
    profile_from_json(j.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Schema);
    EXPECT_NE(std::string(e.what()).find("cov_a"), std::string::npos);
  }
}

TEST(ProfileJson, ZeroImagesIsValidationError) {
  auto j = nlohmann::json::parse(profile_to_json(known_profile()));
  j["n_images"] = 0;
  try {
    profile_from_json(j.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Validation);
  }
}

TEST(ProfileJson, RejectsBadFiles) {
  const std::string good = profile_to_json(known_profile());
  auto version = nlohmann::json::parse(good);
  version["schema_version"] = 2;
  EXPECT_THROW(profile_from_json(version.dump()), Error);

  auto asym = nlohmann::json::parse(good);
  asym["cov_d"][1] = 0.5;
  EXPECT_THROW(profile_from_json(asym.dump()), Error);

  auto missing = nlohmann::json::parse(good);
  missing.erase("mean_d");
  EXPECT_THROW(profile_from_json(missing.dump()), Error);

  EXPECT_THROW(profile_from_json("{not json"), Error);
  EXPECT_THROW(profile_from_json("[]"), Error);
}
