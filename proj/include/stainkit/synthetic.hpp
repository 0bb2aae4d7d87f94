#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "stainkit/random.hpp"
#include "stainkit/separation.hpp"

namespace stainkit::synthetic {

// Seeded, stain-plausible test imagery. Images are synthesised by the
// Beer-Lambert model, RGB = 255 * 10^(-C * S), from known stain vectors and
// concentration fields, then quantised to 8 bits.

/// Random H&E-like pair of unit stain vectors (haematoxylin first), perturbed
/// around the Ruifrok-Johnston vectors and at least 15 degrees apart.
inline Eigen::Matrix<double, 3, 2> random_two_stain_matrix(Rng& rng) {
  const Eigen::Vector3d h0(0.65, 0.70, 0.29), e0(0.07, 0.99, 0.11);
  for (;;) {
    Eigen::Matrix<double, 3, 2> m;
    for (int r = 0; r < 3; ++r) {
      m(r, 0) = h0(r) + rng.uniform(-0.15, 0.15);
      m(r, 1) = e0(r) + rng.uniform(-0.15, 0.15);
    }
    if ((m.array() <= 0.02).any()) continue;
    m.col(0).normalize();
    m.col(1).normalize();
    if (angle_between_deg(m.col(0), m.col(1)) < 15.0) continue;
    return m;
  }
}

/// Smooth random field in [0, 1] from a few low-frequency sinusoids.
class SmoothField {
 public:
  SmoothField(Rng& rng, int height, int width, int terms = 4) {
    for (int i = 0; i < terms; ++i) {
      const double freq = rng.uniform(1.0, 4.0) * 2.0 * std::numbers::pi;
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      waves_.push_back({freq * std::cos(theta) / width, freq * std::sin(theta) / height,
                        rng.uniform(0.0, 2.0 * std::numbers::pi)});
    }
  }

  double operator()(int y, int x) const {
    double s = 0.0;
    for (const auto& w : waves_) s += std::sin(w.kx * x + w.ky * y + w.phase);
    return 0.5 + 0.5 * s / static_cast<double>(waves_.size());
  }

 private:
  struct Wave {
    double kx, ky, phase;
  };
  std::vector<Wave> waves_;
};

/// Quantises OD = C * S to 8-bit RGB.
inline RgbImage compose(const Eigen::Matrix3Xd& stains_times_conc, int height, int width) {
  RgbImage img(height, width);
  for (Eigen::Index p = 0; p < stains_times_conc.cols(); ++p)
    for (int c = 0; c < 3; ++c)
      img.at_pixel(static_cast<std::size_t>(p), c) =
          quantize_channel(255.0 * std::pow(10.0, -stains_times_conc(c, p)));
  return img;
}

/// Two-stain image: about a fifth of the pixels carry only stain 1, a fifth
/// only stain 2, the rest a random mixture. Concentrations lie in [0.2, 1.2].
inline RgbImage two_stain_image(const Eigen::Matrix<double, 3, 2>& stains, Rng& rng, int height = 64, int width = 64) {
  Eigen::Matrix2Xd s(2, static_cast<Eigen::Index>(height) * width);
  for (Eigen::Index p = 0; p < s.cols(); ++p) {
    const double kind = rng.uniform();
    const double k1 = rng.uniform(0.2, 1.2), k2 = rng.uniform(0.2, 1.2);
    s(0, p) = kind < 0.2 ? k1 : (kind < 0.4 ? 0.0 : k1);
    s(1, p) = kind < 0.2 ? 0.0 : (kind < 0.4 ? k2 : k2);
  }
  return compose(stains * s, height, width);
}

/// H&E-like tissue patch: white background gaps, eosin-stained stroma with a
/// smooth density field, and haematoxylin nuclei as soft discs.
inline RgbImage he_patch(std::uint64_t seed, int height = 256, int width = 256) {
  Rng rng(seed);
  const Eigen::Matrix<double, 3, 2> stains = random_two_stain_matrix(rng);
  const SmoothField tissue(rng, height, width), eosin(rng, height, width);
  const double background_cut = rng.uniform(0.1, 0.3);
  const double eosin_gain = rng.uniform(0.25, 0.7);
  const double haem_gain = rng.uniform(0.5, 1.2);

  struct Nucleus {
    double y, x, r;
  };
  std::vector<Nucleus> nuclei;
  const int count = static_cast<int>(height * width / 2000.0 * rng.uniform(0.6, 1.4));
  for (int i = 0; i < count; ++i)
    nuclei.push_back({rng.uniform(0, height), rng.uniform(0, width), rng.uniform(3.0, 8.0)});

  std::vector<double> haem(static_cast<std::size_t>(height) * width, 0.0);
  for (const auto& n : nuclei) {
    const int y0 = std::max(0, static_cast<int>(n.y - n.r - 1)), y1 = std::min(height - 1, static_cast<int>(n.y + n.r + 1));
    const int x0 = std::max(0, static_cast<int>(n.x - n.r - 1)), x1 = std::min(width - 1, static_cast<int>(n.x + n.r + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = std::hypot(y - n.y, x - n.x) / n.r;
        if (d < 1.0) haem[static_cast<std::size_t>(y) * width + x] = std::max(haem[y * width + x], 1.0 - d * d * 0.5);
      }
  }

  Eigen::Matrix2Xd s(2, static_cast<Eigen::Index>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * width + x;
      const bool in_tissue = tissue(y, x) > background_cut;
      const double noise = 1.0 + 0.08 * rng.normal();
      double h = haem[p] * haem_gain + 0.05 * eosin(y, x);
      double e = in_tissue ? eosin_gain * (0.3 + 0.7 * eosin(y, x)) : 0.02 * eosin(y, x);
      if (!in_tissue && haem[p] == 0.0) h = 0.01;
      s(0, static_cast<Eigen::Index>(p)) = std::max(0.0, h * noise);
      s(1, static_cast<Eigen::Index>(p)) = std::max(0.0, e * (1.0 + 0.08 * rng.normal()));
    }
  return compose(stains * s, height, width);
}

/// Deterministic corpus member i of a seeded corpus.
inline RgbImage corpus_image(std::uint64_t corpus_seed, std::size_t index, int size = 256) {
  return he_patch(derive_seed(corpus_seed, index, 0), size, size);
}

}  // namespace stainkit::synthetic
