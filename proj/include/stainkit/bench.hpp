#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "stainkit/augment.hpp"
#include "stainkit/file_io.hpp"
#include "stainkit/normalize.hpp"
#include "stainkit/synthetic.hpp"

namespace stainkit::bench {

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m = {"hm", "fda", "reinhard", "macenko", "jitter", "randstainna", "sca"};
  return m;
}

struct BenchOptions {
  std::vector<std::string> methods;
  int size = 256;
  std::size_t count = 1000;
  std::size_t warmup = 10;
  std::uint64_t seed = 0;
  /// Images used to fit the SCA and RandStainNA profiles (untimed).
  std::size_t fit_images = 16;
};

struct BenchRow {
  std::string method;
  double seconds = 0.0;
  double images_per_second = 0.0;
};

using Method = std::function<RgbImage(const RgbImage&, std::size_t)>;

/// Builds the timed callable for one method. Reference images and profile
/// fitting images are drawn from corpus indices past the timed range.
inline Method make_method(const std::string& name, const BenchOptions& opt) {
  const std::size_t setup_base = opt.count + opt.warmup + 1;
  auto setup_image = [&](std::size_t k) { return synthetic::corpus_image(opt.seed, setup_base + k, opt.size); };

  if (name == "hm") {
    auto ref = std::get<HistogramRef>(make_reference(setup_image(0), NormMethod::histogram));
    return [ref](const RgbImage& img, std::size_t) { return histogram_match(img, ref); };
  }
  if (name == "fda") {
    auto ref = std::get<FdaRef>(make_reference(setup_image(0), NormMethod::fda));
    return [ref](const RgbImage& img, std::size_t) { return fda_transfer(img, ref); };
  }
  if (name == "reinhard") {
    auto ref = std::get<ReinhardRef>(make_reference(setup_image(0), NormMethod::reinhard));
    return [ref](const RgbImage& img, std::size_t) { return reinhard_normalize(img, ref); };
  }
  if (name == "macenko") {
    auto ref = std::get<MacenkoRef>(make_reference(setup_image(0), NormMethod::macenko));
    return [ref](const RgbImage& img, std::size_t) { return macenko_normalize(img, ref); };
  }
  if (name == "jitter") {
    const std::uint64_t seed = opt.seed;
    return [seed](const RgbImage& img, std::size_t i) {
      Rng rng(derive_seed(seed, i, 1));
      return stain_jitter(img, JitterParams{}, rng);
    };
  }
  if (name == "randstainna" || name == "sca") {
    std::vector<RgbImage> fit;
    for (std::size_t k = 0; k < opt.fit_images; ++k) fit.push_back(setup_image(1 + k));
    const std::uint64_t seed = opt.seed;
    if (name == "randstainna") {
      auto lp = fit_lab_profile(fit);
      return [lp, seed](const RgbImage& img, std::size_t i) {
        Rng rng(derive_seed(seed, i, 2));
        return randstainna_augment(img, lp, rng);
      };
    }
    std::vector<ImageStainStats> stats;
    for (const auto& img : fit) stats.push_back(extract_image_stats(img));
    auto sampler = std::make_shared<ProfileSampler>(fit_profile(stats));
    return [sampler, seed](const RgbImage& img, std::size_t i) {
      Rng rng(derive_seed(seed, i, 3));
      return sca_augment(img, *sampler, rng);
    };
  }
  fail(ErrorCode::InvalidArgument, "unknown benchmark method '" + name + "'");
}

/// Single-threaded wall-clock timing. Each corpus image is generated once
/// (untimed) and passed through every method in turn.
inline std::vector<BenchRow> run(const BenchOptions& opt) {
  if (opt.methods.empty()) fail(ErrorCode::InvalidArgument, "no benchmark methods requested");
  std::vector<Method> methods;
  for (const auto& m : opt.methods) methods.push_back(make_method(m, opt));
  std::vector<double> seconds(methods.size(), 0.0);
  volatile std::size_t sink = 0;
  for (std::size_t i = 0; i < opt.warmup + opt.count; ++i) {
    const RgbImage img = synthetic::corpus_image(opt.seed, i, opt.size);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const auto t0 = std::chrono::steady_clock::now();
      RgbImage out = methods[m](img, i);
      const auto t1 = std::chrono::steady_clock::now();
      sink = sink + out.data()[0];
      if (i >= opt.warmup) seconds[m] += std::chrono::duration<double>(t1 - t0).count();
    }
  }
  std::vector<BenchRow> rows;
  for (std::size_t m = 0; m < methods.size(); ++m)
    rows.push_back({opt.methods[m], seconds[m], seconds[m] > 0 ? static_cast<double>(opt.count) / seconds[m] : 0.0});
  return rows;
}

inline std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      auto pos = line.find(':');
      if (pos != std::string::npos) return line.substr(line.find_first_not_of(' ', pos + 1));
    }
  }
  return "unknown";
}

inline std::string to_csv(const std::vector<BenchRow>& rows, const BenchOptions& opt) {
  std::ostringstream out;
  out << "# cpu: " << cpu_model() << "; threads: 1; images: " << opt.count << "; size: " << opt.size << "x"
      << opt.size << "\n";
  out << "method,seconds,images_per_second\n";
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& r : rows) out << r.method << "," << r.seconds << "," << r.images_per_second << "\n";
  return out.str();
}

}  // namespace stainkit::bench
