// stainkit command-line front end.
//
// Exit codes: 0 success, 1 domain error, 2 I/O error, 64 usage error.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "stainkit/bench.hpp"
#include "stainkit/stainkit.hpp"

namespace fs = std::filesystem;
using namespace stainkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitIo = 2;
constexpr int kExitUsage = 64;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(const Error& e) { return e.is_io() || e.code() == ErrorCode::Schema ? kExitIo : kExitDomain; }

/// PNG files in `dir`, sorted lexicographically by file name.
std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(ErrorCode::Io, "'" + dir.string() + "' is not a readable directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(entry.path());
  }
  if (ec) fail(ErrorCode::Io, "cannot list '" + dir.string() + "'");
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return files;
}

void ensure_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) fail(ErrorCode::Io, "cannot create output directory '" + dir.string() + "'");
}

void refuse_overwrite(const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  for (const auto& out : outputs) {
    std::error_code ec;
    for (const auto& in : inputs) {
      if (fs::exists(out, ec) && fs::equivalent(in, out, ec))
        throw UsageError("output '" + out.string() + "' would overwrite an input");
    }
  }
}

unsigned resolve_threads(const std::string& spec) {
  if (spec == "auto") return std::max(1u, std::thread::hardware_concurrency());
  try {
    const int n = std::stoi(spec);
    if (n >= 1) return static_cast<unsigned>(n);
  } catch (const std::exception&) {
  }
  throw UsageError("--threads must be a positive integer or 'auto'");
}

/// Runs task(i) for i in [0, n) on a pool of workers pulling from a shared counter.
/// Results must be written by index so output never depends on scheduling.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& task) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) task(i);
  };
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < std::min<std::size_t>(threads, n); ++t) pool.emplace_back(worker);
  worker();
}

/// Per-item outcome collected by parallel stages.
struct Outcome {
  std::optional<Error> error;
};

int report_outcomes(const std::vector<fs::path>& files, const std::vector<Outcome>& outcomes, const char* verb) {
  int code = kExitOk;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!outcomes[i].error) continue;
    std::cerr << verb << ": " << files[i].filename().string() << ": " << outcomes[i].error->what() << "\n";
    code = std::max(code, exit_code_for(*outcomes[i].error));
  }
  return code;
}

struct SeparationFlags {
  std::string od_base = "ten";
  std::string stats_on = "tissue";
  double tissue_threshold = kDefaultTissueThreshold;
  double angle_percentile = kDefaultAnglePercentile;

  void attach(CLI::App* app) {
    app->add_option("--od-base", od_base, "Logarithm base for optical density (ten|e)")
        ->check(CLI::IsMember({"ten", "e"}));
    app->add_option("--stats-on", stats_on, "Pixels used for concentration statistics (tissue|all)")
        ->check(CLI::IsMember({"tissue", "all"}));
    app->add_option("--tissue-threshold", tissue_threshold, "Tissue OD threshold (base-10 units)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--angle-percentile", angle_percentile, "Macenko extreme-angle percentile")
        ->check(CLI::Range(0.0, 50.0));
  }

  SeparationConfig config() const {
    SeparationConfig c;
    c.od_base = parse_od_base(od_base);
    c.stats_domain = parse_stats_domain(stats_on);
    c.tissue_threshold = tissue_threshold;
    c.angle_percentile = angle_percentile;
    return c;
  }
};

// --- fit ---------------------------------------------------------------------

struct FitArgs {
  std::string input, output, threads = "auto";
  bool diag_cov = false, lab = false;
  SeparationFlags sep;
};

int cmd_fit(const FitArgs& a) {
  const auto files = list_pngs(a.input);
  const unsigned threads = resolve_threads(a.threads);
  const SeparationConfig cfg = a.sep.config();

  std::vector<std::optional<ImageStainStats>> stats(files.size());
  std::vector<std::optional<LabStats>> lab(files.size());
  std::vector<Outcome> outcomes(files.size());
  parallel_for(files.size(), threads, [&](std::size_t i) {
    try {
      const RgbImage img = load_png(files[i]);
      if (a.lab) lab[i] = lab_stats(rgb_to_lab(img));
      else stats[i] = extract_image_stats(img, cfg);
    } catch (const Error& e) {
      outcomes[i].error = e;
    }
  });

  std::size_t skipped = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!outcomes[i].error) continue;
    if (outcomes[i].error->is_io()) return report_outcomes(files, outcomes, "fit");
    std::cerr << "fit: skipping " << files[i].filename().string() << ": " << outcomes[i].error->what() << "\n";
    ++skipped;
  }
  const std::size_t used = files.size() - skipped;
  std::cout << "fit: " << used << " images used, " << skipped << " skipped\n";
  if (used == 0) {
    std::cerr << "fit: no usable images in '" << a.input << "'\n";
    return kExitDomain;
  }

  if (a.lab) {
    std::vector<LabStats> usable;
    for (const auto& s : lab)
      if (s) usable.push_back(*s);
    save_lab_profile(fit_lab_profile_from_stats(usable), a.output);
  } else {
    std::vector<ImageStainStats> usable;
    for (const auto& s : stats)
      if (s) usable.push_back(*s);
    save_profile(fit_profile(usable, a.diag_cov ? CovarianceKind::diagonal : CovarianceKind::full, cfg.od_base,
                             cfg.stats_domain),
                 a.output);
  }
  return kExitOk;
}

// --- augment -------------------------------------------------------------------

struct AugmentArgs {
  std::string method, profile, input, output, threads = "auto";
  std::string direction = "printed", jitter_matrix = "per-image";
  int count = 1;
  std::uint64_t seed = 0;
  double alpha = 0.25, beta = 0.05;
  SeparationFlags sep;
};

int cmd_augment(const AugmentArgs& a) {
  if (a.method != "sca" && a.method != "jitter" && a.method != "randstainna")
    throw UsageError("unknown method '" + a.method + "' (expected sca|jitter|randstainna)");
  if (a.method != "jitter" && a.profile.empty()) throw UsageError("--profile is required for " + a.method);
  if (a.count < 1) throw UsageError("--count must be >= 1");
  const unsigned threads = resolve_threads(a.threads);

  AugmentConfig cfg;
  cfg.separation = a.sep.config();
  cfg.direction = parse_transfer_direction(a.direction);
  const JitterMatrix jitter_matrix = parse_jitter_matrix(a.jitter_matrix);
  const JitterParams jitter{a.alpha, a.beta};

  std::optional<ProfileSampler> sampler;
  std::optional<LabProfile> lab;
  if (a.method == "sca") {
    sampler.emplace(load_profile(a.profile));
    check_conventions(sampler->profile(), cfg);
  } else if (a.method == "randstainna") {
    lab = load_lab_profile(a.profile);
  }

  const auto files = list_pngs(a.input);
  ensure_output_dir(a.output);
  std::vector<fs::path> outputs;
  for (const auto& f : files)
    for (int k = 0; k < a.count; ++k)
      outputs.push_back(fs::path(a.output) / (f.stem().string() + "_aug" + std::to_string(k) + ".png"));
  refuse_overwrite(files, outputs);

  std::vector<Outcome> outcomes(files.size());
  parallel_for(files.size(), threads, [&](std::size_t i) {
    try {
      const RgbImage img = load_png(files[i]);
      std::vector<RgbImage> variants;
      for (int k = 0; k < a.count; ++k) {
        Rng rng(derive_seed(a.seed, i, static_cast<std::uint64_t>(k)));
        if (a.method == "sca") variants.push_back(sca_augment(img, *sampler, rng, cfg));
        else if (a.method == "jitter") variants.push_back(stain_jitter(img, jitter, rng, jitter_matrix, cfg.separation));
        else variants.push_back(randstainna_augment(img, *lab, rng));
      }
      for (int k = 0; k < a.count; ++k) save_png(variants[k], outputs[i * a.count + k]);
    } catch (const Error& e) {
      outcomes[i].error = e;
    }
  });
  return report_outcomes(files, outcomes, "augment");
}

// --- pair ----------------------------------------------------------------------

struct PairArgs {
  std::string profile, input, output, threads = "auto", direction = "printed";
  std::uint64_t seed = 0;
  bool verify = false;
  SeparationFlags sep;
};

/// Largest element-wise difference between the concentrations recovered from
/// the two float images with their own colour matrices.
double pair_concentration_gap(const SclPairFloat& pair, OdBase base) {
  const auto sa = compute_concentrations(float_rgb_to_od(pair.image_a, base), pair.c_a);
  const auto sb = compute_concentrations(float_rgb_to_od(pair.image_b, base), pair.c_b);
  return (sa.values - sb.values).cwiseAbs().maxCoeff();
}

int cmd_pair(const PairArgs& a) {
  const unsigned threads = resolve_threads(a.threads);
  AugmentConfig cfg;
  cfg.separation = a.sep.config();
  cfg.direction = parse_transfer_direction(a.direction);
  const ProfileSampler sampler(load_profile(a.profile));
  check_conventions(sampler.profile(), cfg);

  const auto files = list_pngs(a.input);
  ensure_output_dir(a.output);
  std::vector<fs::path> outputs;
  for (const auto& f : files) {
    outputs.push_back(fs::path(a.output) / (f.stem().string() + "_a.png"));
    outputs.push_back(fs::path(a.output) / (f.stem().string() + "_b.png"));
  }
  refuse_overwrite(files, outputs);

  std::vector<Outcome> outcomes(files.size());
  std::vector<double> gaps(files.size(), 0.0);
  parallel_for(files.size(), threads, [&](std::size_t i) {
    const fs::path& pa = outputs[2 * i];
    const fs::path& pb = outputs[2 * i + 1];
    std::vector<fs::path> temps;
    try {
      const RgbImage img = load_png(files[i]);
      Rng rng(derive_seed(a.seed, i, 0));
      const SclPairFloat pair = scl_pair_float(img, sampler, rng, cfg);
      if (a.verify) gaps[i] = pair_concentration_gap(pair, cfg.separation.od_base);
      // Both members land together: write two temporaries, then rename both.
      const fs::path ta = temp_sibling(pa), tb = temp_sibling(pb);
      temps = {ta, tb};
      save_png(quantize(pair.image_a), ta);
      save_png(quantize(pair.image_b), tb);
      fs::rename(ta, pa);
      fs::rename(tb, pb);
    } catch (const Error& e) {
      outcomes[i].error = e;
    } catch (const fs::filesystem_error& e) {
      outcomes[i].error = Error(ErrorCode::Io, e.what());
    }
    if (outcomes[i].error) {
      std::error_code ec;
      for (const auto& t : temps) fs::remove(t, ec);
      fs::remove(pa, ec);
      fs::remove(pb, ec);
    }
  });

  int code = report_outcomes(files, outcomes, "pair");
  if (a.verify) {
    double worst = 0.0;
    for (double g : gaps) worst = std::max(worst, g);
    std::printf("verify: max concentration difference %.3e (tolerance 1e-06)\n", worst);
    if (!(worst <= 1e-6)) code = std::max(code, kExitDomain);
  }
  return code;
}

// --- normalize -----------------------------------------------------------------

struct NormalizeArgs {
  std::string method, reference, input, output, threads = "auto";
  double fda_beta = kDefaultFdaBeta;
  SeparationFlags sep;
};

int cmd_normalize(const NormalizeArgs& a) {
  NormMethod method;
  try {
    method = parse_norm_method(a.method);
  } catch (const Error&) {
    throw UsageError("unknown method '" + a.method + "' (expected reinhard|macenko|hm|fda)");
  }
  const unsigned threads = resolve_threads(a.threads);
  NormalizeOptions opt;
  opt.separation = a.sep.config();
  opt.fda_beta = a.fda_beta;
  const ReferenceTarget ref = make_reference(load_png(a.reference), method, opt);

  const auto files = list_pngs(a.input);
  ensure_output_dir(a.output);
  std::vector<fs::path> outputs;
  for (const auto& f : files) outputs.push_back(fs::path(a.output) / (f.stem().string() + ".png"));
  refuse_overwrite(files, outputs);

  std::vector<Outcome> outcomes(files.size());
  parallel_for(files.size(), threads, [&](std::size_t i) {
    try {
      save_png(normalize(load_png(files[i]), ref, opt), outputs[i]);
    } catch (const Error& e) {
      outcomes[i].error = e;
    }
  });
  return report_outcomes(files, outcomes, "normalize");
}

// --- loss ----------------------------------------------------------------------

struct LossArgs {
  std::string pred_a, pred_b, mask;
  bool probabilities = false;
  int precision = 6;
};

int cmd_loss(const LossArgs& a) {
  const FloatMap pa = load_float_map(a.pred_a);
  const FloatMap pb = load_float_map(a.pred_b);
  const Mask mask = load_mask_png(a.mask);
  const double loss =
      stain_consistency_loss(pa, pb, mask, a.probabilities ? LossInput::probabilities : LossInput::logits);
  std::printf("%.*f\n", a.precision, loss);
  return kExitOk;
}

// --- metrics -------------------------------------------------------------------

struct MetricsArgs {
  std::string gt, pred;
  bool per_image = false;
  double iou_threshold = 0.5;
};

int cmd_metrics(const MetricsArgs& a) {
  const auto gt_files = list_pngs(a.gt);
  if (gt_files.empty()) {
    std::cerr << "metrics: no ground-truth maps in '" << a.gt << "'\n";
    return kExitDomain;
  }
  MetricTotals totals;
  double f1_sum = 0.0, pq_sum = 0.0;
  std::printf("image,tp,fp,fn,f1_50,pq_50\n");
  for (const auto& g : gt_files) {
    const fs::path p = fs::path(a.pred) / g.filename();
    if (!fs::exists(p)) fail(ErrorCode::Io, "missing prediction '" + p.string() + "'");
    const MatchReport r = match_instances(load_instance_png(g), load_instance_png(p), a.iou_threshold);
    totals.add(r);
    f1_sum += f1_50(r);
    pq_sum += pq_50(r);
    if (a.per_image)
      std::printf("%s,%zu,%zu,%zu,%.12f,%.12f\n", g.filename().string().c_str(), r.tp, r.fp, r.fn, f1_50(r), pq_50(r));
  }
  const MatchReport all = totals.as_report();
  if (a.per_image) {
    const double n = static_cast<double>(gt_files.size());
    std::printf("mean,%zu,%zu,%zu,%.12f,%.12f\n", all.tp, all.fp, all.fn, f1_sum / n, pq_sum / n);
  } else {
    std::printf("dataset,%zu,%zu,%zu,%.12f,%.12f\n", all.tp, all.fp, all.fn, f1_50(all), pq_50(all));
  }
  return kExitOk;
}

// --- bench ---------------------------------------------------------------------

struct BenchArgs {
  std::string methods = "reinhard,sca,macenko", report;
  int size = 256;
  std::size_t count = 1000, warmup = 10;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a) {
  bench::BenchOptions opt;
  std::stringstream ss(a.methods);
  for (std::string m; std::getline(ss, m, ',');) {
    if (m.empty()) continue;
    if (std::find(bench::known_methods().begin(), bench::known_methods().end(), m) == bench::known_methods().end())
      throw UsageError("unknown benchmark method '" + m + "'");
    opt.methods.push_back(m);
  }
  if (opt.methods.empty()) throw UsageError("--methods is empty");
  if (a.size < 16) throw UsageError("--size must be >= 16");
  opt.size = a.size;
  opt.count = a.count;
  opt.warmup = a.warmup;
  opt.seed = a.seed;

  const auto rows = bench::run(opt);
  write_text_atomic(a.report, bench::to_csv(rows, opt));

  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) { return x.seconds < y.seconds; });
  std::printf("ordering (fastest first):");
  for (std::size_t i = 0; i < sorted.size(); ++i)
    std::printf("%s %s (%.3f s)", i ? " <" : "", sorted[i].method.c_str(), sorted[i].seconds);
  std::printf("\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stainkit: stain normalisation, augmentation and evaluation for histology images"};
  app.set_version_flag("--version", STAINKIT_VERSION);
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a stain profile to a directory of PNG images");
  fit_cmd->add_option("--input", fit.input, "Input directory")->required();
  fit_cmd->add_option("--output", fit.output, "Profile JSON to write")->required();
  fit_cmd->add_flag("--diag-cov", fit.diag_cov, "Fit diagonal covariances");
  fit_cmd->add_flag("--lab", fit.lab, "Fit an l-alpha-beta profile for randstainna instead");
  fit_cmd->add_option("--threads", fit.threads, "Worker threads or 'auto'");
  fit.sep.attach(fit_cmd);

  AugmentArgs aug;
  auto* aug_cmd = app.add_subcommand("augment", "Write K stain-augmented variants per input image");
  aug_cmd->add_option("--method", aug.method, "sca|jitter|randstainna")->required();
  aug_cmd->add_option("--profile", aug.profile, "Stain profile (sca) or Lab profile (randstainna)");
  aug_cmd->add_option("--input", aug.input, "Input directory")->required();
  aug_cmd->add_option("--output", aug.output, "Output directory")->required();
  aug_cmd->add_option("--count", aug.count, "Variants per image");
  aug_cmd->add_option("--seed", aug.seed, "Root seed");
  aug_cmd->add_option("--alpha", aug.alpha, "Jitter scale half-range")->check(CLI::NonNegativeNumber);
  aug_cmd->add_option("--beta", aug.beta, "Jitter shift half-range")->check(CLI::NonNegativeNumber);
  aug_cmd->add_option("--jitter-matrix", aug.jitter_matrix, "per-image|fixed")
      ->check(CLI::IsMember({"per-image", "fixed"}));
  aug_cmd->add_option("--eq5-direction", aug.direction, "printed|conventional")
      ->check(CLI::IsMember({"printed", "conventional"}));
  aug_cmd->add_option("--threads", aug.threads, "Worker threads or 'auto'");
  aug.sep.attach(aug_cmd);

  PairArgs pair;
  auto* pair_cmd = app.add_subcommand("pair", "Write consistency-learning image pairs");
  pair_cmd->add_option("--profile", pair.profile, "Stain profile")->required();
  pair_cmd->add_option("--input", pair.input, "Input directory")->required();
  pair_cmd->add_option("--output", pair.output, "Output directory")->required();
  pair_cmd->add_option("--seed", pair.seed, "Root seed");
  pair_cmd->add_flag("--verify", pair.verify, "Check concentration sharing in the float pipeline");
  pair_cmd->add_option("--eq5-direction", pair.direction, "printed|conventional")
      ->check(CLI::IsMember({"printed", "conventional"}));
  pair_cmd->add_option("--threads", pair.threads, "Worker threads or 'auto'");
  pair.sep.attach(pair_cmd);

  NormalizeArgs norm;
  auto* norm_cmd = app.add_subcommand("normalize", "Normalise images to a reference image");
  norm_cmd->add_option("--method", norm.method, "reinhard|macenko|hm|fda")->required();
  norm_cmd->add_option("--reference", norm.reference, "Reference PNG")->required();
  norm_cmd->add_option("--input", norm.input, "Input directory")->required();
  norm_cmd->add_option("--output", norm.output, "Output directory")->required();
  norm_cmd->add_option("--fda-beta", norm.fda_beta, "FDA window fraction")->check(CLI::Range(0.0, 0.5));
  norm_cmd->add_option("--threads", norm.threads, "Worker threads or 'auto'");
  norm.sep.attach(norm_cmd);

  LossArgs loss;
  auto* loss_cmd = app.add_subcommand("loss", "Stain consistency loss between two prediction maps");
  loss_cmd->add_option("--pred-a", loss.pred_a, "First prediction (single-channel PFM)")->required();
  loss_cmd->add_option("--pred-b", loss.pred_b, "Second prediction (single-channel PFM)")->required();
  loss_cmd->add_option("--mask", loss.mask, "Object mask PNG (nonzero = object)")->required();
  loss_cmd->add_flag("--inputs-are-probabilities", loss.probabilities, "Skip the sigmoid");
  loss_cmd->add_option("--precision", loss.precision, "Printed decimal places")->check(CLI::Range(0, 17));

  MetricsArgs met;
  auto* met_cmd = app.add_subcommand("metrics", "F1 and PQ at IoU > 0.5 over instance maps");
  met_cmd->add_option("--gt", met.gt, "Ground-truth directory (16-bit PNG label maps)")->required();
  met_cmd->add_option("--pred", met.pred, "Prediction directory (same file names)")->required();
  met_cmd->add_flag("--per-image", met.per_image, "Average per-image metrics instead of pooling counts");
  met_cmd->add_option("--iou-threshold", met.iou_threshold, "Match threshold (>= 0.5)");

  BenchArgs ben;
  auto* ben_cmd = app.add_subcommand("bench", "Time methods on a synthetic corpus (single-threaded)");
  ben_cmd->add_option("--methods", ben.methods, "Comma-separated: hm,fda,reinhard,macenko,jitter,randstainna,sca");
  ben_cmd->add_option("--size", ben.size, "Image side length");
  ben_cmd->add_option("--count", ben.count, "Timed images");
  ben_cmd->add_option("--warmup", ben.warmup, "Untimed warm-up images");
  ben_cmd->add_option("--seed", ben.seed, "Corpus seed");
  ben_cmd->add_option("--report", ben.report, "CSV report path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit);
    if (*aug_cmd) return cmd_augment(aug);
    if (*pair_cmd) return cmd_pair(pair);
    if (*norm_cmd) return cmd_normalize(norm);
    if (*loss_cmd) return cmd_loss(loss);
    if (*met_cmd) return cmd_metrics(met);
    if (*ben_cmd) return cmd_bench(ben);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
