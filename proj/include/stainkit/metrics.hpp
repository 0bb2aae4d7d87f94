#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stainkit/image.hpp"

namespace stainkit {

struct InstancePair {
  std::uint32_t gt_id = 0;
  std::uint32_t pred_id = 0;
  double iou = 0.0;
};

struct MatchReport {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double matched_iou_sum = 0.0;
  std::vector<InstancePair> pairs;  // sorted by gt id
};

/// Pairs every (gt, pred) instance with IoU strictly above the threshold.
/// For thresholds >= 0.5 each instance can take part in at most one such pair.
inline MatchReport match_instances(const InstanceMap& gt, const InstanceMap& pred, double iou_threshold = 0.5) {
  require_same_shape(gt, pred, "match_instances");
  if (!(iou_threshold >= 0.5)) fail(ErrorCode::InvalidArgument, "IoU threshold must be >= 0.5 for unique matching");

  std::map<std::uint32_t, std::uint64_t> gt_area, pred_area;
  std::unordered_map<std::uint64_t, std::uint64_t> overlap;
  for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
    const std::uint32_t g = gt.at_pixel(p), q = pred.at_pixel(p);
    if (g) ++gt_area[g];
    if (q) ++pred_area[q];
    if (g && q) ++overlap[(static_cast<std::uint64_t>(g) << 32) | q];
  }

  MatchReport r;
  for (const auto& [key, inter] : overlap) {
    const auto g = static_cast<std::uint32_t>(key >> 32), q = static_cast<std::uint32_t>(key & 0xffffffffu);
    const double iou = static_cast<double>(inter) / static_cast<double>(gt_area[g] + pred_area[q] - inter);
    if (iou > iou_threshold) r.pairs.push_back({g, q, iou});
  }
  std::sort(r.pairs.begin(), r.pairs.end(), [](const auto& x, const auto& y) { return x.gt_id < y.gt_id; });
  for (const auto& pr : r.pairs) r.matched_iou_sum += pr.iou;
  r.tp = r.pairs.size();
  r.fn = gt_area.size() - r.tp;
  r.fp = pred_area.size() - r.tp;
  return r;
}

/// 2 tp / (2 tp + fp + fn); 1.0 when there is nothing to detect and nothing predicted.
inline double f1_50(const MatchReport& r) {
  const double denom = 2.0 * r.tp + r.fp + r.fn;
  return denom == 0.0 ? 1.0 : 2.0 * r.tp / denom;
}

/// matched IoU sum / (tp + fp/2 + fn/2); 1.0 for empty-vs-empty.
inline double pq_50(const MatchReport& r) {
  const double denom = r.tp + 0.5 * r.fp + 0.5 * r.fn;
  return denom == 0.0 ? 1.0 : r.matched_iou_sum / denom;
}

/// Corpus-level totals; metrics computed on the sums.
struct MetricTotals {
  std::size_t tp = 0, fp = 0, fn = 0;
  double matched_iou_sum = 0.0;

  void add(const MatchReport& r) {
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
    matched_iou_sum += r.matched_iou_sum;
  }

  MatchReport as_report() const { return {tp, fp, fn, matched_iou_sum, {}}; }
};

}  // namespace stainkit
