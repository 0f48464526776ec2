#pragma once

// Detection metrics: IoU, greedy score-ordered matching, 11-point
// interpolated average precision, class mean, and size/threshold variants.
//
// Interpolated AP: with precision/recall measured after each detection in
// descending-score order, AP = (1/11) * sum over r in {0, 0.1, ..., 1.0} of
// the maximum precision among cut-offs whose recall is >= r (0 if none).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sarpf/errors.hpp"

namespace sarpf {

struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double area() const noexcept { return std::max(0.0, x_max - x_min) * std::max(0.0, y_max - y_min); }
  bool valid() const noexcept { return x_max >= x_min && y_max >= y_min; }
};

struct Detection {
  Box box;
  double score = 0.0;
  std::int64_t class_id = 0;
  std::int64_t image_id = 0;
};

struct GroundTruth {
  Box box;
  std::int64_t class_id = 0;
  std::int64_t image_id = 0;
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Outcome of one single-class evaluation. degenerate marks the case with
/// neither detections nor ground truths, where AP is defined as 0.
struct ClassAp {
  double ap = 0.0;
  bool degenerate = false;
  std::size_t detections = 0;
  std::size_t ground_truths = 0;
};

namespace detail {

/// Indices of dets in descending score, ties kept in input order.
inline std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

/// True-positive flags in score order.
inline std::vector<bool> match_greedy(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                      double iou_thresh, const std::vector<std::size_t>& order) {
  std::vector<bool> taken(gts.size(), false);
  std::vector<bool> tp;
  tp.reserve(order.size());
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].image_id != d.image_id) continue;
      const double v = iou(d.box, gts[g].box);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    const bool hit = best_gt < gts.size() && best >= iou_thresh;
    if (hit) taken[best_gt] = true;
    tp.push_back(hit);
  }
  return tp;
}

inline double eleven_point(const std::vector<double>& recall, const std::vector<double>& precision) {
  double total = 0.0;
  for (int i = 0; i <= 10; ++i) {
    const double r = i / 10.0;
    double best = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k)
      if (recall[k] >= r) best = std::max(best, precision[k]);
    total += best;
  }
  return total / 11.0;
}

inline void check_threshold(double t) {
  if (!(t > 0.0 && t < 1.0)) throw ContractError("iou threshold must lie in (0, 1)");
}

}  // namespace detail

inline ClassAp evaluate_class(std::span<const Detection> dets, std::span<const GroundTruth> gts, double iou_thresh) {
  detail::check_threshold(iou_thresh);
  ClassAp out{0.0, dets.empty() && gts.empty(), dets.size(), gts.size()};
  if (gts.empty() || dets.empty()) return out;
  const auto order = detail::score_order(dets);
  const auto tp = detail::match_greedy(dets, gts, iou_thresh, order);
  std::vector<double> recall, precision;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    hits += tp[k] ? 1 : 0;
    recall.push_back(static_cast<double>(hits) / static_cast<double>(gts.size()));
    precision.push_back(static_cast<double>(hits) / static_cast<double>(k + 1));
  }
  out.ap = detail::eleven_point(recall, precision);
  return out;
}

inline double average_precision(std::span<const Detection> dets, std::span<const GroundTruth> gts, double iou_thresh) {
  return evaluate_class(dets, gts, iou_thresh).ap;
}

/// Independent route: every cut-off of the ranked list is evaluated from
/// scratch. The ranking is rebuilt by repeated selection (highest score,
/// earliest input position on ties) and each cut-off re-runs its own greedy
/// matching over only the kept detections, yielding one (recall, precision)
/// point per cut-off before the 11-point rule is applied.
inline double brute_force_ap(std::span<const Detection> dets, std::span<const GroundTruth> gts, double iou_thresh) {
  detail::check_threshold(iou_thresh);
  if (dets.size() > 10) throw ContractError("brute_force_ap: at most 10 detections");
  if (gts.empty() || dets.empty()) return 0.0;

  std::vector<std::size_t> ranked;
  std::vector<bool> picked(dets.size(), false);
  for (std::size_t round = 0; round < dets.size(); ++round) {
    std::size_t best = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (picked[i]) continue;
      if (best == dets.size() || dets[i].score > dets[best].score) best = i;
    }
    picked[best] = true;
    ranked.push_back(best);
  }

  std::vector<std::size_t> hit_counts;
  for (std::size_t cut = 1; cut <= ranked.size(); ++cut) {
    std::vector<bool> used(gts.size(), false);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < cut; ++r) {
      const Detection& d = dets[ranked[r]];
      std::size_t chosen = gts.size();
      double chosen_iou = 0.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g] || gts[g].image_id != d.image_id) continue;
        const double v = iou(d.box, gts[g].box);
        if (chosen == gts.size() || v > chosen_iou) {
          chosen = g;
          chosen_iou = v;
        }
      }
      if (chosen < gts.size() && chosen_iou >= iou_thresh) {
        used[chosen] = true;
        ++hits;
      }
    }
    hit_counts.push_back(hits);
  }

  // Recall comparisons in integers: hits / |gts| >= i / 10.
  double total = 0.0;
  for (std::size_t i = 0; i <= 10; ++i) {
    double best = 0.0;
    for (std::size_t k = 0; k < hit_counts.size(); ++k) {
      if (hit_counts[k] * 10 >= i * gts.size()) {
        best = std::max(best, static_cast<double>(hit_counts[k]) / static_cast<double>(k + 1));
      }
    }
    total += best;
  }
  return total / 11.0;
}

inline double mean_ap(std::span<const double> per_class) {
  if (per_class.empty()) throw ContractError("mean_ap: no classes");
  double s = 0.0;
  for (double v : per_class) s += v;
  return s / static_cast<double>(per_class.size());
}

// ---------------------------------------------------------------------------
// Multi-class evaluation

struct SizeRanges {
  double small_max = 32.0 * 32.0;   // area < small_max is small
  double medium_max = 96.0 * 96.0;  // small_max <= area < medium_max is medium
};

struct ApResult {
  std::vector<std::int64_t> classes;
  std::vector<ClassAp> per_class;  // at IoU 0.5
  double map = 0.0;                // mean of per_class
  double ap = 0.0;                 // mean over the threshold sweep of mAP
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap_small = 0.0;
  double ap_medium = 0.0;
  double ap_large = 0.0;
  std::vector<double> thresholds;
};

inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

namespace detail {

template <typename T>
std::vector<T> of_class(std::span<const T> items, std::int64_t cls) {
  std::vector<T> out;
  for (const auto& v : items)
    if (v.class_id == cls) out.push_back(v);
  return out;
}

template <typename T>
std::vector<T> of_area(std::span<const T> items, double lo, double hi) {
  std::vector<T> out;
  for (const auto& v : items) {
    const double a = v.box.area();
    if (a >= lo && a < hi) out.push_back(v);
  }
  return out;
}

inline double class_mean(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                         std::span<const std::int64_t> classes, double thresh) {
  std::vector<double> aps;
  for (auto c : classes) {
    const auto d = of_class(dets, c);
    const auto g = of_class(gts, c);
    aps.push_back(average_precision(d, g, thresh));
  }
  return mean_ap(aps);
}

}  // namespace detail

/// Classes are the union of class ids in detections and ground truths.
inline ApResult evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                         std::vector<double> thresholds = coco_thresholds(), SizeRanges sizes = {}) {
  std::set<std::int64_t> ids;
  for (const auto& d : dets) ids.insert(d.class_id);
  for (const auto& g : gts) ids.insert(g.class_id);
  if (ids.empty()) throw ContractError("evaluate: no classes in detections or ground truth");
  if (thresholds.empty()) throw ContractError("evaluate: no IoU thresholds");

  ApResult r;
  r.classes.assign(ids.begin(), ids.end());
  r.thresholds = thresholds;
  std::vector<double> aps;
  for (auto c : r.classes) {
    const auto d = detail::of_class(dets, c);
    const auto g = detail::of_class(gts, c);
    r.per_class.push_back(evaluate_class(d, g, 0.5));
    aps.push_back(r.per_class.back().ap);
  }
  r.map = mean_ap(aps);
  r.ap50 = r.map;
  r.ap75 = detail::class_mean(dets, gts, r.classes, 0.75);
  double sweep = 0.0;
  for (double t : thresholds) sweep += detail::class_mean(dets, gts, r.classes, t);
  r.ap = sweep / static_cast<double>(thresholds.size());

  const double inf = std::numeric_limits<double>::infinity();
  auto bucket = [&](double lo, double hi) {
    const auto d = detail::of_area(dets, lo, hi);
    const auto g = detail::of_area(gts, lo, hi);
    return detail::class_mean(d, g, r.classes, 0.5);
  };
  r.ap_small = bucket(0.0, sizes.small_max);
  r.ap_medium = bucket(sizes.small_max, sizes.medium_max);
  r.ap_large = bucket(sizes.medium_max, inf);
  return r;
}

}  // namespace sarpf
