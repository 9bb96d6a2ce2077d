#pragma once

// Empirical ROC and precision-recall curves, their areas, operating points
// and scan-to-patient aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "echoflow/error.hpp"

namespace echoflow::stats {

struct ScoredSample {
  double score = 0.0;
  int label = 0;
  std::string scan_id;
  std::string patient_id;
};

inline std::vector<ScoredSample> make_samples(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorCode::shape_mismatch, "scores and labels differ in length");
  std::vector<ScoredSample> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i].score = scores[i];
    out[i].label = labels[i];
    out[i].scan_id = std::to_string(i);
    out[i].patient_id = out[i].scan_id;
  }
  return out;
}

struct ClassCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline ClassCounts count_classes(std::span<const ScoredSample> s) {
  ClassCounts c;
  for (const auto& x : s) {
    require(x.label == 0 || x.label == 1, ErrorCode::invalid_argument, "labels must be 0 or 1");
    require(std::isfinite(x.score), ErrorCode::non_finite, "score for '" + x.scan_id + "' is not finite");
    (x.label ? c.positives : c.negatives)++;
  }
  return c;
}

inline ClassCounts require_both_classes(std::span<const ScoredSample> s) {
  const auto c = count_classes(s);
  require(c.positives > 0 && c.negatives > 0, ErrorCode::degenerate_input,
          "need both classes (positives " + std::to_string(c.positives) + ", negatives " +
              std::to_string(c.negatives) + ")");
  return c;
}

struct RocPoint {
  double threshold;  // score >= threshold is called positive
  std::uint64_t tp;
  std::uint64_t fp;
  double sensitivity;
  double specificity;
};

// One point per distinct score in increasing threshold order, followed by the
// +inf endpoint. The first point is the all-positive corner (1, 0) and the
// last the all-negative corner (0, 1).
struct RocCurve {
  std::vector<RocPoint> points;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
};

inline RocCurve roc_curve(std::span<const ScoredSample> samples) {
  const auto counts = require_both_classes(samples);
  std::vector<std::pair<double, int>> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.emplace_back(s.score, s.label);
  std::sort(v.begin(), v.end());
  RocCurve c;
  c.positives = counts.positives;
  c.negatives = counts.negatives;
  std::uint64_t tp = c.positives, fp = c.negatives;  // everything at or above the lowest score
  auto push = [&](double thr) {
    c.points.push_back({thr, tp, fp, double(tp) / double(c.positives),
                        double(c.negatives - fp) / double(c.negatives)});
  };
  for (std::size_t i = 0; i < v.size();) {
    const double thr = v[i].first;
    push(thr);
    for (; i < v.size() && v[i].first == thr; ++i) (v[i].second ? tp : fp)--;
  }
  push(std::numeric_limits<double>::infinity());
  return c;
}

// Trapezoid rule over (1 - specificity, sensitivity), accumulated in integer
// counts so the result is the same rational number as the pair statistic.
inline double auc_trapezoid(const RocCurve& c) {
  require(c.points.size() >= 2 && c.positives > 0 && c.negatives > 0, ErrorCode::degenerate_input,
          "invalid ROC curve");
  unsigned __int128 twice_area = 0;
  for (std::size_t i = 0; i + 1 < c.points.size(); ++i) {
    const auto& a = c.points[i];
    const auto& b = c.points[i + 1];
    twice_area += (unsigned __int128)(a.fp - b.fp) * (a.tp + b.tp);
  }
  return double(twice_area) / (2.0 * double(c.positives) * double(c.negatives));
}

inline double auc_trapezoid(std::span<const ScoredSample> s) { return auc_trapezoid(roc_curve(s)); }

// (#concordant + 1/2 #tied) / (P N) over all positive/negative pairs.
inline double auc_pair_count(std::span<const ScoredSample> samples) {
  const auto c = require_both_classes(samples);
  std::uint64_t twice = 0;
  for (const auto& p : samples) {
    if (!p.label) continue;
    for (const auto& n : samples) {
      if (n.label) continue;
      twice += p.score > n.score ? 2 : (p.score == n.score ? 1 : 0);
    }
  }
  return double(twice) / (2.0 * double(c.positives) * double(c.negatives));
}

// ---------------------------------------------------------------------------
// precision-recall

struct PrPoint {
  double recall;
  double precision;
};

namespace detail {

// (TP, FP) at each distinct threshold, walking from the highest score down;
// starts at (0, 0).
inline std::vector<std::pair<std::uint64_t, std::uint64_t>> pr_counts(std::span<const ScoredSample> samples) {
  std::vector<std::pair<double, int>> v;
  for (const auto& s : samples) v.emplace_back(s.score, s.label);
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out{{0, 0}};
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < v.size();) {
    const double thr = v[i].first;
    for (; i < v.size() && v[i].first == thr; ++i) (v[i].second ? tp : fp)++;
    out.emplace_back(tp, fp);
  }
  return out;
}

inline double trapezoid(const std::vector<PrPoint>& pts) {
  double area = 0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    area += (pts[i + 1].recall - pts[i].recall) * (pts[i].precision + pts[i + 1].precision) / 2.0;
  return area;
}

inline std::size_t require_positive(std::span<const ScoredSample> samples) {
  const auto c = count_classes(samples);
  require(c.positives > 0, ErrorCode::degenerate_input, "precision-recall needs at least one positive");
  return c.positives;
}

// Precision at recall 0 is undefined; the curve starts at the precision of
// its first point with a true positive.
inline std::vector<PrPoint> anchor_at_zero(std::vector<PrPoint> pts) {
  if (!pts.empty()) pts.insert(pts.begin(), PrPoint{0.0, pts.front().precision});
  return pts;
}

}  // namespace detail

// Between consecutive thresholds A -> B the true positives advance one at a
// time with false positives interpolated linearly; the area is the trapezoid
// rule over the resulting points.
inline std::vector<PrPoint> pr_curve_davis_goadrich(std::span<const ScoredSample> samples) {
  const double p = double(detail::require_positive(samples));
  const auto counts = detail::pr_counts(samples);
  std::vector<PrPoint> pts;
  for (std::size_t k = 0; k + 1 < counts.size(); ++k) {
    const auto [tpa, fpa] = counts[k];
    const auto [tpb, fpb] = counts[k + 1];
    if (tpb == tpa) {
      // precision drops at constant recall; keep the empirical point
      if (tpb > 0) pts.push_back({double(tpb) / p, double(tpb) / double(tpb + fpb)});
      continue;
    }
    const double slope = double(fpb - fpa) / double(tpb - tpa);
    for (std::uint64_t x = 1; x <= tpb - tpa; ++x) {
      const double tp = double(tpa + x), fp = double(fpa) + slope * double(x);
      pts.push_back({tp / p, tp / (tp + fp)});
    }
  }
  return detail::anchor_at_zero(std::move(pts));
}

inline double pr_auc_davis_goadrich(std::span<const ScoredSample> samples) {
  return detail::trapezoid(pr_curve_davis_goadrich(samples));
}

// Straight lines between the empirical (recall, precision) points.
inline std::vector<PrPoint> pr_curve_linear(std::span<const ScoredSample> samples) {
  const double p = double(detail::require_positive(samples));
  std::vector<PrPoint> pts;
  for (const auto& [tp, fp] : detail::pr_counts(samples))
    if (tp > 0) pts.push_back({double(tp) / p, double(tp) / double(tp + fp)});
  return detail::anchor_at_zero(std::move(pts));
}

inline double pr_auc_linear(std::span<const ScoredSample> samples) {
  return detail::trapezoid(pr_curve_linear(samples));
}

// ---------------------------------------------------------------------------

enum class TargetKind { sensitivity, specificity };

struct OperatingPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  bool target_unreachable = false;
};

// Reads the empirical curve without interpolation: the point whose
// sensitivity (specificity) is the smallest value >= target, ties resolved
// toward the higher specificity (sensitivity).
inline OperatingPoint operating_point(const RocCurve& c, TargetKind kind, double target) {
  require(!c.points.empty(), ErrorCode::degenerate_input, "empty ROC curve");
  const bool sens = kind == TargetKind::sensitivity;
  const RocPoint* best = nullptr;
  for (const auto& p : c.points) {
    const double v = sens ? p.sensitivity : p.specificity, other = sens ? p.specificity : p.sensitivity;
    if (v < target) continue;
    if (best == nullptr) {
      best = &p;
      continue;
    }
    const double bv = sens ? best->sensitivity : best->specificity;
    const double bo = sens ? best->specificity : best->sensitivity;
    if (v < bv || (v == bv && other > bo)) best = &p;
  }
  if (best == nullptr) {
    const RocPoint& extreme = sens ? c.points.front() : c.points.back();
    return {extreme.threshold, extreme.sensitivity, extreme.specificity, true};
  }
  return {best->threshold, best->sensitivity, best->specificity, false};
}

// ---------------------------------------------------------------------------

enum class Aggregation { mean, max };

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::mean;
  if (s == "max") return Aggregation::max;
  fail(ErrorCode::invalid_argument, "unknown aggregation '" + s + "' (expected mean|max)");
}

inline std::string to_string(Aggregation a) { return a == Aggregation::mean ? "mean" : "max"; }

// One sample per patient, ordered by patient id; scan_id of the result is the
// patient id.
inline std::vector<ScoredSample> patient_aggregate(std::span<const ScoredSample> scans,
                                                   Aggregation mode = Aggregation::mean) {
  struct Acc {
    std::vector<double> scores;
    int label;
  };
  std::map<std::string, Acc> by_patient;
  for (const auto& s : scans) {
    auto [it, fresh] = by_patient.try_emplace(s.patient_id, Acc{{}, s.label});
    require(fresh || it->second.label == s.label, ErrorCode::invalid_argument,
            "patient '" + s.patient_id + "' has conflicting labels");
    it->second.scores.push_back(s.score);
  }
  std::vector<ScoredSample> out;
  for (auto& [pid, acc] : by_patient) {
    std::sort(acc.scores.begin(), acc.scores.end());
    double v = acc.scores.back();
    if (mode == Aggregation::mean) {
      double sum = 0;
      for (double x : acc.scores) sum += x;
      v = acc.scores.size() == 1 ? acc.scores[0] : sum / double(acc.scores.size());
    }
    out.push_back({v, acc.label, pid, pid});
  }
  return out;
}

}  // namespace echoflow::stats
