#pragma once

// DeLong variance of the empirical AUC from placement values, confidence
// intervals, and paired / unpaired comparison of two AUCs.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "echoflow/stats/roc.hpp"

namespace echoflow::stats {

struct AucEstimate {
  double auc = 0.0;
  double variance = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double alpha = 0.05;
  bool degenerate = false;  // variance is zero (e.g. perfect separation)
};

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }
inline double normal_cdf(double z) { return boost::math::cdf(boost::math::normal(), z); }

namespace detail {

inline double psi(double pos, double neg) { return pos > neg ? 1.0 : (pos == neg ? 0.5 : 0.0); }

struct Placements {
  std::vector<double> v10;  // per positive: fraction of negatives ranked below (ties 1/2)
  std::vector<double> v01;  // per negative: fraction of positives ranked above
  double auc = 0.0;
};

inline Placements placements(std::span<const double> pos, std::span<const double> neg) {
  Placements p;
  p.v10.assign(pos.size(), 0.0);
  p.v01.assign(neg.size(), 0.0);
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < neg.size(); ++j) {
      const double s = psi(pos[i], neg[j]);
      p.v10[i] += s;
      p.v01[j] += s;
    }
  double total = 0;
  for (auto& v : p.v10) {
    total += v;
    v /= double(neg.size());
  }
  for (auto& v : p.v01) v /= double(pos.size());
  p.auc = total / (double(pos.size()) * double(neg.size()));
  return p;
}

inline double covariance(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / (n - 1);
}

inline void split_by_class(std::span<const ScoredSample> s, std::vector<double>& pos, std::vector<double>& neg) {
  for (const auto& x : s) (x.label ? pos : neg).push_back(x.score);
}

}  // namespace detail

inline AucEstimate delong_ci(std::span<const ScoredSample> samples, double alpha = 0.05) {
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::invalid_argument, "alpha must lie in (0, 1)");
  const auto c = count_classes(samples);
  require(c.positives >= 2 && c.negatives >= 2, ErrorCode::degenerate_input,
          "DeLong needs at least 2 samples per class");
  std::vector<double> pos, neg;
  detail::split_by_class(samples, pos, neg);
  const auto p = detail::placements(pos, neg);
  AucEstimate e;
  e.alpha = alpha;
  e.auc = auc_trapezoid(samples);
  e.variance = std::max(0.0, detail::covariance(p.v10, p.v10) / double(pos.size()) +
                                 detail::covariance(p.v01, p.v01) / double(neg.size()));
  e.degenerate = e.variance == 0.0;
  const double half = normal_quantile(1.0 - alpha / 2.0) * std::sqrt(e.variance);
  e.ci_low = std::max(0.0, e.auc - half);
  e.ci_high = std::min(1.0, e.auc + half);
  return e;
}

struct AucComparison {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double delta = 0.0;  // auc_a - auc_b
  double variance = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double z = 0.0;
  double p_value = 1.0;
};

// Paired mode matches cases by scan_id and uses the covariance of the two
// estimators' placement values; unpaired mode sets that covariance to zero.
inline AucComparison delong_compare(std::span<const ScoredSample> a, std::span<const ScoredSample> b, bool paired,
                                    double alpha = 0.05) {
  std::vector<double> pa, na, pb, nb;
  if (paired) {
    require(a.size() == b.size(), ErrorCode::invalid_argument, "paired comparison needs identical case sets");
    std::map<std::string, const ScoredSample*> index;
    for (const auto& x : b) {
      require(index.emplace(x.scan_id, &x).second, ErrorCode::invalid_argument, "duplicate id '" + x.scan_id + "'");
    }
    for (const auto& x : a) {
      const auto it = index.find(x.scan_id);
      require(it != index.end(), ErrorCode::invalid_argument, "id '" + x.scan_id + "' missing from second set");
      require(it->second->label == x.label, ErrorCode::invalid_argument, "id '" + x.scan_id + "' has different labels");
      (x.label ? pa : na).push_back(x.score);
      (x.label ? pb : nb).push_back(it->second->score);
    }
  } else {
    detail::split_by_class(a, pa, na);
    detail::split_by_class(b, pb, nb);
  }
  for (const auto* v : {&pa, &na, &pb, &nb})
    require(v->size() >= 2, ErrorCode::degenerate_input, "DeLong comparison needs at least 2 samples per class");
  const auto A = detail::placements(pa, na);
  const auto B = detail::placements(pb, nb);
  auto var = [](const detail::Placements& p) {
    return detail::covariance(p.v10, p.v10) / double(p.v10.size()) +
           detail::covariance(p.v01, p.v01) / double(p.v01.size());
  };
  double cov = 0.0;
  if (paired)
    cov = detail::covariance(A.v10, B.v10) / double(A.v10.size()) +
          detail::covariance(A.v01, B.v01) / double(A.v01.size());
  AucComparison r;
  r.auc_a = A.auc;
  r.auc_b = B.auc;
  r.delta = A.auc - B.auc;
  r.variance = std::max(0.0, var(A) + var(B) - 2.0 * cov);
  const double sd = std::sqrt(r.variance);
  const double half = normal_quantile(1.0 - alpha / 2.0) * sd;
  r.ci_low = r.delta - half;
  r.ci_high = r.delta + half;
  if (r.delta == 0.0) {
    r.z = 0.0;
    r.p_value = 1.0;
  } else if (sd == 0.0) {
    r.z = r.delta > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
  } else {
    r.z = r.delta / sd;
    r.p_value = std::min(1.0, 2.0 * normal_cdf(-std::abs(r.z)));
  }
  return r;
}

}  // namespace echoflow::stats
