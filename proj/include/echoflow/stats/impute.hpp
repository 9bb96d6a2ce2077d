#pragma once

// Multiple imputation by chained equations with predictive mean matching, and
// Rubin's-rules pooling of per-imputation AUC estimates.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "echoflow/error.hpp"
#include "echoflow/rng.hpp"
#include "echoflow/stats/delong.hpp"

namespace echoflow::stats {

// Rows are patients, columns continuous variables; NaN marks a missing entry.
struct DataMatrix {
  std::vector<std::string> columns;
  std::vector<std::string> row_ids;
  std::vector<std::vector<double>> values;

  std::size_t rows() const { return values.size(); }
  std::size_t cols() const { return columns.size(); }
  static bool missing(double v) { return std::isnan(v); }
  std::size_t missing_count() const {
    std::size_t n = 0;
    for (const auto& r : values)
      for (double v : r) n += missing(v) ? 1 : 0;
    return n;
  }
};

inline void validate(const DataMatrix& d) {
  require(d.row_ids.size() == d.values.size(), ErrorCode::shape_mismatch, "row ids and rows differ in count");
  for (const auto& r : d.values)
    require(r.size() == d.cols(), ErrorCode::shape_mismatch, "ragged data matrix");
}

struct PmmOptions {
  std::size_t m = 20;
  std::size_t maxit = 50;
  std::size_t donors = 5;
  std::uint64_t seed = 0;
  double ridge = 1e-5;
};

namespace detail {

inline std::vector<double> observed(const DataMatrix& d, std::size_t j) {
  std::vector<double> out;
  for (const auto& r : d.values)
    if (!DataMatrix::missing(r[j])) out.push_back(r[j]);
  return out;
}

// One chained-equation sweep target: regress column j on the other columns
// over rows where j is observed, perturb the coefficients with a Bayesian
// draw, then match each missing row to one of the `donors` closest observed
// predictions (type-1 matching: observed rows use the fitted coefficients,
// missing rows the drawn ones).
inline void pmm_column(std::vector<std::vector<double>>& cur, const std::vector<std::vector<bool>>& miss,
                       std::size_t j, const PmmOptions& opt, Rng& rng) {
  const std::size_t n = cur.size(), p = cur.front().size();
  std::vector<std::size_t> obs, mis;
  for (std::size_t i = 0; i < n; ++i) (miss[i][j] ? mis : obs).push_back(i);
  if (mis.empty()) return;
  const std::size_t k = p;  // intercept + (p - 1) predictors
  auto row = [&](std::size_t i) {
    Eigen::VectorXd x(k);
    x[0] = 1.0;
    for (std::size_t c = 0, q = 1; c < p; ++c)
      if (c != j) x[long(q++)] = cur[i][c];
    return x;
  };
  Eigen::MatrixXd X(long(obs.size()), long(k));
  Eigen::VectorXd y(long(obs.size()));
  for (std::size_t r = 0; r < obs.size(); ++r) {
    X.row(long(r)) = row(obs[r]).transpose();
    y[long(r)] = cur[obs[r]][j];
  }
  Eigen::MatrixXd xtx = X.transpose() * X;
  xtx.diagonal() += opt.ridge * xtx.diagonal().cwiseMax(1e-12);
  const Eigen::LLT<Eigen::MatrixXd> llt(xtx);
  require(llt.info() == Eigen::Success, ErrorCode::singular_matrix,
          "imputation regression is singular for column " + std::to_string(j));
  const Eigen::VectorXd beta = llt.solve(X.transpose() * y);
  const Eigen::VectorXd resid = y - X * beta;
  const double df = std::max(1.0, double(obs.size()) - double(k));
  const double g = std::chi_squared_distribution<double>(df)(rng);
  const double sigma = std::sqrt(resid.squaredNorm() / g);
  const Eigen::MatrixXd v = llt.solve(Eigen::MatrixXd::Identity(long(k), long(k)));
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(v).matrixL();
  Eigen::VectorXd z(static_cast<long>(k));
  for (long c = 0; c < long(k); ++c) z[c] = standard_normal(rng);
  const Eigen::VectorXd beta_star = beta + sigma * chol * z;

  std::vector<double> yhat_obs(obs.size());
  for (std::size_t r = 0; r < obs.size(); ++r) yhat_obs[r] = row(obs[r]).dot(beta);
  const std::size_t donors = std::min(opt.donors, obs.size());
  std::vector<std::size_t> order(obs.size());
  for (std::size_t i : mis) {
    const double target = row(i).dot(beta_star);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + long(donors), order.end(), [&](std::size_t a, std::size_t b) {
      const double da = std::abs(yhat_obs[a] - target), db = std::abs(yhat_obs[b] - target);
      return da < db || (da == db && a < b);
    });
    const std::size_t pick = order[uniform_index(rng, 0, donors - 1)];
    cur[i][j] = cur[obs[pick]][j];
  }
}

}  // namespace detail

inline std::vector<DataMatrix> pmm_chained_impute(const DataMatrix& data, const PmmOptions& opt = {}) {
  validate(data);
  require(opt.m >= 1 && opt.maxit >= 1 && opt.donors >= 1, ErrorCode::invalid_argument,
          "m, maxit and donors must be >= 1");
  const std::size_t n = data.rows(), p = data.cols();
  std::vector<std::vector<bool>> miss(n, std::vector<bool>(p, false));
  std::vector<std::size_t> targets;
  for (std::size_t j = 0; j < p; ++j) {
    std::size_t nmiss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      miss[i][j] = DataMatrix::missing(data.values[i][j]);
      nmiss += miss[i][j] ? 1 : 0;
    }
    if (nmiss == 0) continue;
    require(nmiss < n, ErrorCode::degenerate_input, "column '" + data.columns[j] + "' is entirely missing");
    require(n - nmiss >= opt.donors, ErrorCode::degenerate_input,
            "column '" + data.columns[j] + "' has " + std::to_string(n - nmiss) + " observed values, fewer than " +
                std::to_string(opt.donors) + " donors");
    targets.push_back(j);
  }

  std::vector<DataMatrix> out(opt.m, data);
  if (targets.empty()) return out;
  for (std::size_t chain = 0; chain < opt.m; ++chain) {
    Rng rng = make_rng(opt.seed, chain);
    auto cur = data.values;
    for (std::size_t j : targets) {
      const auto obs = detail::observed(data, j);
      for (std::size_t i = 0; i < n; ++i)
        if (miss[i][j]) cur[i][j] = obs[uniform_index(rng, 0, obs.size() - 1)];
    }
    for (std::size_t it = 0; it < opt.maxit; ++it)
      for (std::size_t j : targets) detail::pmm_column(cur, miss, j, opt, rng);
    out[chain].values = std::move(cur);
  }
  return out;
}

// ---------------------------------------------------------------------------

enum class PoolTransform { log, logit, none };

inline PoolTransform parse_transform(const std::string& s) {
  if (s == "log") return PoolTransform::log;
  if (s == "logit") return PoolTransform::logit;
  if (s == "none") return PoolTransform::none;
  fail(ErrorCode::invalid_argument, "unknown pooling transform '" + s + "' (expected log|logit|none)");
}

inline std::string to_string(PoolTransform t) {
  switch (t) {
    case PoolTransform::log: return "log";
    case PoolTransform::logit: return "logit";
    case PoolTransform::none: return "none";
  }
  return "?";
}

struct PerImputation {
  double auc = 0.0;
  double variance = 0.0;
};

struct PooledEstimate {
  std::size_t m = 0;
  PoolTransform transform = PoolTransform::log;
  double mean_transformed = 0.0;  // Q-bar
  double within = 0.0;            // U-bar
  double between = 0.0;          // B
  double total = 0.0;            // T = U-bar + (1 + 1/m) B
  double df = std::numeric_limits<double>::infinity();
  double auc = 0.0;  // back-transformed pooled point
  double ci_low = 0.0;
  double ci_high = 0.0;
  double alpha = 0.05;
};

namespace detail {

// Mean that returns the common value exactly when all inputs are equal.
inline double anchored_mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x - v.front();
  return v.front() + s / double(v.size());
}

}  // namespace detail

inline PooledEstimate rubin_pool_auc(const std::vector<PerImputation>& est, PoolTransform t = PoolTransform::log,
                                     double alpha = 0.05) {
  const std::size_t m = est.size();
  require(m >= 2, ErrorCode::invalid_argument, "Rubin pooling needs m >= 2 imputations");
  std::vector<double> q(m), u(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double a = est[i].auc, v = est[i].variance;
    require(std::isfinite(a) && std::isfinite(v) && v >= 0.0, ErrorCode::invalid_argument,
            "imputation estimates must be finite with nonnegative variance");
    require(a > 0.0 && a <= 1.0, ErrorCode::invalid_argument,
            "AUC " + std::to_string(a) + " outside (0, 1] cannot be pooled");
    switch (t) {
      case PoolTransform::log:
        q[i] = std::log(a);
        u[i] = v / (a * a);
        break;
      case PoolTransform::logit:
        require(a < 1.0, ErrorCode::invalid_argument, "logit pooling needs AUC < 1");
        q[i] = std::log(a / (1.0 - a));
        u[i] = v / (a * (1.0 - a) * a * (1.0 - a));
        break;
      case PoolTransform::none:
        q[i] = a;
        u[i] = v;
        break;
    }
  }
  PooledEstimate r;
  r.m = m;
  r.transform = t;
  r.alpha = alpha;
  r.mean_transformed = detail::anchored_mean(q);
  r.within = detail::anchored_mean(u);
  double b = 0;
  for (double x : q) b += (x - r.mean_transformed) * (x - r.mean_transformed);
  r.between = b / double(m - 1);
  r.total = r.within + (1.0 + 1.0 / double(m)) * r.between;
  const double inflated = (1.0 + 1.0 / double(m)) * r.between;
  double crit;
  if (inflated > 0.0) {
    const double ratio = r.within / inflated;
    r.df = double(m - 1) * (1.0 + ratio) * (1.0 + ratio);
    crit = boost::math::quantile(boost::math::students_t(r.df), 1.0 - alpha / 2.0);
  } else {
    crit = normal_quantile(1.0 - alpha / 2.0);
  }
  auto back = [t](double x) {
    switch (t) {
      case PoolTransform::log: return std::exp(x);
      case PoolTransform::logit: return 1.0 / (1.0 + std::exp(-x));
      case PoolTransform::none: return x;
    }
    return x;
  };
  const double half = crit * std::sqrt(r.total);
  r.auc = back(r.mean_transformed);
  r.ci_low = back(r.mean_transformed - half);
  r.ci_high = back(r.mean_transformed + half);
  return r;
}

}  // namespace echoflow::stats
