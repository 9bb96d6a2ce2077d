#pragma once

// CSV readers/writers for predictions and data matrices, plus the metrics
// report and curve-point tables.

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "echoflow/etns.hpp"
#include "echoflow/manifest.hpp"
#include "echoflow/stats/delong.hpp"
#include "echoflow/stats/impute.hpp"
#include "echoflow/stats/roc.hpp"

namespace echoflow::stats {

inline constexpr std::string_view kPredictionsHeader = "scan_id,patient_id,score,label";

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  require(ec == std::errc() && ptr == end, ErrorCode::invalid_argument, what + ": '" + s + "' is not a number");
  return v;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::vector<ScoredSample> parse_predictions(std::istream& in, const std::string& what = "predictions") {
  const auto t = parse_csv(in, what);
  const auto cs = t.column("scan_id"), cp = t.column("patient_id"), cv = t.column("score"), cl = t.column("label");
  std::vector<ScoredSample> out;
  for (const auto& r : t.rows) {
    ScoredSample s;
    s.scan_id = r[cs];
    s.patient_id = r[cp];
    s.score = parse_double(r[cv], what + " score");
    require(r[cl] == "0" || r[cl] == "1", ErrorCode::invalid_argument, what + ": label must be 0 or 1");
    s.label = r[cl] == "1";
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<ScoredSample> read_predictions(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
  return parse_predictions(in, path);
}

inline std::string format_predictions(const std::vector<ScoredSample>& s) {
  std::string out(kPredictionsHeader);
  out += '\n';
  for (const auto& x : s)
    out += x.scan_id + "," + x.patient_id + "," + format_double(x.score) + "," + std::to_string(x.label) + "\n";
  return out;
}

inline void write_text(const std::string& path, const std::string& text) { write_file_bytes(path, text); }

inline void write_predictions(const std::string& path, const std::vector<ScoredSample>& s) {
  write_text(path, format_predictions(s));
}

// First column holds row ids; remaining columns are numeric, empty = missing.
inline DataMatrix parse_data_matrix(std::istream& in, const std::string& what = "data matrix") {
  const auto t = parse_csv(in, what);
  require(t.header.size() >= 2, ErrorCode::invalid_argument, what + " needs an id column and at least one variable");
  DataMatrix d;
  d.columns.assign(t.header.begin() + 1, t.header.end());
  for (const auto& r : t.rows) {
    d.row_ids.push_back(r[0]);
    std::vector<double> row;
    for (std::size_t c = 1; c < r.size(); ++c)
      row.push_back(r[c].empty() ? std::numeric_limits<double>::quiet_NaN()
                                 : parse_double(r[c], what + " column " + t.header[c]));
    d.values.push_back(std::move(row));
  }
  return d;
}

inline DataMatrix read_data_matrix(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
  return parse_data_matrix(in, path);
}

inline std::string format_data_matrix(const DataMatrix& d, const std::string& id_header = "id") {
  std::string out = id_header;
  for (const auto& c : d.columns) out += "," + c;
  out += '\n';
  for (std::size_t i = 0; i < d.rows(); ++i) {
    out += d.row_ids[i];
    for (double v : d.values[i]) out += "," + (DataMatrix::missing(v) ? std::string() : format_double(v));
    out += '\n';
  }
  return out;
}

inline std::string format_roc_csv(const RocCurve& c) {
  std::string out = "threshold,sensitivity,specificity,tp,fp\n";
  for (const auto& p : c.points)
    out += (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) + "," +
           format_double(p.sensitivity) + "," + format_double(p.specificity) + "," + std::to_string(p.tp) + "," +
           std::to_string(p.fp) + "\n";
  return out;
}

inline std::string format_pr_csv(const std::vector<PrPoint>& pts) {
  std::string out = "recall,precision\n";
  for (const auto& p : pts) out += format_double(p.recall) + "," + format_double(p.precision) + "\n";
  return out;
}

struct MetricsReport {
  std::string level;
  std::size_t n = 0;
  std::size_t positives = 0;
  AucEstimate auc;
  double pr_auc = 0.0;
  OperatingPoint at_sensitivity;
  OperatingPoint at_specificity;
  double target = 0.8;
};

inline MetricsReport compute_metrics(std::span<const ScoredSample> s, const std::string& level, double alpha = 0.05,
                                     double target = 0.8) {
  MetricsReport r;
  r.level = level;
  r.n = s.size();
  r.positives = count_classes(s).positives;
  r.auc = delong_ci(s, alpha);
  r.pr_auc = pr_auc_davis_goadrich(s);
  const auto curve = roc_curve(s);
  r.at_sensitivity = operating_point(curve, TargetKind::sensitivity, target);
  r.at_specificity = operating_point(curve, TargetKind::specificity, target);
  r.target = target;
  return r;
}

inline nlohmann::ordered_json to_json(const OperatingPoint& p) {
  return {{"threshold", std::isinf(p.threshold) ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(p.threshold)},
          {"sensitivity", p.sensitivity},
          {"specificity", p.specificity},
          {"target_unreachable", p.target_unreachable}};
}

inline std::string format_metrics(const MetricsReport& r) {
  nlohmann::ordered_json j = {
      {"level", r.level},
      {"n", r.n},
      {"positives", r.positives},
      {"auc", r.auc.auc},
      {"auc_variance", r.auc.variance},
      {"ci_low", r.auc.ci_low},
      {"ci_high", r.auc.ci_high},
      {"alpha", r.auc.alpha},
      {"variance_degenerate", r.auc.degenerate},
      {"pr_auc", r.pr_auc},
      {"operating_point_sensitivity", to_json(r.at_sensitivity)},
      {"operating_point_specificity", to_json(r.at_specificity)},
      {"operating_target", r.target}};
  return j.dump(2) + "\n";
}

}  // namespace echoflow::stats
