#pragma once

// Synthetic echo-like videos: a bright elliptical wall around a dark chamber
// inside a fan-shaped sector, contracting periodically. Weak contraction is
// the positive class. Also a moving-blob toy corpus and patient-level
// stratified splitting.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "echoflow/error.hpp"
#include "echoflow/manifest.hpp"
#include "echoflow/rng.hpp"
#include "echoflow/video.hpp"

namespace echoflow::synth {

inline constexpr double kLabelThreshold = 0.5;  // amplitude below this is labelled 1
inline constexpr double kMaxShrink = 0.4;        // chamber axis shrink at amplitude 1

struct SynthParams {
  std::size_t frames = 40;
  std::size_t height = 64;
  std::size_t width = 64;
  double sector_half_angle_deg = 40.0;
  double sector_radius = 0.97;  // fraction of height
  double center_y = 0.55;       // chamber centre, fractions of H and W
  double center_x = 0.5;
  double axis_y = 0.22;  // chamber semi-axes at full expansion, fractions of H and W
  double axis_x = 0.15;
  double wall_thickness = 0.08;  // fraction of H
  double amplitude = 0.8;
  double noise = 0.03;
  double period = 12.0;  // frames per heartbeat
  std::uint64_t seed = 0;
};

inline void validate(const SynthParams& p) {
  require(p.amplitude >= 0.0 && p.amplitude <= 1.0, ErrorCode::invalid_argument, "amplitude must lie in [0, 1]");
  require(p.period >= 4.0, ErrorCode::invalid_argument, "period must be >= 4 frames");
  require(p.height >= 16 && p.width >= 16, ErrorCode::invalid_argument, "resolution must be >= 16");
  require(p.frames >= 1, ErrorCode::invalid_argument, "need at least one frame");
  require(p.noise >= 0.0 && p.axis_y > 0.0 && p.axis_x > 0.0 && p.wall_thickness > 0.0, ErrorCode::invalid_argument,
          "noise, axes and wall thickness must be positive");
}

inline int label_for(double amplitude) { return amplitude < kLabelThreshold ? 1 : 0; }

// Chamber scale at frame t; 1 at t = 0 (end-diastole) for every amplitude.
inline double contraction(const SynthParams& p, double t) {
  return 1.0 - p.amplitude * kMaxShrink * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / p.period));
}

inline bool in_sector(const SynthParams& p, double y, double x) {
  const double dy = y, dx = x - 0.5 * double(p.width - 1);
  const double r = std::hypot(dy, dx);
  const double ang = std::atan2(std::abs(dx), dy) * 180.0 / std::numbers::pi;
  return r <= p.sector_radius * double(p.height) && ang <= p.sector_half_angle_deg;
}

namespace detail {

inline double soft_inside(double signed_dist, double softness) { return 1.0 / (1.0 + std::exp(signed_dist / softness)); }

}  // namespace detail

// Noise-free intensity at (t, y, x).
inline double clean_intensity(const SynthParams& p, double t, double y, double x) {
  constexpr double kBackground = 0.25, kWall = 0.85, kChamber = 0.06, kSoft = 0.6;
  const double c = contraction(p, t);
  const double cy = p.center_y * double(p.height), cx = p.center_x * double(p.width);
  const double ay = p.axis_y * double(p.height) * c, ax = p.axis_x * double(p.width) * c;
  // the wall thickens as the chamber shrinks
  const double wall = p.wall_thickness * double(p.height) / std::sqrt(c);
  auto dist = [&](double a, double b) {
    const double rho = std::hypot((y - cy) / a, (x - cx) / b);
    return (rho - 1.0) * std::sqrt(a * b);
  };
  const double chamber = detail::soft_inside(dist(ay, ax), kSoft);
  const double outer = detail::soft_inside(dist(ay + wall, ax + wall), kSoft);
  return kBackground + (kWall - kBackground) * outer * (1.0 - chamber) + (kChamber - kBackground) * chamber;
}

// T x H x W x 1 in [0, 1]; pixels outside the sector are 0.
inline VideoTensor gen_video(const SynthParams& p) {
  validate(p);
  Rng rng(p.seed);
  VideoTensor v(p.frames, p.height, p.width, 1);
  for (std::size_t t = 0; t < p.frames; ++t)
    for (std::size_t y = 0; y < p.height; ++y)
      for (std::size_t x = 0; x < p.width; ++x) {
        const double n = p.noise > 0.0 ? p.noise * standard_normal(rng) : 0.0;
        if (!in_sector(p, double(y), double(x))) continue;
        v.at(t, y, x) = float(std::clamp(clean_intensity(p, double(t), double(y), double(x)) + n, 0.0, 1.0));
      }
  return v;
}

// Anatomy and timing drawn independently of the class; only the amplitude
// depends on the label. Frame 0 therefore has the same distribution in both
// classes.
inline SynthParams draw_params(int label, Rng& rng, std::size_t frames, std::size_t height, std::size_t width) {
  SynthParams p;
  p.frames = frames;
  p.height = height;
  p.width = width;
  p.center_y = uniform(rng, 0.50, 0.60);
  p.center_x = uniform(rng, 0.45, 0.55);
  p.axis_y = 0.22 * uniform(rng, 0.9, 1.1);
  p.axis_x = 0.15 * uniform(rng, 0.9, 1.1);
  p.wall_thickness = 0.08 * uniform(rng, 0.9, 1.1);
  p.period = uniform(rng, 10.0, 16.0);
  p.amplitude = label ? uniform(rng, 0.0, 0.3) : uniform(rng, 0.7, 1.0);
  p.seed = rng();
  return p;
}

// The first frame repeated: all temporal information removed.
inline VideoTensor static_copy(const VideoTensor& v) {
  VideoTensor out = v;
  const std::size_t fs = v.frame_size();
  for (std::size_t t = 1; t < v.frames; ++t)
    std::copy_n(v.data.begin(), fs, out.data.begin() + long(t * fs));
  return out;
}

struct DatasetOptions {
  std::size_t n = 64;
  double positive_fraction = 0.25;
  std::size_t scans_per_patient = 1;
  std::size_t frames = 40;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 0;
};

inline std::size_t round_half_up(double x) { return std::size_t(std::floor(x + 0.5)); }

struct GeneratedScan {
  ManifestRow row;
  SynthParams params;
};

// Patient p (0-based) is positive for p < round(n_patients * fraction); each
// patient's scans share the label and differ in anatomy, timing and noise.
inline std::vector<GeneratedScan> plan_dataset(const DatasetOptions& o) {
  require(o.n >= 8, ErrorCode::invalid_argument, "synthetic dataset needs n >= 8");
  require(o.positive_fraction > 0.0 && o.positive_fraction < 1.0, ErrorCode::invalid_argument,
          "positive_fraction must lie in (0, 1)");
  require(o.scans_per_patient >= 1, ErrorCode::invalid_argument, "scans_per_patient must be >= 1");
  const std::size_t patients = (o.n + o.scans_per_patient - 1) / o.scans_per_patient;
  const std::size_t positives = round_half_up(double(patients) * o.positive_fraction);
  std::vector<GeneratedScan> out;
  for (std::size_t i = 0; i < o.n; ++i) {
    const std::size_t pid = i / o.scans_per_patient;
    const int label = pid < positives ? 1 : 0;
    Rng rng = make_rng(o.seed, i);
    GeneratedScan g;
    g.params = draw_params(label, rng, o.frames, o.height, o.width);
    char scan[32], patient[32];
    std::snprintf(scan, sizeof scan, "scan%04zu", i);
    std::snprintf(patient, sizeof patient, "pt%04zu", pid);
    g.row = {scan, patient, "videos/" + std::string(scan) + ".etns", "", label, Split::unassigned};
    out.push_back(std::move(g));
  }
  return out;
}

// Writes videos/<scan>.etns, manifest.csv and truth.csv (generating
// amplitudes) under out_dir.
inline Manifest gen_dataset(const DatasetOptions& o, const std::filesystem::path& out_dir) {
  const auto plan = plan_dataset(o);
  std::filesystem::create_directories(out_dir / "videos");
  Manifest m;
  m.base_dir = out_dir;
  std::string truth = "scan_id,amplitude,label\n";
  for (const auto& g : plan) {
    write_video((out_dir / g.row.video_path).string(), gen_video(g.params));
    m.rows.push_back(g.row);
    char amp[64];
    std::snprintf(amp, sizeof amp, "%.17g", g.params.amplitude);
    truth += g.row.scan_id + "," + amp + "," + std::to_string(g.row.label) + "\n";
  }
  write_manifest((out_dir / "manifest.csv").string(), m);
  write_file_bytes((out_dir / "truth.csv").string(), truth);
  return m;
}

// ---------------------------------------------------------------------------

struct SplitRatios {
  double train = 0.66;
  double val = 0.17;
  double test = 0.17;
};

// Patient-level split, stratified by label: within each class the patients
// are shuffled and round(n_c * ratio) go to test and val, the rest to train.
inline Manifest stratified_split(Manifest m, const SplitRatios& r, std::uint64_t seed) {
  validate(m);
  require(r.train > 0 && r.val >= 0 && r.test >= 0 && std::abs(r.train + r.val + r.test - 1.0) < 1e-9,
          ErrorCode::invalid_argument, "split ratios must be nonnegative and sum to 1");
  std::map<std::string, int> patient_label;
  for (const auto& row : m.rows) patient_label[row.patient_id] = row.label;
  std::map<std::string, Split> assign;
  for (int cls : {0, 1}) {
    std::vector<std::string> ids;
    for (const auto& [pid, y] : patient_label)
      if (y == cls) ids.push_back(pid);
    Rng rng = make_rng(seed, std::uint64_t(cls));
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n_test = round_half_up(double(ids.size()) * r.test);
    const std::size_t n_val = round_half_up(double(ids.size()) * r.val);
    require(n_test + n_val < ids.size() && (r.test == 0 || n_test >= 1) && (r.val == 0 || n_val >= 1),
            ErrorCode::degenerate_input,
            "too few patients of class " + std::to_string(cls) + " (" + std::to_string(ids.size()) +
                ") for a split with every class in every part");
    for (std::size_t i = 0; i < ids.size(); ++i)
      assign[ids[i]] = i < n_test ? Split::test : (i < n_test + n_val ? Split::val : Split::train);
  }
  for (auto& row : m.rows) row.split = assign.at(row.patient_id);
  return m;
}

// ---------------------------------------------------------------------------
// moving blob

struct BlobParams {
  std::size_t frames = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  double radius = 3.0;       // Gaussian sigma in pixels
  double travel = 6.0;       // peak horizontal excursion for moving blobs
  double period = 8.0;
  double center_y = 16.0;
  double center_x = 16.0;
  bool moving = true;
  double noise = 0.02;
  std::uint64_t seed = 0;
};

inline double blob_x(const BlobParams& p, double t) {
  return p.center_x + (p.moving ? p.travel * std::sin(2.0 * std::numbers::pi * t / p.period) : 0.0);
}

inline VideoTensor gen_blob_video(const BlobParams& p) {
  Rng rng(p.seed);
  VideoTensor v(p.frames, p.height, p.width, 1);
  for (std::size_t t = 0; t < p.frames; ++t) {
    const double bx = blob_x(p, double(t));
    for (std::size_t y = 0; y < p.height; ++y)
      for (std::size_t x = 0; x < p.width; ++x) {
        const double d2 = (double(y) - p.center_y) * (double(y) - p.center_y) + (double(x) - bx) * (double(x) - bx);
        const double val = std::exp(-0.5 * d2 / (p.radius * p.radius)) + p.noise * standard_normal(rng);
        v.at(t, y, x) = float(std::clamp(val, 0.0, 1.0));
      }
  }
  return v;
}

// Pixels within `dilate` of the blob's 2-sigma disc at some frame, as an
// H x W mask.
inline SectorMask blob_region(const BlobParams& p, double dilate) {
  SectorMask m(p.height, p.width, 0);
  const double r = 2.0 * p.radius + dilate;
  for (std::size_t t = 0; t < p.frames; ++t) {
    const double bx = blob_x(p, double(t));
    for (std::size_t y = 0; y < p.height; ++y)
      for (std::size_t x = 0; x < p.width; ++x)
        if (std::hypot(double(y) - p.center_y, double(x) - bx) <= r) m(y, x) = 1;
  }
  return m;
}

// Label 1 = moving. Position varies per video, independent of the label.
inline BlobParams draw_blob(int label, Rng& rng, std::size_t frames, std::size_t size) {
  BlobParams p;
  p.frames = frames;
  p.height = p.width = size;
  p.moving = label == 1;
  p.radius = 0.09 * double(size);
  p.travel = 0.18 * double(size);
  p.center_y = uniform(rng, 0.35, 0.65) * double(size);
  p.center_x = uniform(rng, 0.4, 0.6) * double(size);
  p.period = uniform(rng, 6.0, 10.0);
  p.seed = rng();
  return p;
}

}  // namespace echoflow::synth
