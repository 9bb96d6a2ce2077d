#pragma once

// Training-time 3D geometric and photometric clip augmentation.

#include <array>
#include <cmath>
#include <numbers>
#include <utility>

#include <Eigen/Dense>

#include "echoflow/error.hpp"
#include "echoflow/rng.hpp"
#include "echoflow/video.hpp"

namespace echoflow {

// Homogeneous affine over voxel coordinates ordered (t, y, x).
using Affine3 = Eigen::Matrix4d;

// Output voxel p takes the trilinear sample of the input at M^-1 p; samples
// outside the volume read as zero. Every channel is warped identically.
inline VideoTensor affine3d_warp(const VideoTensor& v, const Affine3& m) {
  Eigen::FullPivLU<Affine3> lu(m);
  require(lu.isInvertible(), ErrorCode::singular_matrix, "affine warp matrix is singular");
  const Affine3 inv = lu.inverse();
  VideoTensor out(v.frames, v.height, v.width, v.channels);
  const long nt = long(v.frames), ny = long(v.height), nx = long(v.width);
  const std::size_t nc = v.channels;

  for (long t = 0; t < nt; ++t)
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x) {
        const Eigen::Vector4d q = inv * Eigen::Vector4d(double(t), double(y), double(x), 1.0);
        const double ft = std::floor(q[0]), fy = std::floor(q[1]), fx = std::floor(q[2]);
        const double wt = q[0] - ft, wy = q[1] - fy, wx = q[2] - fx;
        const long t0 = long(ft), y0 = long(fy), x0 = long(fx);
        float* dst = &out.data[out.index(std::size_t(t), std::size_t(y), std::size_t(x))];
        for (int corner = 0; corner < 8; ++corner) {
          const long ct = t0 + (corner >> 2), cy = y0 + ((corner >> 1) & 1), cx = x0 + (corner & 1);
          if (ct < 0 || cy < 0 || cx < 0 || ct >= nt || cy >= ny || cx >= nx) continue;
          const double w = ((corner >> 2) ? wt : 1.0 - wt) * (((corner >> 1) & 1) ? wy : 1.0 - wy) *
                           ((corner & 1) ? wx : 1.0 - wx);
          if (w == 0.0) continue;
          const float* src = &v.data[v.index(std::size_t(ct), std::size_t(cy), std::size_t(cx))];
          for (std::size_t c = 0; c < nc; ++c) dst[c] = static_cast<float>(double(dst[c]) + w * double(src[c]));
        }
      }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentParams {
  // off-diagonal shear coefficients, pairs (t<-y, t<-x, y<-t, y<-x, x<-t, x<-y)
  std::array<Range, 6> shear = {Range{-0.1, 0.1}, {-0.1, 0.1}, {-0.1, 0.1},
                                {-0.1, 0.1}, {-0.1, 0.1}, {-0.1, 0.1}};
  Range scale{0.9, 1.1};
  bool scale_time = false;        // scale the temporal axis too
  Range rotation_deg{-10.0, 10.0};  // in-plane, about the t axis
  Range rotation_ty_deg{0.0, 0.0};  // out-of-plane (mixes t and y)
  Range rotation_tx_deg{0.0, 0.0};  // out-of-plane (mixes t and x)
  Range brightness{0.8, 1.2};

  static AugmentParams identity() {
    AugmentParams p;
    p.shear.fill(Range{0.0, 0.0});
    p.scale = {1.0, 1.0};
    p.rotation_deg = {0.0, 0.0};
    p.brightness = {1.0, 1.0};
    return p;
  }
};

inline void validate(const AugmentParams& p) {
  auto finite = [](Range r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi; };
  for (const auto& r : p.shear) require(finite(r), ErrorCode::invalid_argument, "shear range invalid");
  for (const auto& r : {p.scale, p.rotation_deg, p.rotation_ty_deg, p.rotation_tx_deg, p.brightness})
    require(finite(r), ErrorCode::invalid_argument, "augment range invalid");
  require(p.scale.lo > 0.0, ErrorCode::invalid_argument, "scale range must be positive");
  require(p.brightness.lo >= 0.0, ErrorCode::invalid_argument, "brightness range must be non-negative");
}

namespace detail {

inline double draw(Rng& rng, Range r) { return r.lo == r.hi ? r.lo : uniform(rng, r.lo, r.hi); }

inline Eigen::Matrix3d rotation(int a, int b, double degrees) {
  const double th = degrees * std::numbers::pi / 180.0;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  r(a, a) = std::cos(th);
  r(a, b) = -std::sin(th);
  r(b, a) = std::sin(th);
  r(b, b) = std::cos(th);
  return r;
}

}  // namespace detail

struct AugmentDraw {
  Affine3 transform = Affine3::Identity();
  double brightness = 1.0;
};

// Composes rotation * shear * scale about the volume centre.
inline AugmentDraw draw_augmentation(const AugmentParams& p, std::size_t frames, std::size_t height,
                                     std::size_t width, Rng& rng) {
  validate(p);
  Eigen::Matrix3d shear = Eigen::Matrix3d::Identity();
  const int pairs[6][2] = {{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}};
  for (int i = 0; i < 6; ++i) shear(pairs[i][0], pairs[i][1]) = detail::draw(rng, p.shear[std::size_t(i)]);
  const double s = detail::draw(rng, p.scale);
  const Eigen::Vector3d scale(p.scale_time ? s : 1.0, s, s);
  const Eigen::Matrix3d rot = detail::rotation(1, 2, detail::draw(rng, p.rotation_deg)) *
                              detail::rotation(0, 1, detail::draw(rng, p.rotation_ty_deg)) *
                              detail::rotation(0, 2, detail::draw(rng, p.rotation_tx_deg));
  AugmentDraw d;
  d.brightness = detail::draw(rng, p.brightness);

  const Eigen::Vector3d centre(0.5 * double(frames - 1), 0.5 * double(height - 1), 0.5 * double(width - 1));
  const Eigen::Matrix3d linear = rot * shear * scale.asDiagonal();
  d.transform.topLeftCorner<3, 3>() = linear;
  d.transform.topRightCorner<3, 1>() = centre - linear * centre;
  return d;
}

// One geometric draw warps both streams; brightness touches only the
// grayscale stream, which is then clamped to [0, 1]. Flow vectors are
// resampled, not re-oriented.
inline std::pair<Clip, VideoTensor> random_augment(const Clip& gray, const VideoTensor& flow,
                                                   const AugmentParams& params, Rng& rng) {
  const VideoTensor& g = gray.video;
  require(g.frames == flow.frames && g.height == flow.height && g.width == flow.width, ErrorCode::shape_mismatch,
          "gray clip " + shape_string(g) + " and flow clip " + shape_string(flow) + " differ in T/H/W");
  const auto d = draw_augmentation(params, g.frames, g.height, g.width, rng);
  const bool identity = d.transform.isIdentity(0.0);
  Clip out{identity ? g : affine3d_warp(g, d.transform), gray.scan_id, gray.start};
  VideoTensor flow_out = identity ? flow : affine3d_warp(flow, d.transform);
  if (d.brightness != 1.0)
    for (float& x : out.video.data) x = static_cast<float>(std::clamp(double(x) * d.brightness, 0.0, 1.0));
  return {std::move(out), std::move(flow_out)};
}

}  // namespace echoflow
