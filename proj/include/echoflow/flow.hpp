#pragma once

// Dense two-frame motion estimation by local polynomial expansion
// (Farneback-style), coarse-to-fine over an image pyramid.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "echoflow/error.hpp"
#include "echoflow/video.hpp"

namespace echoflow {

struct Plane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}

  double& operator()(std::size_t y, std::size_t x) { return data[y * width + x]; }
  double operator()(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  double clamped(long y, long x) const {
    y = std::clamp<long>(y, 0, static_cast<long>(height) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(width) - 1);
    return data[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
  }

  // Edge-clamped bilinear sample at continuous (y, x).
  double sample(double y, double x) const {
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const auto y0 = static_cast<long>(std::floor(y)), x0 = static_cast<long>(std::floor(x));
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    const double a = clamped(y0, x0), b = clamped(y0, x0 + 1);
    const double c = clamped(y0 + 1, x0), d = clamped(y0 + 1, x0 + 1);
    const double top = a + (b - a) * fx, bottom = c + (d - c) * fx;
    return top + (bottom - top) * fy;
  }
};

inline Plane frame_plane(const VideoTensor& v, std::size_t t, std::size_t channel = 0) {
  require(t < v.frames && channel < v.channels, ErrorCode::invalid_argument, "frame index out of range");
  Plane p(v.height, v.width);
  for (std::size_t y = 0; y < v.height; ++y)
    for (std::size_t x = 0; x < v.width; ++x) p(y, x) = v.at(t, y, x, channel);
  return p;
}

// Per-pixel quadratic model f(p + u) ~ u'Au + b'u + c with A = [[axx, axy], [axy, ayy]],
// u = (dx, dy).
struct PolyExpansion {
  std::size_t height = 0;
  std::size_t width = 0;
  Plane axx, axy, ayy, bx, by, c;
};

// Displacement in pixels per frame; (dx, dy) interleaved, row-major.
struct FlowField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  FlowField() = default;
  FlowField(std::size_t h, std::size_t w) : height(h), width(w), data(2 * h * w, 0.0f) {}

  float& dx(std::size_t y, std::size_t x) { return data[2 * (y * width + x)]; }
  float& dy(std::size_t y, std::size_t x) { return data[2 * (y * width + x) + 1]; }
  float dx(std::size_t y, std::size_t x) const { return data[2 * (y * width + x)]; }
  float dy(std::size_t y, std::size_t x) const { return data[2 * (y * width + x) + 1]; }
};

struct FlowParams {
  std::size_t pyramid_levels = 3;
  double pyramid_scale = 0.5;
  std::size_t window_size = 15;
  std::size_t iterations = 3;
  std::size_t poly_n = 5;  // expansion window width (odd)
  double poly_sigma = 1.1;
};

// Tikhonov weight for the per-pixel 2x2 solve, relative to the frame's mean
// structure-tensor trace; the absolute floor keeps texture-free pairs at zero.
inline constexpr double kFlowRegularization = 1e-6;
inline constexpr double kFlowRegularizationFloor = 1e-12;

inline void validate(const FlowParams& p, std::size_t height, std::size_t width) {
  require(p.pyramid_levels >= 1, ErrorCode::invalid_argument, "pyramid_levels must be >= 1");
  require(p.pyramid_scale > 0.0 && p.pyramid_scale < 1.0, ErrorCode::invalid_argument,
          "pyramid_scale must lie in (0, 1)");
  require(p.window_size >= 1 && p.iterations >= 1, ErrorCode::invalid_argument,
          "window_size and iterations must be >= 1");
  require(p.poly_n >= 3 && p.poly_n % 2 == 1, ErrorCode::invalid_argument, "poly_n must be odd and >= 3");
  require(p.poly_sigma > 0.0, ErrorCode::invalid_argument, "poly_sigma must be positive");
  const double coarsest =
      static_cast<double>(std::min(height, width)) * std::pow(p.pyramid_scale, double(p.pyramid_levels - 1));
  require(coarsest >= static_cast<double>(p.poly_n), ErrorCode::invalid_argument,
          "coarsest pyramid level (" + std::to_string(coarsest) + " px) is smaller than poly_n");
}

// Weighted least-squares fit of a quadratic over a poly_n x poly_n window with
// Gaussian weights; borders replicate. Because the window geometry is the same
// at every pixel, the fit reduces to a fixed 6 x K projection.
inline PolyExpansion polynomial_expansion(const Plane& frame, std::size_t poly_n, double poly_sigma) {
  require(poly_n >= 3 && poly_n % 2 == 1, ErrorCode::invalid_argument,
          "poly_n must be odd and >= 3, got " + std::to_string(poly_n));
  require(poly_sigma > 0.0, ErrorCode::invalid_argument, "poly_sigma must be positive");
  require(frame.height >= poly_n && frame.width >= poly_n, ErrorCode::invalid_argument,
          "frame smaller than the expansion window");
  const int r = static_cast<int>(poly_n / 2);
  const int k = static_cast<int>(poly_n * poly_n);

  // basis order: 1, x, y, x^2, y^2, xy
  Eigen::MatrixXd basis(k, 6);
  Eigen::VectorXd weight(k);
  int row = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx, ++row) {
      basis.row(row) << 1.0, dx, dy, double(dx * dx), double(dy * dy), double(dx * dy);
      weight(row) = std::exp(-(dx * dx + dy * dy) / (2.0 * poly_sigma * poly_sigma));
    }
  const Eigen::MatrixXd bw = basis.transpose() * weight.asDiagonal();
  const Eigen::MatrixXd proj = (bw * basis).ldlt().solve(bw);  // 6 x K

  PolyExpansion out{frame.height, frame.width, {}, {}, {}, {}, {}, {}};
  for (Plane* p : {&out.axx, &out.axy, &out.ayy, &out.bx, &out.by, &out.c}) *p = Plane(frame.height, frame.width);
  std::vector<double> patch(static_cast<std::size_t>(k));
  for (std::size_t y = 0; y < frame.height; ++y)
    for (std::size_t x = 0; x < frame.width; ++x) {
      std::size_t i = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) patch[i++] = frame.clamped(long(y) + dy, long(x) + dx);
      std::array<double, 6> coef{};
      for (int j = 0; j < 6; ++j) {
        double s = 0.0;
        for (int q = 0; q < k; ++q) s += proj(j, q) * patch[static_cast<std::size_t>(q)];
        coef[static_cast<std::size_t>(j)] = s;
      }
      out.c(y, x) = coef[0];
      out.bx(y, x) = coef[1];
      out.by(y, x) = coef[2];
      out.axx(y, x) = coef[3];
      out.ayy(y, x) = coef[4];
      out.axy(y, x) = 0.5 * coef[5];
    }
  return out;
}

namespace detail {

inline Plane box_blur(const Plane& in, std::size_t size) {
  if (size <= 1) return in;
  const long r = static_cast<long>(size / 2);
  const double norm = 1.0 / static_cast<double>(2 * r + 1);
  Plane tmp(in.height, in.width), out(in.height, in.width);
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d) s += in.clamped(long(y), long(x) + d);
      tmp(y, x) = s * norm;
    }
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d) s += tmp.clamped(long(y) + d, long(x));
      out(y, x) = s * norm;
    }
  return out;
}

inline Plane gaussian_blur(const Plane& in, double sigma) {
  if (sigma <= 0.0) return in;
  const long r = std::max<long>(1, static_cast<long>(std::ceil(sigma * 2.5)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (long d = -r; d <= r; ++d) sum += k[static_cast<std::size_t>(d + r)] = std::exp(-(d * d) / (2 * sigma * sigma));
  for (double& v : k) v /= sum;
  Plane tmp(in.height, in.width), out(in.height, in.width);
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d) s += k[static_cast<std::size_t>(d + r)] * in.clamped(long(y), long(x) + d);
      tmp(y, x) = s;
    }
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d) s += k[static_cast<std::size_t>(d + r)] * tmp.clamped(long(y) + d, long(x));
      out(y, x) = s;
    }
  return out;
}

inline Plane resize_plane(const Plane& in, std::size_t h, std::size_t w) {
  if (h == in.height && w == in.width) return in;
  Plane out(h, w);
  const double sy = double(in.height) / double(h), sx = double(in.width) / double(w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out(y, x) = in.sample((double(y) + 0.5) * sy - 0.5, (double(x) + 0.5) * sx - 0.5);
  return out;
}

// Per-pixel normal-equation terms G = A'A (symmetric) and h = A'db.
struct FlowSystem {
  Plane g11, g12, g22, h1, h2;
};

inline FlowSystem flow_system(const PolyExpansion& e1, const PolyExpansion& e2, const Plane& fx, const Plane& fy) {
  const std::size_t hgt = e1.height, wid = e1.width;
  FlowSystem s{Plane(hgt, wid), Plane(hgt, wid), Plane(hgt, wid), Plane(hgt, wid), Plane(hgt, wid)};
  for (std::size_t y = 0; y < hgt; ++y)
    for (std::size_t x = 0; x < wid; ++x) {
      const double dx = fx(y, x), dy = fy(y, x);
      const double sy = double(y) + dy, sx = double(x) + dx;
      // displaced position outside the frame carries no information
      if (sy < 0.0 || sx < 0.0 || sy > double(hgt - 1) || sx > double(wid - 1)) continue;
      const double a11 = 0.5 * (e1.axx(y, x) + e2.axx.sample(sy, sx));
      const double a12 = 0.5 * (e1.axy(y, x) + e2.axy.sample(sy, sx));
      const double a22 = 0.5 * (e1.ayy(y, x) + e2.ayy.sample(sy, sx));
      const double db1 = -0.5 * (e2.bx.sample(sy, sx) - e1.bx(y, x)) + a11 * dx + a12 * dy;
      const double db2 = -0.5 * (e2.by.sample(sy, sx) - e1.by(y, x)) + a12 * dx + a22 * dy;
      s.g11(y, x) = a11 * a11 + a12 * a12;
      s.g12(y, x) = a12 * (a11 + a22);
      s.g22(y, x) = a12 * a12 + a22 * a22;
      s.h1(y, x) = a11 * db1 + a12 * db2;
      s.h2(y, x) = a12 * db1 + a22 * db2;
    }
  return s;
}

inline void solve_flow(const FlowSystem& s, std::size_t window, Plane& fx, Plane& fy) {
  const Plane g11 = box_blur(s.g11, window), g12 = box_blur(s.g12, window), g22 = box_blur(s.g22, window);
  const Plane h1 = box_blur(s.h1, window), h2 = box_blur(s.h2, window);
  double trace = 0.0;
  for (std::size_t i = 0; i < g11.data.size(); ++i) trace += g11.data[i] + g22.data[i];
  const double eps = kFlowRegularization * trace / double(g11.data.size()) + kFlowRegularizationFloor;
  for (std::size_t i = 0; i < fx.data.size(); ++i) {
    const double a = g11.data[i] + eps, b = g12.data[i], d = g22.data[i] + eps;
    const double det = a * d - b * b;
    fx.data[i] = (d * h1.data[i] - b * h2.data[i]) / det;
    fy.data[i] = (a * h2.data[i] - b * h1.data[i]) / det;
  }
}

}  // namespace detail

// Flow from `prev` to `next`: next(p + d(p)) ~ prev(p).
inline FlowField estimate_flow(const Plane& prev, const Plane& next, const FlowParams& params = {}) {
  require(prev.height == next.height && prev.width == next.width, ErrorCode::shape_mismatch,
          "flow frames must share dims");
  validate(params, prev.height, prev.width);

  Plane fx, fy;
  for (std::size_t level = params.pyramid_levels; level-- > 0;) {
    const double scale = std::pow(params.pyramid_scale, static_cast<double>(level));
    const auto h = static_cast<std::size_t>(std::lround(double(prev.height) * scale));
    const auto w = static_cast<std::size_t>(std::lround(double(prev.width) * scale));
    const double sigma = (1.0 / scale - 1.0) * 0.5;
    const Plane p1 = detail::resize_plane(detail::gaussian_blur(prev, sigma), h, w);
    const Plane p2 = detail::resize_plane(detail::gaussian_blur(next, sigma), h, w);

    if (fx.data.empty()) {
      fx = Plane(h, w);
      fy = Plane(h, w);
    } else {
      const double rx = double(w) / double(fx.width), ry = double(h) / double(fx.height);
      fx = detail::resize_plane(fx, h, w);
      fy = detail::resize_plane(fy, h, w);
      for (double& v : fx.data) v *= rx;
      for (double& v : fy.data) v *= ry;
    }

    const auto e1 = polynomial_expansion(p1, params.poly_n, params.poly_sigma);
    const auto e2 = polynomial_expansion(p2, params.poly_n, params.poly_sigma);
    for (std::size_t it = 0; it < params.iterations; ++it)
      detail::solve_flow(detail::flow_system(e1, e2, fx, fy), params.window_size, fx, fy);
  }

  FlowField out(prev.height, prev.width);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      out.dx(y, x) = static_cast<float>(fx(y, x));
      out.dy(y, x) = static_cast<float>(fy(y, x));
    }
  return out;
}

inline constexpr float kFlowClampPx = 20.0f;

// Stacks clip_len - 1 pairwise fields into a T x H x W x 2 tensor in [-1, 1];
// the final field is repeated so T matches the grayscale stream.
inline VideoTensor flow_to_input(const std::vector<FlowField>& flows, std::size_t clip_len) {
  require(clip_len >= 2 && flows.size() == clip_len - 1, ErrorCode::invalid_argument,
          "expected " + std::to_string(clip_len >= 1 ? clip_len - 1 : 0) + " flow fields, got " +
              std::to_string(flows.size()));
  const std::size_t h = flows.front().height, w = flows.front().width;
  VideoTensor out(clip_len, h, w, 2);
  for (std::size_t t = 0; t < clip_len; ++t) {
    const FlowField& f = flows[std::min(t, flows.size() - 1)];
    require(f.height == h && f.width == w, ErrorCode::shape_mismatch, "flow fields differ in dims");
    for (std::size_t i = 0; i < h * w * 2; ++i)
      out.data[t * h * w * 2 + i] = std::clamp(f.data[i], -kFlowClampPx, kFlowClampPx) / kFlowClampPx;
  }
  return out;
}

// Network-ready flow stream for a whole single-channel video.
inline VideoTensor compute_flow_video(const VideoTensor& gray, const FlowParams& params = {}) {
  require(gray.channels == 1, ErrorCode::invalid_argument, "flow needs a single-channel video");
  require(gray.frames >= 2, ErrorCode::insufficient_frames, "flow needs at least 2 frames");
  std::vector<FlowField> flows;
  Plane prev = frame_plane(gray, 0);
  for (std::size_t t = 1; t < gray.frames; ++t) {
    Plane next = frame_plane(gray, t);
    flows.push_back(estimate_flow(prev, next, params));
    prev = std::move(next);
  }
  return flow_to_input(flows, gray.frames);
}

}  // namespace echoflow
