#pragma once

// Analytic smooth textures rendered at arbitrary sub-pixel offsets, so a
// translated frame is exact rather than resampled.

#include <cmath>
#include <vector>

#include "echoflow/flow.hpp"
#include "echoflow/rng.hpp"

namespace echoflow::testing {

struct Blob {
  double y, x, sigma, amp;
};

inline std::vector<Blob> random_blobs(std::size_t n, double h, double w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Blob> blobs;
  for (std::size_t i = 0; i < n; ++i)
    blobs.push_back({uniform(rng, -10, h + 10), uniform(rng, -10, w + 10), uniform(rng, 4.0, 9.0),
                     uniform(rng, 0.2, 1.0)});
  return blobs;
}

// Renders sum of Gaussians translated by (dy, dx).
inline Plane render(const std::vector<Blob>& blobs, std::size_t h, std::size_t w, double dy = 0, double dx = 0,
                    double gain = 1.0) {
  Plane p(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double v = 0.0;
      for (const auto& b : blobs) {
        const double ry = double(y) - b.y - dy, rx = double(x) - b.x - dx;
        v += b.amp * std::exp(-(ry * ry + rx * rx) / (2 * b.sigma * b.sigma));
      }
      p(y, x) = gain * v;
    }
  return p;
}

// Mean endpoint error against a constant displacement over pixels at least
// `margin` from the border.
inline double mean_epe(const FlowField& f, double dy, double dx, std::size_t margin) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t y = margin; y + margin < f.height; ++y)
    for (std::size_t x = margin; x + margin < f.width; ++x) {
      sum += std::hypot(f.dx(y, x) - dx, f.dy(y, x) - dy);
      ++n;
    }
  return sum / double(n);
}

}  // namespace echoflow::testing
