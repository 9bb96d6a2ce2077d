#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "echoflow/flow.hpp"
#include "flow_fixtures.hpp"

using namespace echoflow;
using echoflow::testing::mean_epe;
using echoflow::testing::random_blobs;
using echoflow::testing::render;

TEST(PolyExpansion, ConstantFrame) {
  Plane p(12, 14, 0.7);
  const auto e = polynomial_expansion(p, 5, 1.1);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    EXPECT_NEAR(e.c.data[i], 0.7, 1e-12);
    EXPECT_NEAR(e.bx.data[i], 0.0, 1e-12);
    EXPECT_NEAR(e.by.data[i], 0.0, 1e-12);
    EXPECT_NEAR(e.axx.data[i], 0.0, 1e-12);
    EXPECT_NEAR(e.axy.data[i], 0.0, 1e-12);
    EXPECT_NEAR(e.ayy.data[i], 0.0, 1e-12);
  }
}

TEST(PolyExpansion, RampInterior) {
  Plane p(16, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) p(y, x) = double(x);
  const auto e = polynomial_expansion(p, 5, 1.1);
  for (std::size_t y = 2; y < 14; ++y)
    for (std::size_t x = 2; x < 14; ++x) {
      EXPECT_NEAR(e.bx(y, x), 1.0, 1e-10);
      EXPECT_NEAR(e.by(y, x), 0.0, 1e-10);
      EXPECT_NEAR(e.c(y, x), double(x), 1e-10);
      EXPECT_NEAR(e.axx(y, x), 0.0, 1e-10);
      EXPECT_NEAR(e.ayy(y, x), 0.0, 1e-10);
    }
}

TEST(PolyExpansion, QuadraticRecoveredExactly) {
  // f = 2x^2 - y^2 + 3xy: A = [[2, 1.5], [1.5, -1]]
  Plane p(15, 15);
  for (std::size_t y = 0; y < 15; ++y)
    for (std::size_t x = 0; x < 15; ++x) {
      const double fx = double(x), fy = double(y);
      p(y, x) = 2 * fx * fx - fy * fy + 3 * fx * fy;
    }
  const auto e = polynomial_expansion(p, 7, 1.5);
  EXPECT_NEAR(e.axx(7, 7), 2.0, 1e-9);
  EXPECT_NEAR(e.ayy(7, 7), -1.0, 1e-9);
  EXPECT_NEAR(e.axy(7, 7), 1.5, 1e-9);
  EXPECT_NEAR(e.bx(7, 7), 4 * 7 + 3 * 7, 1e-8);
}

TEST(PolyExpansion, RejectsBadWindow) {
  Plane p(10, 10);
  EXPECT_THROW(polynomial_expansion(p, 4, 1.1), Error);
  EXPECT_THROW(polynomial_expansion(Plane(3, 3), 5, 1.1), Error);
}

TEST(Flow, IdenticalFramesGiveZero) {
  const auto f = render(random_blobs(30, 112, 112, 1), 112, 112);
  const auto flow = estimate_flow(f, f);
  float peak = 0;
  for (float v : flow.data) peak = std::max(peak, std::abs(v));
  EXPECT_LT(peak, 0.05f);
}

TEST(Flow, GaussianBlobShift) {
  const std::vector<echoflow::testing::Blob> blob = {{56, 56, 12, 1.0}};
  const auto a = render(blob, 112, 112);
  const auto b = render(blob, 112, 112, 0.0, 2.0);
  const auto flow = estimate_flow(a, b);
  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < 112; ++y)
    for (std::size_t x = 0; x < 112; ++x)
      if (std::hypot(double(y) - 56, double(x) - 57) <= 12) {
        sx += flow.dx(y, x);
        sy += flow.dy(y, x);
        ++n;
      }
  EXPECT_NEAR(sx / double(n), 2.0, 0.3);
  EXPECT_NEAR(sy / double(n), 0.0, 0.3);
}

TEST(Flow, UniformPairIsZero) {
  const auto flow = estimate_flow(Plane(40, 40, 0.5), Plane(40, 40, 0.5));
  for (float v : flow.data) EXPECT_NEAR(v, 0.0f, 1e-6f);
}

TEST(Flow, ShiftCovariance) {
  const auto blobs = random_blobs(40, 112, 112, 7);
  const auto base = render(blobs, 112, 112);
  for (auto [dy, dx] : {std::pair{0.0, 1.0}, {-1.5, 0.5}, {2.0, -2.0}, {0.0, 3.0}, {-2.1, 2.1}}) {
    const auto flow = estimate_flow(base, render(blobs, 112, 112, dy, dx));
    EXPECT_LT(mean_epe(flow, dy, dx, 8), 0.3) << dy << "," << dx;
  }
}

TEST(Flow, ApproximateAntisymmetry) {
  const auto blobs = random_blobs(40, 64, 64, 8);
  const auto a = render(blobs, 64, 64), b = render(blobs, 64, 64, 0.7, -1.2);
  const auto fab = estimate_flow(a, b), fba = estimate_flow(b, a);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t y = 8; y < 56; ++y)
    for (std::size_t x = 8; x < 56; ++x, ++n) sum += std::hypot(fab.dx(y, x) + fba.dx(y, x), fab.dy(y, x) + fba.dy(y, x));
  EXPECT_LT(sum / double(n), 0.3);
}

TEST(Flow, IntensityScaleInvariant) {
  const auto blobs = random_blobs(30, 64, 64, 9);
  const auto a = render(blobs, 64, 64), b = render(blobs, 64, 64, 1.0, 1.0);
  const auto f1 = estimate_flow(a, b);
  const auto f2 = estimate_flow(render(blobs, 64, 64, 0, 0, 3.0), render(blobs, 64, 64, 1.0, 1.0, 3.0));
  for (std::size_t i = 0; i < f1.data.size(); ++i) EXPECT_NEAR(f1.data[i], f2.data[i], 1e-3);
}

TEST(Flow, DimMismatchAndParamChecks) {
  EXPECT_THROW(estimate_flow(Plane(32, 32), Plane(32, 30)), Error);
  FlowParams p;
  p.pyramid_levels = 6;  // 32 * 0.5^5 = 1 px < poly_n
  EXPECT_THROW(estimate_flow(Plane(32, 32), Plane(32, 32), p), Error);
}

TEST(Flow, PairRuntimeUnderOneSecond) {
  const auto blobs = random_blobs(40, 112, 112, 10);
  const auto a = render(blobs, 112, 112), b = render(blobs, 112, 112, 1, 1);
  const auto t0 = std::chrono::steady_clock::now();
  (void)estimate_flow(a, b);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
}

TEST(FlowToInput, ZeroClampAndDuplicate) {
  std::vector<FlowField> zero(3, FlowField(4, 5));
  for (float v : flow_to_input(zero, 4).data) EXPECT_EQ(v, 0.0f);

  std::vector<FlowField> flows;
  for (int i = 0; i < 31; ++i) {
    FlowField f(3, 3);
    for (float& v : f.data) v = float(i) - 15.0f;
    flows.push_back(f);
  }
  flows[2].dx(1, 1) = 40.0f;
  flows[2].dy(1, 1) = -100.0f;
  const auto t = flow_to_input(flows, 32);
  EXPECT_EQ(t.frames, 32u);
  EXPECT_EQ(t.channels, 2u);
  EXPECT_EQ(t.at(2, 1, 1, 0), 1.0f);
  EXPECT_EQ(t.at(2, 1, 1, 1), -1.0f);
  EXPECT_EQ(slice_frames(t, 31, 1).data, slice_frames(t, 30, 1).data);
  EXPECT_FLOAT_EQ(t.at(30, 0, 0, 0), 15.0f / 20.0f);
  for (float v : t.data) {
    EXPECT_LE(v, 1.0f);
    EXPECT_GE(v, -1.0f);
  }
  EXPECT_THROW(flow_to_input(flows, 30), Error);
}
