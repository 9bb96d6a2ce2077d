#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "echoflow/augment.hpp"

using namespace echoflow;

namespace {

VideoTensor smooth_clip(std::size_t t, std::size_t h, std::size_t w, std::size_t c = 1) {
  VideoTensor v(t, h, w, c);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t k = 0; k < c; ++k)
          v.at(i, y, x, k) = float(0.5 + 0.25 * std::sin(0.3 * double(x) + 0.2 * double(i) + double(k)) *
                                             std::cos(0.25 * double(y)));
  return v;
}

}  // namespace

TEST(AffineWarp, IdentityBitExact) {
  const auto v = smooth_clip(6, 9, 11, 2);
  EXPECT_EQ(affine3d_warp(v, Affine3::Identity()), v);
}

TEST(AffineWarp, FullTurnRotation) {
  const auto v = smooth_clip(4, 16, 16);
  const double c = 7.5;
  Affine3 m = Affine3::Identity();
  const double th = 2 * std::numbers::pi;
  m(1, 1) = std::cos(th);
  m(1, 2) = -std::sin(th);
  m(2, 1) = std::sin(th);
  m(2, 2) = std::cos(th);
  m(1, 3) = c - (m(1, 1) * c + m(1, 2) * c);
  m(2, 3) = c - (m(2, 1) * c + m(2, 2) * c);
  const auto out = affine3d_warp(v, m);
  float worst = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i) worst = std::max(worst, std::abs(out.data[i] - v.data[i]));
  EXPECT_LT(worst, 1e-5f);
}

TEST(AffineWarp, IntegerTranslationShiftsIndices) {
  const auto v = smooth_clip(5, 8, 10);
  Affine3 m = Affine3::Identity();
  m(0, 3) = 1;   // t
  m(1, 3) = -2;  // y
  m(2, 3) = 3;   // x
  const auto out = affine3d_warp(v, m);
  for (long t = 0; t < 5; ++t)
    for (long y = 0; y < 8; ++y)
      for (long x = 0; x < 10; ++x) {
        const long st = t - 1, sy = y + 2, sx = x - 3;
        const bool inside = st >= 0 && st < 5 && sy >= 0 && sy < 8 && sx >= 0 && sx < 10;
        const float expected = inside ? v.at(std::size_t(st), std::size_t(sy), std::size_t(sx)) : 0.0f;
        EXPECT_EQ(out.at(std::size_t(t), std::size_t(y), std::size_t(x)), expected);
      }
}

TEST(AffineWarp, SingularRejected) {
  Affine3 m = Affine3::Identity();
  m(1, 1) = 0;
  EXPECT_THROW(affine3d_warp(smooth_clip(2, 3, 3), m), Error);
}

TEST(RandomAugment, DegenerateRangesAreIdentity) {
  const Clip g{smooth_clip(4, 8, 8), "s", 0};
  const auto f = smooth_clip(4, 8, 8, 2);
  Rng rng(1);
  auto [g2, f2] = random_augment(g, f, AugmentParams::identity(), rng);
  EXPECT_EQ(g2.video, g.video);
  EXPECT_EQ(f2, f);
}

TEST(RandomAugment, BrightnessOnlyTouchesGray) {
  auto p = AugmentParams::identity();
  p.brightness = {2.0, 2.0};
  const Clip g{VideoTensor(3, 4, 4, 1, 0.25f), "s", 0};
  const auto f = smooth_clip(3, 4, 4, 2);
  Rng rng(2);
  auto [g2, f2] = random_augment(g, f, p, rng);
  for (float x : g2.video.data) EXPECT_EQ(x, 0.5f);
  EXPECT_EQ(f2, f);
}

TEST(RandomAugment, SeedDeterminismAndRange) {
  const Clip g{smooth_clip(6, 12, 12), "s", 0};
  const auto f = smooth_clip(6, 12, 12, 2);
  AugmentParams p;
  p.brightness = {1.5, 3.0};
  Rng a(7), b(7);
  auto r1 = random_augment(g, f, p, a);
  auto r2 = random_augment(g, f, p, b);
  EXPECT_EQ(r1.first.video, r2.first.video);
  EXPECT_EQ(r1.second, r2.second);
  for (float x : r1.first.video.data) {
    EXPECT_GE(x, 0.0f);
    EXPECT_LE(x, 1.0f);
  }
}

TEST(RandomAugment, GeometryIsSharedAcrossStreams) {
  // impulse pattern placed identically in the gray channel and both flow channels
  VideoTensor gray(6, 12, 12, 1), flow(6, 12, 12, 2);
  for (auto [t, y, x] : {std::tuple{2, 5, 6}, {3, 8, 3}, {1, 2, 9}}) {
    gray.at(t, y, x) = 1.0f;
    flow.at(t, y, x, 0) = flow.at(t, y, x, 1) = 1.0f;
  }
  AugmentParams p;
  p.brightness = {1.0, 1.0};
  p.rotation_ty_deg = {-5, 5};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto [g, f] = random_augment(Clip{gray, "s", 0}, flow, p, rng);
    for (std::size_t i = 0; i < g.video.data.size(); ++i) {
      EXPECT_EQ(g.video.data[i], f.data[2 * i]);
      EXPECT_EQ(g.video.data[i], f.data[2 * i + 1]);
    }
  }
}

TEST(RandomAugment, BrightnessKeepsPerFrameArgmax) {
  const Clip g{smooth_clip(5, 10, 10), "s", 0};
  const auto f = smooth_clip(5, 10, 10, 2);
  auto p = AugmentParams::identity();
  p.brightness = {0.3, 1.0 / 0.76};  // max input is 0.75, so clamping never engages
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto [g2, f2] = random_augment(g, f, p, rng);
    for (std::size_t t = 0; t < 5; ++t) {
      const auto a = g.video.data.cbegin() + long(t * 100);
      const auto b = g2.video.data.cbegin() + long(t * 100);
      EXPECT_EQ(std::max_element(a, a + 100) - a, std::max_element(b, b + 100) - b);
    }
  }
}

TEST(RandomAugment, ShapeMismatch) {
  Rng rng(0);
  EXPECT_THROW(random_augment(Clip{smooth_clip(4, 8, 8), "", 0}, smooth_clip(4, 8, 7, 2), AugmentParams{}, rng),
               Error);
}
