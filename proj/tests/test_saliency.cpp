#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "echoflow/saliency.hpp"
#include "echoflow/synth.hpp"

using namespace echoflow;
using namespace echoflow::saliency;

namespace {

Dense dense(Eigen::MatrixXd w, Eigen::VectorXd b) { return Dense{std::move(w), std::move(b)}; }

Sequential random_mlp(Rng& rng, const std::vector<long>& widths) {
  Sequential net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Eigen::MatrixXd w(widths[l + 1], widths[l]);
    Eigen::VectorXd b(widths[l + 1]);
    for (long i = 0; i < w.size(); ++i) w.data()[i] = standard_normal(rng);
    for (long i = 0; i < b.size(); ++i) b[i] = 0.1 * standard_normal(rng);
    net.layers.push_back(dense(w, b));
    if (l + 2 < widths.size()) net.layers.push_back(Relu{});
  }
  return net;
}

nn::TwoStreamModel<double> small_model(std::uint64_t seed, nn::Streams streams = nn::Streams::both) {
  nn::ModelConfig c;
  c.blocks = nn::depth_blocks("r3d10");
  c.base_channels = 2;
  c.streams = streams;
  nn::TwoStreamModel<double> m(c);
  Rng rng(seed);
  m.init(rng);
  return m;
}

VideoTensor random_video(Rng& rng, std::size_t c) {
  VideoTensor v(4, 12, 12, c);
  for (float& x : v.data) x = float(uniform(rng, -1, 1));
  return v;
}

}  // namespace

TEST(GuidedBackprop, SingleLayerAnalytic) {
  Sequential net;
  net.layers.push_back(dense(Eigen::RowVector3d(0.5, 2.0, 1.5), Eigen::VectorXd::Zero(1)));
  net.layers.push_back(Relu{});
  const Eigen::Vector3d x(1.0, 0.2, 3.0);
  const auto g = input_gradient(net, x, Eigen::VectorXd::Ones(1), true);
  EXPECT_EQ(g, Eigen::Vector3d(0.5, 2.0, 1.5));
}

TEST(GuidedBackprop, ClosedGateGivesZero) {
  Sequential net;
  net.layers.push_back(dense(Eigen::MatrixXd::Ones(2, 3), Eigen::VectorXd::Constant(2, -100.0)));
  net.layers.push_back(Relu{});
  net.layers.push_back(dense(Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Zero(1)));
  const auto g = input_gradient(net, Eigen::Vector3d(1, 2, 3), Eigen::VectorXd::Ones(1), true);
  EXPECT_EQ(g.norm(), 0.0);
}

TEST(GuidedBackprop, EqualsVanillaOnPositivePaths) {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    Sequential net;
    long in = 5;
    for (long out : {4, 3, 1}) {
      Eigen::MatrixXd w(out, in);
      for (long i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, 0.1, 1.0);
      net.layers.push_back(dense(w, Eigen::VectorXd::Constant(out, 0.1)));
      net.layers.push_back(Relu{});
      in = out;
    }
    Eigen::VectorXd x(5);
    for (long i = 0; i < 5; ++i) x[i] = uniform(rng, 0.1, 1.0);
    const auto a = input_gradient(net, x, Eigen::VectorXd::Ones(1), true);
    const auto b = input_gradient(net, x, Eigen::VectorXd::Ones(1), false);
    EXPECT_EQ(a, b);
  }
}

TEST(GuidedBackprop, TwoStreamMapsNonnegativeWithTrace) {
  Rng rng(7);
  for (int rep = 0; rep < 4; ++rep) {
    auto model = small_model(std::uint64_t(rep));
    const auto g = random_video(rng, 1), f = random_video(rng, 2);
    std::vector<nn::ReluTraceEntry<double>> trace;
    const auto [sg, sf] = guided_backprop(model, g, f, "scan", &trace);
    ASSERT_EQ(sg.map.frames, 4u);
    ASSERT_EQ(sf.map.height, 12u);
    EXPECT_EQ(sg.map.channels, 1u);
    EXPECT_EQ(sg.scan_id, "scan");
    double mass = 0;
    for (float v : sg.map.data) {
      ASSERT_GE(v, 0.0f);
      mass += v;
    }
    for (float v : sf.map.data) ASSERT_GE(v, 0.0f);
    EXPECT_GT(mass, 0.0);
    std::size_t relus = 0;
    model.for_each_relu([&](nn::ReLU<double>& r) {
      ++relus;
      EXPECT_EQ(r.rule, nn::ReluRule::standard);  // restored afterwards
      EXPECT_EQ(r.trace, nullptr);
    });
    ASSERT_EQ(trace.size(), relus);
    for (const auto& e : trace) {
      ASSERT_EQ(e.activation.shape, e.signal.shape);
      for (double s : e.signal.data) ASSERT_GE(s, 0.0);
    }
  }
}

TEST(GuidedBackprop, DisabledStreamIsEmpty) {
  Rng rng(3);
  auto model = small_model(1, nn::Streams::gray);
  const auto [sg, sf] = guided_backprop(model, random_video(rng, 1), VideoTensor());
  EXPECT_EQ(sg.map.frames, 4u);
  EXPECT_TRUE(sf.map.data.empty());
}

TEST(Lrp, TwoInputNeuron) {
  Sequential net;
  net.layers.push_back(dense(Eigen::RowVector2d(2.0, 2.0), Eigen::VectorXd::Zero(1)));
  const auto r = lrp_sequential(net, Eigen::Vector2d(1.0, 3.0), Eigen::VectorXd::Ones(1));
  // the signed epsilon shifts the ratio by ~1e-10
  EXPECT_NEAR(r.relevance[0][0], 0.25, 1e-9);
  EXPECT_NEAR(r.relevance[0][1], 0.75, 1e-9);
}

TEST(Lrp, ConservationOnRandomMlps) {
  Rng rng(12);
  int checked = 0, ill_conditioned = 0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<long> widths;
    const std::size_t layers = 1 + uniform_index(rng, 0, 4);
    for (std::size_t l = 0; l <= layers; ++l) widths.push_back(long(2 + uniform_index(rng, 0, 6)));
    widths.back() = 1;
    const auto net = random_mlp(rng, widths);
    Eigen::VectorXd x(widths.front());
    for (long i = 0; i < x.size(); ++i) x[i] = uniform(rng, 0.0, 1.0);
    const auto acts = forward_all(net, x);
    const auto& out = acts.back();
    // a dense layer fed an all-zero vector has nothing to hand relevance to
    bool dead = false;
    for (std::size_t l = 0; l < net.layers.size(); ++l)
      dead |= std::holds_alternative<Dense>(net.layers[l]) && acts[l].cwiseAbs().maxCoeff() == 0.0;
    if (dead || std::abs(out.sum()) < 1e-3) continue;
    const auto r = lrp_sequential(net, x, out);
    // The stabiliser absorbs R_k eps / (|z_k| + eps) at each dense unit. That
    // leak is exact, so it bounds the per-layer loss; only networks where it
    // stays well below the tolerance are held to 1e-6.
    double leak = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto* d = std::get_if<Dense>(&net.layers[l]);
      if (!d) continue;
      const Eigen::VectorXd z = d->weight * acts[l];
      double step = 0;
      for (long k = 0; k < z.size(); ++k)
        step += std::abs(r.relevance[l + 1][k]) * kLrpEpsilon / (std::abs(z[k]) + kLrpEpsilon);
      EXPECT_LE(std::abs(r.relevance[l].sum() - r.relevance[l + 1].sum()), step * (1 + 1e-6) + 1e-12);
      leak += step;
    }
    if (leak > 5e-7 * std::abs(out.sum())) {
      ++ill_conditioned;
      continue;
    }
    for (const auto& level : r.relevance) EXPECT_NEAR(level.sum() / out.sum(), 1.0, 1e-6);
    ++checked;
  }
  EXPECT_GE(checked, 100);
  EXPECT_LE(ill_conditioned, 20);
}

TEST(Lrp, RejectsSkipConnections) {
  Sequential net;
  net.layers.push_back(Residual{{dense(Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero()), Relu{}}});
  try {
    lrp_sequential(net, Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::skip_connection);
    EXPECT_NE(std::string(e.what()).find("conservation"), std::string::npos);
  }
  // residual layers still run forward and through the gradient
  EXPECT_EQ(forward_all(net, Eigen::Vector2d(1, -1)).back(), Eigen::Vector2d(2, -1));
  auto model = small_model(0);
  EXPECT_THROW(lrp_sequential(model, VideoTensor(), VideoTensor()), Error);
}

TEST(Projection, HotVoxelAndScaleInvariance) {
  VideoTensor v(5, 4, 6, 1);
  v.at(3, 2, 1) = 0.7f;
  const auto p = saliency_project(v, ProjectMode::per_frame);
  EXPECT_FALSE(p.all_zero);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 6; ++x) EXPECT_EQ(p.images.at(t, y, x), (t == 3 && y == 2 && x == 1) ? 1.0f : 0.0f);

  Rng rng(1);
  for (float& x : v.data) x = float(uniform(rng, 0, 1));
  VideoTensor scaled = v;
  for (float& x : scaled.data) x *= 4.0f;  // power of two keeps the division exact
  EXPECT_EQ(saliency_project(v, ProjectMode::per_frame).images, saliency_project(scaled, ProjectMode::per_frame).images);
}

TEST(Projection, MaxOverTimeTracesMovingSpot) {
  VideoTensor v(6, 5, 8, 1);
  for (std::size_t t = 0; t < 6; ++t) v.at(t, 2, t + 1) = float(t + 1);
  const auto p = saliency_project(v, ProjectMode::max_over_time);
  ASSERT_EQ(p.images.frames, 1u);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      float oracle = 0;
      for (std::size_t t = 0; t < 6; ++t) oracle = std::max(oracle, v.at(t, y, x));
      EXPECT_FLOAT_EQ(p.images.at(0, y, x), oracle / 6.0f);
    }
}

TEST(Projection, ZeroVolumeFlaggedAndPgm) {
  VideoTensor v(2, 3, 4, 1);
  const auto p = saliency_project(v, ProjectMode::per_frame);
  EXPECT_TRUE(p.all_zero);
  for (float x : p.images.data) EXPECT_EQ(x, 0.0f);
  v.at(0, 0, 0) = -1.0f;
  EXPECT_THROW(saliency_project(v, ProjectMode::per_frame), Error);

  VideoTensor img(1, 2, 3, 1);
  img.at(0, 1, 2) = 1.0f;
  img.at(0, 0, 0) = 0.5f;
  const auto path = (std::filesystem::temp_directory_path() / "echoflow_test.pgm").string();
  write_pgm(path, img, 0);
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(bytes.substr(0, 11), "P5\n3 2\n255\n");
  ASSERT_EQ(bytes.size(), 17u);
  EXPECT_EQ((unsigned char)bytes[11], 128);
  EXPECT_EQ((unsigned char)bytes[16], 255);
  std::filesystem::remove(path);

  const auto o = overlay(img, img, 0.5);
  EXPECT_EQ(o.at(0, 1, 2), 1.0f);
}
