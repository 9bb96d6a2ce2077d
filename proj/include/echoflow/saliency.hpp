#pragma once

// Guided backpropagation through the two-stream network, layer-wise relevance
// propagation for small skip-free networks, and projection of saliency
// volumes to images.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "echoflow/error.hpp"
#include "echoflow/nn/model.hpp"
#include "echoflow/video.hpp"

namespace echoflow::saliency {

// T x H x W x 1, nonnegative. Empty (frames == 0) for a stream the model
// does not use.
struct SaliencyVolume {
  std::string scan_id;
  std::string stream;
  VideoTensor map;
};

namespace detail {

// Input-gradient (N=1, C, T, H, W) -> per-voxel positive part of the channel sum.
template <typename T>
VideoTensor channel_sum_positive(const nn::Tensor<T>& g) {
  const std::size_t c = g.dim(1), t = g.dim(2), h = g.dim(3), w = g.dim(4), plane = t * h * w;
  VideoTensor out(t, h, w, 1);
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += double(g.data[k * plane + i]);
    out.data[i] = float(std::max(0.0, s));
  }
  return out;
}

}  // namespace detail

// Gradient of the pre-sigmoid output with every ReLU in guided mode, the
// model in inference mode. The optional trace collects one entry per ReLU.
template <typename T>
std::pair<SaliencyVolume, SaliencyVolume> guided_backprop(nn::TwoStreamModel<T>& model, const VideoTensor& gray,
                                                          const VideoTensor& flow, const std::string& scan_id = {},
                                                          std::vector<nn::ReluTraceEntry<T>>* trace = nullptr) {
  std::size_t relus = 0;
  model.for_each_relu([&](nn::ReLU<T>& r) {
    r.rule = nn::ReluRule::guided;
    r.trace = trace;
    ++relus;
  });
  require(relus > 0, ErrorCode::invalid_argument, "guided backprop needs a model with ReLU layers");
  const auto g = model.config().use_gray() ? nn::make_batch<T>(gray) : nn::Tensor<T>();
  const auto f = model.config().use_flow() ? nn::make_batch<T>(flow) : nn::Tensor<T>();
  model.forward_logits(g, f, false);
  std::pair<nn::Tensor<T>, nn::Tensor<T>> grads;
  try {
    grads = model.backward(nn::Tensor<T>({1}, T(1)), true);
  } catch (...) {
    model.for_each_relu([](nn::ReLU<T>& r) {
      r.rule = nn::ReluRule::standard;
      r.trace = nullptr;
    });
    throw;
  }
  model.for_each_relu([](nn::ReLU<T>& r) {
    r.rule = nn::ReluRule::standard;
    r.trace = nullptr;
  });
  model.zero_grad();
  model.clear_cache();
  std::pair<SaliencyVolume, SaliencyVolume> out{{scan_id, "gray", {}}, {scan_id, "flow", {}}};
  if (!grads.first.data.empty()) out.first.map = detail::channel_sum_positive(grads.first);
  if (!grads.second.data.empty()) out.second.map = detail::channel_sum_positive(grads.second);
  return out;
}

// ---------------------------------------------------------------------------
// small dense networks

struct Dense {
  Eigen::MatrixXd weight;  // (out, in)
  Eigen::VectorXd bias;
};
struct Relu {};
// y = x + body(x)
struct Residual {
  std::vector<std::variant<Dense, Relu>> body;
};

using Layer = std::variant<Dense, Relu, Residual>;

struct Sequential {
  std::vector<Layer> layers;
};

namespace detail {

inline Eigen::VectorXd apply(const std::variant<Dense, Relu>& l, const Eigen::VectorXd& x) {
  if (const auto* d = std::get_if<Dense>(&l)) {
    require(d->weight.cols() == x.size(), ErrorCode::shape_mismatch, "dense layer input width mismatch");
    return d->weight * x + d->bias;
  }
  return x.cwiseMax(0.0);
}

}  // namespace detail

// Activations before each layer plus the final output (layers + 1 entries).
inline std::vector<Eigen::VectorXd> forward_all(const Sequential& net, const Eigen::VectorXd& x) {
  std::vector<Eigen::VectorXd> acts{x};
  for (const auto& layer : net.layers) {
    const auto& a = acts.back();
    if (const auto* r = std::get_if<Residual>(&layer)) {
      Eigen::VectorXd h = a;
      for (const auto& l : r->body) h = detail::apply(l, h);
      require(h.size() == a.size(), ErrorCode::shape_mismatch, "residual body changes width");
      acts.push_back(a + h);
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      acts.push_back(detail::apply(*d, a));
    } else {
      acts.push_back(detail::apply(Relu{}, a));
    }
  }
  return acts;
}

// d output / d input contracted with dy. Guided mode gates each ReLU by the
// sign of the incoming signal as well as by forward positivity.
inline Eigen::VectorXd input_gradient(const Sequential& net, const Eigen::VectorXd& x, Eigen::VectorXd dy,
                                      bool guided) {
  const auto acts = forward_all(net, x);
  require(dy.size() == acts.back().size(), ErrorCode::shape_mismatch, "output gradient width mismatch");
  auto relu_back = [guided](const Eigen::VectorXd& out, Eigen::VectorXd g) {
    for (long i = 0; i < g.size(); ++i)
      if (!(out[i] > 0.0 && (!guided || g[i] > 0.0))) g[i] = 0.0;
    return g;
  };
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const auto& layer = net.layers[k];
    if (const auto* d = std::get_if<Dense>(&layer)) {
      dy = d->weight.transpose() * dy;
    } else if (std::holds_alternative<Relu>(layer)) {
      dy = relu_back(acts[k + 1], dy);
    } else {
      const auto& body = std::get<Residual>(layer).body;
      std::vector<Eigen::VectorXd> h{acts[k]};
      for (const auto& l : body) h.push_back(detail::apply(l, h.back()));
      Eigen::VectorXd g = dy;
      for (std::size_t j = body.size(); j-- > 0;) {
        if (const auto* d = std::get_if<Dense>(&body[j]))
          g = d->weight.transpose() * g;
        else
          g = relu_back(h[j + 1], g);
      }
      dy += g;
    }
  }
  return dy;
}

inline constexpr double kLrpEpsilon = 1e-9;

// relevance[l] belongs to the activations entering layer l; the last entry
// is the injected output relevance.
struct RelevanceMap {
  std::vector<Eigen::VectorXd> relevance;
};

// R_i = sum_k a_i w_ik / (z_k + eps sign(z_k)) R_k with z_k = sum_h a_h w_hk
// (biases excluded); ReLU layers pass relevance through.
inline RelevanceMap lrp_sequential(const Sequential& net, const Eigen::VectorXd& x, const Eigen::VectorXd& r_out) {
  for (const auto& layer : net.layers)
    require(!std::holds_alternative<Residual>(layer), ErrorCode::skip_connection,
            "LRP rejected: skip connections break per-layer relevance conservation");
  const auto acts = forward_all(net, x);
  require(r_out.size() == acts.back().size(), ErrorCode::shape_mismatch, "output relevance width mismatch");
  RelevanceMap m;
  m.relevance.resize(net.layers.size() + 1);
  m.relevance.back() = r_out;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const Eigen::VectorXd& rk = m.relevance[k + 1];
    const auto* d = std::get_if<Dense>(&net.layers[k]);
    if (!d) {
      m.relevance[k] = rk;
      continue;
    }
    const Eigen::VectorXd& a = acts[k];
    const Eigen::VectorXd z = d->weight * a;
    Eigen::VectorXd s(z.size());
    for (long j = 0; j < z.size(); ++j) s[j] = rk[j] / (z[j] + kLrpEpsilon * (z[j] >= 0.0 ? 1.0 : -1.0));
    m.relevance[k] = a.cwiseProduct(d->weight.transpose() * s);
  }
  return m;
}

// The two-stream network is residual throughout.
template <typename T>
RelevanceMap lrp_sequential(const nn::TwoStreamModel<T>&, const VideoTensor&, const VideoTensor&) {
  fail(ErrorCode::skip_connection, "LRP rejected: skip connections break per-layer relevance conservation");
}

// ---------------------------------------------------------------------------
// projection

enum class ProjectMode { per_frame, max_over_time };

inline ProjectMode parse_project_mode(const std::string& s) {
  if (s == "per-frame" || s == "per_frame") return ProjectMode::per_frame;
  if (s == "max-over-time" || s == "max_over_time") return ProjectMode::max_over_time;
  fail(ErrorCode::invalid_argument, "unknown projection '" + s + "' (expected per-frame|max-over-time)");
}

struct Projection {
  VideoTensor images;  // T x H x W x 1 (one frame for max-over-time), values in [0, 1]
  bool all_zero = false;
};

// Normalised by the maximum over the whole volume so that frames stay
// comparable.
inline Projection saliency_project(const VideoTensor& vol, ProjectMode mode) {
  require(vol.channels == 1 && !vol.data.empty(), ErrorCode::invalid_argument, "saliency volume must be T x H x W x 1");
  float peak = 0.0f;
  for (float v : vol.data) {
    require(std::isfinite(v) && v >= 0.0f, ErrorCode::invalid_argument, "saliency values must be finite and >= 0");
    peak = std::max(peak, v);
  }
  Projection p;
  p.all_zero = peak == 0.0f;
  if (mode == ProjectMode::per_frame) {
    p.images = vol;
  } else {
    p.images = VideoTensor(1, vol.height, vol.width, 1);
    const std::size_t fs = vol.frame_size();
    for (std::size_t t = 0; t < vol.frames; ++t)
      for (std::size_t i = 0; i < fs; ++i) p.images.data[i] = std::max(p.images.data[i], vol.data[t * fs + i]);
  }
  if (!p.all_zero)
    for (float& v : p.images.data) v /= peak;
  return p;
}

// alpha * heat + (1 - alpha) * frame, frame by frame (a single heat frame is
// reused for every input frame).
inline VideoTensor overlay(const VideoTensor& frames, const VideoTensor& heat, double alpha = 0.5) {
  require(frames.channels == 1 && heat.channels == 1 && frames.height == heat.height && frames.width == heat.width &&
              (heat.frames == 1 || heat.frames == frames.frames),
          ErrorCode::shape_mismatch, "overlay needs matching single-channel frames");
  VideoTensor out = frames;
  const std::size_t fs = frames.frame_size();
  for (std::size_t t = 0; t < frames.frames; ++t) {
    const std::size_t ht = heat.frames == 1 ? 0 : t;
    for (std::size_t i = 0; i < fs; ++i)
      out.data[t * fs + i] =
          float(alpha * double(heat.data[ht * fs + i]) + (1.0 - alpha) * double(frames.data[t * fs + i]));
  }
  return out;
}

// Binary 8-bit PGM of frame t, values in [0, 1] mapped to 0..255.
inline void write_pgm(const std::string& path, const VideoTensor& v, std::size_t t) {
  require(v.channels == 1 && t < v.frames, ErrorCode::invalid_argument, "PGM needs a single-channel frame");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out << "P5\n" << v.width << " " << v.height << "\n255\n";
  for (std::size_t i = 0; i < v.frame_size(); ++i) {
    const double x = std::clamp(double(v.data[t * v.frame_size() + i]), 0.0, 1.0);
    out.put(char(static_cast<unsigned char>(std::lround(255.0 * x))));
  }
  require(static_cast<bool>(out), ErrorCode::io, "short write to " + path);
}

}  // namespace echoflow::saliency
