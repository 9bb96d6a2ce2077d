#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "echoflow/nn/bottleneck.hpp"
#include "echoflow/video.hpp"

namespace echoflow::nn {

enum class Streams { both, gray, flow };
enum class OutputActivation { sigmoid, linear };

inline std::string to_string(Streams s) {
  switch (s) {
    case Streams::both: return "both";
    case Streams::gray: return "gray";
    case Streams::flow: return "flow";
  }
  return "?";
}

inline Streams parse_streams(const std::string& s) {
  if (s == "both") return Streams::both;
  if (s == "gray") return Streams::gray;
  if (s == "flow") return Streams::flow;
  fail(ErrorCode::invalid_argument, "unknown stream selection '" + s + "' (expected both|gray|flow)");
}

inline std::string to_string(OutputActivation a) { return a == OutputActivation::sigmoid ? "sigmoid" : "linear"; }

inline OutputActivation parse_output_activation(const std::string& s) {
  if (s == "sigmoid") return OutputActivation::sigmoid;
  if (s == "linear") return OutputActivation::linear;
  fail(ErrorCode::invalid_argument, "unknown output activation '" + s + "' (expected sigmoid|linear)");
}

using BlockCounts = std::array<std::size_t, 4>;

inline BlockCounts depth_blocks(const std::string& depth) {
  if (depth == "r3d10") return {1, 1, 1, 1};
  if (depth == "r3d50") return {3, 4, 6, 3};
  if (depth == "r3d152") return {3, 8, 36, 3};
  fail(ErrorCode::invalid_argument, "unknown depth config '" + depth + "' (expected r3d10|r3d50|r3d152)");
}

struct ModelConfig {
  BlockCounts blocks{1, 1, 1, 1};
  std::size_t base_channels = 64;
  bool batch_norm = true;
  Streams streams = Streams::both;
  std::size_t gray_channels = 1;
  std::size_t flow_channels = 2;
  OutputActivation output = OutputActivation::sigmoid;

  bool use_gray() const { return streams != Streams::flow; }
  bool use_flow() const { return streams != Streams::gray; }
  std::size_t stream_features() const { return base_channels * 8 * kExpansion; }
  std::size_t head_inputs() const { return stream_features() * ((use_gray() ? 1 : 0) + (use_flow() ? 1 : 0)); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& c) {
  require(c.base_channels > 0, ErrorCode::invalid_argument, "base_channels must be > 0");
  for (std::size_t b : c.blocks) require(b > 0, ErrorCode::invalid_argument, "every stage needs at least one block");
  require(c.gray_channels > 0 && c.flow_channels > 0, ErrorCode::invalid_argument, "input channels must be > 0");
}

// Stem (7x7x7 conv, stride (1,2,2), 3x3x3 max pool stride (1,2,2)), four
// bottleneck stages with planes b, 2b, 4b, 8b, then global average pooling.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const std::string& name, std::size_t in_channels, const ModelConfig& cfg) : use_bn_(cfg.batch_norm) {
    const std::size_t b = cfg.base_channels;
    stem_ = Conv3d<T>(name + ".stem.conv", {in_channels, b, {7, 7, 7}, {1, 2, 2}, {3, 3, 3}, !cfg.batch_norm});
    if (use_bn_) stem_bn_ = BatchNorm3d<T>(name + ".stem.bn", b);
    stem_relu_ = ReLU<T>(name + ".stem.relu");
    pool_ = MaxPool3d<T>({3, 3, 3}, {1, 2, 2}, {1, 1, 1});
    std::size_t in = b;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t planes = b << s;
      for (std::size_t k = 0; k < cfg.blocks[s]; ++k) {
        const std::size_t stride = (k == 0 && s > 0) ? 2 : 1;
        blocks_.emplace_back(name + ".layer" + std::to_string(s + 1) + "." + std::to_string(k), in, planes, stride,
                             cfg.batch_norm);
        in = planes * kExpansion;
      }
    }
    features_ = in;
  }

  std::size_t features() const { return features_; }
  std::size_t in_channels() const { return stem_.spec().in_channels; }
  std::vector<Bottleneck<T>>& blocks() { return blocks_; }

  void init(Rng& rng) {
    stem_.init(rng);
    for (auto& b : blocks_) b.init(rng);
  }

  void collect(ParamRefs<T>& refs) {
    stem_.collect(refs);
    if (use_bn_) stem_bn_.collect(refs);
    for (auto& b : blocks_) b.collect(refs);
  }

  void for_each_relu(const std::function<void(ReLU<T>&)>& fn) {
    fn(stem_relu_);
    for (auto& b : blocks_) b.for_each_relu(fn);
  }

  // (N, C, D, H, W) -> (N, features)
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> h = stem_.forward(x);
    if (use_bn_) h = stem_bn_.forward(h, training);
    h = pool_.forward(stem_relu_.forward(h));
    for (auto& b : blocks_) h = b.forward(h, training);
    return gap_.forward(h);
  }

  Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) {
    Tensor<T> g = gap_.backward(gy);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
    g = stem_relu_.backward(pool_.backward(g));
    if (use_bn_) g = stem_bn_.backward(g);
    return stem_.backward(g, need_input_grad);
  }

  void clear_cache() {
    stem_.clear_cache();
    if (use_bn_) stem_bn_.clear_cache();
    stem_relu_.clear_cache();
    pool_.clear_cache();
    for (auto& b : blocks_) b.clear_cache();
  }

 private:
  bool use_bn_ = true;
  Conv3d<T> stem_;
  BatchNorm3d<T> stem_bn_;
  ReLU<T> stem_relu_;
  MaxPool3d<T> pool_;
  std::vector<Bottleneck<T>> blocks_;
  GlobalAvgPool<T> gap_;
  std::size_t features_ = 0;
};

template <typename T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

// Gray and flow backbones whose pooled features are concatenated and fed to
// one fully-connected unit. Either stream can be switched off for ablation.
template <typename T>
class TwoStreamModel {
 public:
  TwoStreamModel() = default;
  explicit TwoStreamModel(const ModelConfig& cfg) : cfg_(cfg) {
    validate(cfg);
    if (cfg.use_gray()) gray_ = Backbone<T>("gray", cfg.gray_channels, cfg);
    if (cfg.use_flow()) flow_ = Backbone<T>("flow", cfg.flow_channels, cfg);
    head_ = Linear<T>("head", cfg.head_inputs(), 1);
  }

  const ModelConfig& config() const { return cfg_; }
  Linear<T>& head() { return head_; }
  Backbone<T>& gray_backbone() { return gray_; }
  Backbone<T>& flow_backbone() { return flow_; }
  // concatenated features from the most recent forward pass
  const Tensor<T>& features() const { return features_; }

  OutputActivation output() const { return cfg_.output; }
  void set_output(OutputActivation a) { cfg_.output = a; }

  void init(Rng& rng) {
    if (cfg_.use_gray()) gray_.init(rng);
    if (cfg_.use_flow()) flow_.init(rng);
    head_.init(rng);
  }

  ParamRefs<T> params() {
    ParamRefs<T> refs;
    if (cfg_.use_gray()) gray_.collect(refs);
    if (cfg_.use_flow()) flow_.collect(refs);
    head_.collect(refs);
    return refs;
  }

  void zero_grad() {
    for (auto* p : params().params) p->zero_grad();
  }

  void for_each_relu(const std::function<void(ReLU<T>&)>& fn) {
    if (cfg_.use_gray()) gray_.for_each_relu(fn);
    if (cfg_.use_flow()) flow_.for_each_relu(fn);
  }

  // gray (N, Cg, D, H, W), flow (N, Cf, D, H, W); a disabled stream's input
  // is ignored and may be empty. Returns pre-activation outputs, shape (N).
  Tensor<T> forward_logits(const Tensor<T>& gray, const Tensor<T>& flow, bool training) {
    std::size_t n = 0;
    Tensor<T> fg, ff;
    if (cfg_.use_gray()) {
      fg = gray_.forward(gray, training);
      n = fg.dim(0);
    }
    if (cfg_.use_flow()) {
      if (cfg_.use_gray())
        require(flow.rank() == 5 && gray.rank() == 5 && flow.dim(0) == gray.dim(0) && flow.dim(2) == gray.dim(2) &&
                    flow.dim(3) == gray.dim(3) && flow.dim(4) == gray.dim(4),
                ErrorCode::shape_mismatch,
                "gray stream " + shape_string(gray.shape) + " and flow stream " + shape_string(flow.shape) +
                    " disagree in N/T/H/W");
      ff = flow_.forward(flow, training);
      n = ff.dim(0);
    }
    const std::size_t fgw = fg.data.empty() ? 0 : fg.dim(1), ffw = ff.data.empty() ? 0 : ff.dim(1);
    features_ = Tensor<T>({n, fgw + ffw});
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(fg.data.begin() + long(i * fgw), fgw, features_.data.begin() + long(i * (fgw + ffw)));
      std::copy_n(ff.data.begin() + long(i * ffw), ffw, features_.data.begin() + long(i * (fgw + ffw) + fgw));
    }
    Tensor<T> z = head_.forward(features_);
    z.shape = {n};
    return z;
  }

  T activate(T z) const { return cfg_.output == OutputActivation::sigmoid ? sigmoid(z) : z; }

  Tensor<T> forward(const Tensor<T>& gray, const Tensor<T>& flow, bool training) {
    Tensor<T> y = forward_logits(gray, flow, training);
    for (auto& v : y.data) v = activate(v);
    return y;
  }

  // Gradient of the loss w.r.t. the logits, shape (N). Returns input
  // gradients (gray, flow) when requested, otherwise empty tensors.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dlogits, bool need_input_grad = false) {
    const std::size_t n = features_.dim(0);
    require(dlogits.numel() == n, ErrorCode::shape_mismatch, "logit gradient has wrong length");
    Tensor<T> g = dlogits;
    g.shape = {n, 1};
    const Tensor<T> gf = head_.backward(g);
    const std::size_t fgw = cfg_.use_gray() ? gray_.features() : 0, ffw = cfg_.use_flow() ? flow_.features() : 0;
    std::pair<Tensor<T>, Tensor<T>> out;
    if (cfg_.use_gray()) {
      Tensor<T> gg({n, fgw});
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(gf.data.begin() + long(i * (fgw + ffw)), fgw, gg.data.begin() + long(i * fgw));
      out.first = gray_.backward(gg, need_input_grad);
    }
    if (cfg_.use_flow()) {
      Tensor<T> gg({n, ffw});
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(gf.data.begin() + long(i * (fgw + ffw) + fgw), ffw, gg.data.begin() + long(i * ffw));
      out.second = flow_.backward(gg, need_input_grad);
    }
    return out;
  }

  void clear_cache() {
    if (cfg_.use_gray()) gray_.clear_cache();
    if (cfg_.use_flow()) flow_.clear_cache();
  }

 private:
  ModelConfig cfg_;
  Backbone<T> gray_, flow_;
  Linear<T> head_;
  Tensor<T> features_;
};

// Stacks T x H x W x C videos into an (N, C, T, H, W) batch.
template <typename T>
Tensor<T> make_batch(const std::vector<const VideoTensor*>& videos) {
  require(!videos.empty(), ErrorCode::invalid_argument, "empty batch");
  const VideoTensor& f = *videos.front();
  Tensor<T> out({videos.size(), f.channels, f.frames, f.height, f.width});
  const std::size_t plane = f.frames * f.height * f.width;
  for (std::size_t n = 0; n < videos.size(); ++n) {
    const VideoTensor& v = *videos[n];
    require(v.same_shape(f), ErrorCode::shape_mismatch,
            "batch videos differ in shape: " + shape_string(v) + " vs " + shape_string(f));
    T* dst = out.sample(n);
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t c = 0; c < f.channels; ++c) dst[c * plane + i] = static_cast<T>(v.data[i * f.channels + c]);
  }
  return out;
}

template <typename T>
Tensor<T> make_batch(const VideoTensor& v) {
  return make_batch<T>(std::vector<const VideoTensor*>{&v});
}

// Inverse of make_batch for sample n: (C, T, H, W) -> T x H x W x C.
template <typename T>
VideoTensor sample_to_video(const Tensor<T>& t, std::size_t n) {
  require(t.rank() == 5, ErrorCode::shape_mismatch, "expected a 5-D tensor");
  VideoTensor v(t.dim(2), t.dim(3), t.dim(4), t.dim(1));
  const std::size_t plane = v.frames * v.height * v.width;
  const T* src = t.sample(n);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < v.channels; ++c) v.data[i * v.channels + c] = static_cast<float>(src[c * plane + i]);
  return v;
}

}  // namespace echoflow::nn
