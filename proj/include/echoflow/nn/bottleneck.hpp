#pragma once

#include <functional>
#include <optional>
#include <string>

#include "echoflow/nn/layers.hpp"

namespace echoflow::nn {

inline constexpr std::size_t kExpansion = 4;

// 1x1x1 reduce -> 3x3x3 core -> 1x1x1 expand, plus identity or 1x1x1
// projection shortcut, followed by ReLU of the sum. Without normalization the
// convolutions carry a bias instead.
template <typename T>
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(const std::string& name, std::size_t in_channels, std::size_t planes, std::size_t stride, bool use_bn)
      : in_(in_channels), planes_(planes), stride_(stride), use_bn_(use_bn) {
    require(in_channels > 0 && planes > 0 && stride > 0, ErrorCode::invalid_argument, name + ": invalid block spec");
    const std::size_t out = planes * kExpansion;
    conv1_ = Conv3d<T>(name + ".conv1", {in_channels, planes, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, !use_bn});
    conv2_ = Conv3d<T>(name + ".conv2", {planes, planes, {3, 3, 3}, {stride, stride, stride}, {1, 1, 1}, !use_bn});
    conv3_ = Conv3d<T>(name + ".conv3", {planes, out, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, !use_bn});
    if (use_bn) {
      bn1_ = BatchNorm3d<T>(name + ".bn1", planes);
      bn2_ = BatchNorm3d<T>(name + ".bn2", planes);
      bn3_ = BatchNorm3d<T>(name + ".bn3", out);
    }
    relu1_ = ReLU<T>(name + ".relu1");
    relu2_ = ReLU<T>(name + ".relu2");
    relu_out_ = ReLU<T>(name + ".relu_out");
    if (stride != 1 || in_channels != out) {
      proj_ = Conv3d<T>(name + ".downsample.conv", {in_channels, out, {1, 1, 1}, {stride, stride, stride}, {0, 0, 0},
                                                     !use_bn});
      if (use_bn) proj_bn_ = BatchNorm3d<T>(name + ".downsample.bn", out);
    }
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return planes_ * kExpansion; }
  bool has_projection() const { return proj_.has_value(); }
  Conv3d<T>& conv3() { return conv3_; }
  BatchNorm3d<T>& bn3() { return bn3_; }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
    if (proj_) proj_->init(rng);
  }

  void collect(ParamRefs<T>& refs) {
    conv1_.collect(refs);
    if (use_bn_) bn1_.collect(refs);
    conv2_.collect(refs);
    if (use_bn_) bn2_.collect(refs);
    conv3_.collect(refs);
    if (use_bn_) bn3_.collect(refs);
    if (proj_) {
      proj_->collect(refs);
      if (use_bn_) proj_bn_->collect(refs);
    }
  }

  void for_each_relu(const std::function<void(ReLU<T>&)>& fn) {
    fn(relu1_);
    fn(relu2_);
    fn(relu_out_);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    require_rank5(x.shape, "Bottleneck");
    require(x.dim(1) == in_, ErrorCode::shape_mismatch,
            "bottleneck expects " + std::to_string(in_) + " channels, got " + std::to_string(x.dim(1)));
    Tensor<T> h = relu1_.forward(norm(bn1_, conv1_.forward(x), training));
    h = relu2_.forward(norm(bn2_, conv2_.forward(h), training));
    h = norm(bn3_, conv3_.forward(h), training);
    Tensor<T> s = proj_ ? (use_bn_ ? proj_bn_->forward(proj_->forward(x), training) : proj_->forward(x)) : x;
    require(s.shape == h.shape, ErrorCode::shape_mismatch,
            "shortcut " + shape_string(s.shape) + " incompatible with residual " + shape_string(h.shape));
    for (std::size_t i = 0; i < h.numel(); ++i) h.data[i] += s.data[i];
    return relu_out_.forward(h);
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const Tensor<T> g = relu_out_.backward(gy);
    Tensor<T> gb = conv3_.backward(denorm(bn3_, g));
    gb = conv2_.backward(denorm(bn2_, relu2_.backward(gb)));
    Tensor<T> gx = conv1_.backward(denorm(bn1_, relu1_.backward(gb)));
    if (proj_) {
      const Tensor<T> gs = proj_->backward(use_bn_ ? proj_bn_->backward(g) : g);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] += gs.data[i];
    } else {
      for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] += g.data[i];
    }
    return gx;
  }

  void clear_cache() {
    conv1_.clear_cache();
    conv2_.clear_cache();
    conv3_.clear_cache();
    if (proj_) proj_->clear_cache();
    if (use_bn_) {
      bn1_.clear_cache();
      bn2_.clear_cache();
      bn3_.clear_cache();
      if (proj_bn_) proj_bn_->clear_cache();
    }
    relu1_.clear_cache();
    relu2_.clear_cache();
    relu_out_.clear_cache();
  }

 private:
  Tensor<T> norm(BatchNorm3d<T>& bn, Tensor<T> x, bool training) {
    return use_bn_ ? bn.forward(x, training) : x;
  }
  Tensor<T> denorm(BatchNorm3d<T>& bn, const Tensor<T>& g) { return use_bn_ ? bn.backward(g) : g; }

  std::size_t in_ = 0, planes_ = 0, stride_ = 1;
  bool use_bn_ = true;
  Conv3d<T> conv1_, conv2_, conv3_;
  BatchNorm3d<T> bn1_, bn2_, bn3_;
  ReLU<T> relu1_, relu2_, relu_out_;
  std::optional<Conv3d<T>> proj_;
  std::optional<BatchNorm3d<T>> proj_bn_;
};

}  // namespace echoflow::nn
