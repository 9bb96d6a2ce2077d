#pragma once

// 3-D network layers with hand-written backward passes. Every layer caches
// what its backward pass needs during forward; backward accumulates into the
// parameter gradients and returns the gradient with respect to its input.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "echoflow/nn/tensor.hpp"

namespace echoflow::nn {

using Dims3 = std::array<std::size_t, 3>;  // (depth, height, width)

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

inline void require_rank5(const std::vector<std::size_t>& s, const char* who) {
  require(s.size() == 5, ErrorCode::shape_mismatch,
          std::string(who) + " expects (N,C,D,H,W) input, got " + shape_string(s));
}

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  require(in + 2 * pad >= k, ErrorCode::shape_mismatch, "convolution window larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

// ---------------------------------------------------------------------------

struct Conv3dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Dims3 kernel{1, 1, 1};
  Dims3 stride{1, 1, 1};
  Dims3 padding{0, 0, 0};
  bool bias = false;
};

// Cross-correlation lowered to GEMM through im2col, processed in slabs of
// output depth to bound the column buffer.
template <typename T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, const Conv3dSpec& spec) : spec_(spec) {
    require(spec.in_channels > 0 && spec.out_channels > 0, ErrorCode::invalid_argument, "conv channels must be > 0");
    weight_ = Param<T>(name + ".weight",
                       {spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]});
    if (spec.bias) bias_ = Param<T>(name + ".bias", {spec.out_channels});
  }

  const Conv3dSpec& spec() const { return spec_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }

  void init(Rng& rng) {
    weight_.value = xavier_init<T>(weight_.value.shape, rng);
    if (spec_.bias) bias_.value.fill(T(0));
  }

  void collect(ParamRefs<T>& refs) {
    refs.params.push_back(&weight_);
    if (spec_.bias) refs.params.push_back(&bias_);
  }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const {
    require_rank5(in, "Conv3d");
    require(in[1] == spec_.in_channels, ErrorCode::shape_mismatch,
            weight_.name + ": expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                std::to_string(in[1]));
    return {in[0], spec_.out_channels, conv_out(in[2], spec_.kernel[0], spec_.stride[0], spec_.padding[0]),
            conv_out(in[3], spec_.kernel[1], spec_.stride[1], spec_.padding[1]),
            conv_out(in[4], spec_.kernel[2], spec_.stride[2], spec_.padding[2])};
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y(output_shape(x.shape));
    input_ = x;
    const std::size_t cout = spec_.out_channels, k = patch_size();
    const std::size_t p = y.dim(2) * y.dim(3) * y.dim(4);
    ConstMatrixMap<T> w(weight_.value.data.data(), long(cout), long(k), Eigen::OuterStride<>(long(k)));
    for (std::size_t n = 0; n < x.dim(0); ++n) {
      T* out = y.sample(n);
      if (pointwise()) {
        ConstMatrixMap<T> in(x.sample(n), long(k), long(p), Eigen::OuterStride<>(long(p)));
        MatrixMap<T>(out, long(cout), long(p), Eigen::OuterStride<>(long(p))).noalias() = w * in;
      } else {
        for_each_slab(x.shape, y.shape, [&](std::size_t d0, std::size_t d1) {
          const std::size_t p0 = d0 * y.dim(3) * y.dim(4), pc = (d1 - d0) * y.dim(3) * y.dim(4);
          im2col(x.sample(n), x.shape, y.shape, d0, d1);
          ConstMatrixMap<T> col(col_.data(), long(k), long(pc), Eigen::OuterStride<>(long(pc)));
          MatrixMap<T>(out + p0, long(cout), long(pc), Eigen::OuterStride<>(long(p))).noalias() = w * col;
        });
      }
      if (spec_.bias)
        for (std::size_t c = 0; c < cout; ++c) {
          const T b = bias_.value.data[c];
          for (std::size_t i = 0; i < p; ++i) out[c * p + i] += b;
        }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
    const Tensor<T>& x = input_;
    require(!x.data.empty(), ErrorCode::invalid_argument, weight_.name + ": backward before forward");
    require(gy.shape == output_shape(x.shape), ErrorCode::shape_mismatch, weight_.name + ": gradient shape mismatch");
    const std::size_t cout = spec_.out_channels, k = patch_size();
    const std::size_t p = gy.dim(2) * gy.dim(3) * gy.dim(4);
    Tensor<T> gx;
    if (need_input_grad) gx = Tensor<T>(x.shape);
    ConstMatrixMap<T> w(weight_.value.data.data(), long(cout), long(k), Eigen::OuterStride<>(long(k)));
    MatrixMap<T> gw(weight_.grad.data.data(), long(cout), long(k), Eigen::OuterStride<>(long(k)));

    for (std::size_t n = 0; n < x.dim(0); ++n) {
      const T* g = gy.sample(n);
      if (spec_.bias)
        for (std::size_t c = 0; c < cout; ++c) {
          T s = T(0);
          for (std::size_t i = 0; i < p; ++i) s += g[c * p + i];
          bias_.grad.data[c] += s;
        }
      if (pointwise()) {
        ConstMatrixMap<T> in(x.sample(n), long(k), long(p), Eigen::OuterStride<>(long(p)));
        ConstMatrixMap<T> gm(g, long(cout), long(p), Eigen::OuterStride<>(long(p)));
        gw.noalias() += gm * in.transpose();
        if (need_input_grad)
          MatrixMap<T>(gx.sample(n), long(k), long(p), Eigen::OuterStride<>(long(p))).noalias() = w.transpose() * gm;
        continue;
      }
      for_each_slab(x.shape, gy.shape, [&](std::size_t d0, std::size_t d1) {
        const std::size_t p0 = d0 * gy.dim(3) * gy.dim(4), pc = (d1 - d0) * gy.dim(3) * gy.dim(4);
        ConstMatrixMap<T> gm(g + p0, long(cout), long(pc), Eigen::OuterStride<>(long(p)));
        im2col(x.sample(n), x.shape, gy.shape, d0, d1);
        ConstMatrixMap<T> col(col_.data(), long(k), long(pc), Eigen::OuterStride<>(long(pc)));
        gw.noalias() += gm * col.transpose();
        if (need_input_grad) {
          MatrixMap<T> gcol(col_.data(), long(k), long(pc), Eigen::OuterStride<>(long(pc)));
          gcol.noalias() = w.transpose() * gm;
          col2im(gx.sample(n), x.shape, gy.shape, d0, d1);
        }
      });
    }
    return gx;
  }

  void clear_cache() {
    input_ = Tensor<T>();
    col_.clear();
    col_.shrink_to_fit();
  }

 private:
  std::size_t patch_size() const { return spec_.in_channels * spec_.kernel[0] * spec_.kernel[1] * spec_.kernel[2]; }
  bool pointwise() const {
    return spec_.kernel == Dims3{1, 1, 1} && spec_.stride == Dims3{1, 1, 1} && spec_.padding == Dims3{0, 0, 0};
  }

  template <typename Fn>
  void for_each_slab(const std::vector<std::size_t>&, const std::vector<std::size_t>& out, Fn&& fn) {
    constexpr std::size_t kMaxColumnElements = std::size_t{1} << 23;
    const std::size_t plane = out[3] * out[4];
    const std::size_t per_slice = patch_size() * plane;
    const std::size_t slab = std::max<std::size_t>(1, kMaxColumnElements / std::max<std::size_t>(1, per_slice));
    for (std::size_t d0 = 0; d0 < out[2]; d0 += slab) {
      const std::size_t d1 = std::min(out[2], d0 + slab);
      col_.resize(patch_size() * (d1 - d0) * plane);
      fn(d0, d1);
    }
  }

  // Rows are (ci, kt, ky, kx); columns are output positions in [d0, d1).
  void im2col(const T* in, const std::vector<std::size_t>& is, const std::vector<std::size_t>& os, std::size_t d0,
              std::size_t d1) {
    const long id = long(is[2]), ih = long(is[3]), iw = long(is[4]);
    const std::size_t oh = os[3], ow = os[4], pc = (d1 - d0) * oh * ow;
    const auto [kd, kh, kw] = spec_.kernel;
    const long sd = long(spec_.stride[0]), sh = long(spec_.stride[1]), sw = long(spec_.stride[2]);
    const long pd = long(spec_.padding[0]), ph = long(spec_.padding[1]), pw = long(spec_.padding[2]);
    T* row = col_.data();
    for (std::size_t ci = 0; ci < spec_.in_channels; ++ci) {
      const T* chan = in + ci * std::size_t(id * ih * iw);
      for (std::size_t kt = 0; kt < kd; ++kt)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx, row += pc) {
            T* dst = row;
            for (std::size_t od = d0; od < d1; ++od) {
              const long zd = long(od) * sd - pd + long(kt);
              for (std::size_t oy = 0; oy < oh; ++oy, dst += ow) {
                const long zy = long(oy) * sh - ph + long(ky);
                if (zd < 0 || zd >= id || zy < 0 || zy >= ih) {
                  std::fill(dst, dst + ow, T(0));
                  continue;
                }
                const T* src = chan + (zd * ih + zy) * iw;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const long zx = long(ox) * sw - pw + long(kx);
                  dst[ox] = (zx < 0 || zx >= iw) ? T(0) : src[zx];
                }
              }
            }
          }
    }
  }

  void col2im(T* gin, const std::vector<std::size_t>& is, const std::vector<std::size_t>& os, std::size_t d0,
              std::size_t d1) const {
    const long id = long(is[2]), ih = long(is[3]), iw = long(is[4]);
    const std::size_t oh = os[3], ow = os[4], pc = (d1 - d0) * oh * ow;
    const auto [kd, kh, kw] = spec_.kernel;
    const long sd = long(spec_.stride[0]), sh = long(spec_.stride[1]), sw = long(spec_.stride[2]);
    const long pd = long(spec_.padding[0]), ph = long(spec_.padding[1]), pw = long(spec_.padding[2]);
    const T* row = col_.data();
    for (std::size_t ci = 0; ci < spec_.in_channels; ++ci) {
      T* chan = gin + ci * std::size_t(id * ih * iw);
      for (std::size_t kt = 0; kt < kd; ++kt)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx, row += pc) {
            const T* src = row;
            for (std::size_t od = d0; od < d1; ++od) {
              const long zd = long(od) * sd - pd + long(kt);
              for (std::size_t oy = 0; oy < oh; ++oy, src += ow) {
                const long zy = long(oy) * sh - ph + long(ky);
                if (zd < 0 || zd >= id || zy < 0 || zy >= ih) continue;
                T* dst = chan + (zd * ih + zy) * iw;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const long zx = long(ox) * sw - pw + long(kx);
                  if (zx >= 0 && zx < iw) dst[zx] += src[ox];
                }
              }
            }
          }
    }
  }

  Conv3dSpec spec_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
  std::vector<T> col_;
};

// ---------------------------------------------------------------------------

// Per-channel batch normalization over (N, D, H, W).
template <typename T>
class BatchNorm3d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm3d() = default;
  BatchNorm3d(const std::string& name, std::size_t channels)
      : gamma_(name + ".weight", {channels}, T(1)),
        beta_(name + ".bias", {channels}, T(0)),
        running_mean_({channels}, T(0)),
        running_var_({channels}, T(1)),
        name_(name) {}

  std::size_t channels() const { return gamma_.value.numel(); }
  Param<T>& gamma() { return gamma_; }
  Param<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  void collect(ParamRefs<T>& refs) {
    refs.params.push_back(&gamma_);
    refs.params.push_back(&beta_);
    refs.buffers.push_back({name_ + ".running_mean", &running_mean_});
    refs.buffers.push_back({name_ + ".running_var", &running_var_});
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    require_rank5(x.shape, "BatchNorm3d");
    require(x.dim(1) == channels(), ErrorCode::shape_mismatch, name_ + ": channel count mismatch");
    const std::size_t n = x.dim(0), c = channels(), s = x.dim(2) * x.dim(3) * x.dim(4);
    Tensor<T> y(x.shape);
    training_ = training;
    inv_std_.assign(c, T(0));
    xhat_ = Tensor<T>(x.shape);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mean, var;
      if (training) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < s; ++j) sum += double(x.data[(i * c + ch) * s + j]);
        const double m = double(n * s);
        mean = sum / m;
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < s; ++j) {
            const double d = double(x.data[(i * c + ch) * s + j]) - mean;
            sq += d * d;
          }
        var = sq / m;
        const double unbiased = m > 1 ? sq / (m - 1) : var;
        running_mean_.data[ch] = T((1 - kMomentum) * double(running_mean_.data[ch]) + kMomentum * mean);
        running_var_.data[ch] = T((1 - kMomentum) * double(running_var_.data[ch]) + kMomentum * unbiased);
      } else {
        mean = double(running_mean_.data[ch]);
        var = double(running_var_.data[ch]);
      }
      const double inv = 1.0 / std::sqrt(var + kEps);
      inv_std_[ch] = T(inv);
      const T g = gamma_.value.data[ch], b = beta_.value.data[ch];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t idx = (i * c + ch) * s + j;
          const T xh = T((double(x.data[idx]) - mean) * inv);
          xhat_.data[idx] = xh;
          y.data[idx] = g * xh + b;
        }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    require(gy.shape == xhat_.shape, ErrorCode::shape_mismatch, name_ + ": gradient shape mismatch");
    const std::size_t n = gy.dim(0), c = channels(), s = gy.dim(2) * gy.dim(3) * gy.dim(4);
    Tensor<T> gx(gy.shape);
    const double m = double(n * s);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t idx = (i * c + ch) * s + j;
          sum_g += double(gy.data[idx]);
          sum_gx += double(gy.data[idx]) * double(xhat_.data[idx]);
        }
      gamma_.grad.data[ch] += T(sum_gx);
      beta_.grad.data[ch] += T(sum_g);
      const double scale = double(gamma_.value.data[ch]) * double(inv_std_[ch]);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t idx = (i * c + ch) * s + j;
          gx.data[idx] = training_ ? T(scale / m * (m * double(gy.data[idx]) - sum_g - double(xhat_.data[idx]) * sum_gx))
                                   : T(scale * double(gy.data[idx]));
        }
    }
    return gx;
  }

  void clear_cache() { xhat_ = Tensor<T>(); }

 private:
  Param<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  std::string name_;
  bool training_ = false;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------

enum class ReluRule {
  standard,  // gradient gated by forward positivity
  guided,    // gated by forward positivity and by positivity of the incoming signal
};

template <typename T>
struct ReluTraceEntry {
  std::string layer;
  Tensor<T> activation;  // forward output f
  Tensor<T> signal;      // backward signal leaving the gate
};

template <typename T>
class ReLU {
 public:
  ReLU() = default;
  explicit ReLU(std::string name) : name_(std::move(name)) {}

  ReluRule rule = ReluRule::standard;
  std::vector<ReluTraceEntry<T>>* trace = nullptr;

  const std::string& name() const { return name_; }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    output_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    require(gy.shape == output_.shape, ErrorCode::shape_mismatch, name_ + ": gradient shape mismatch");
    Tensor<T> gx(gy.shape);
    const bool guided = rule == ReluRule::guided;
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      const bool open = output_.data[i] > T(0) && (!guided || gy.data[i] > T(0));
      gx.data[i] = open ? gy.data[i] : T(0);
    }
    if (trace) trace->push_back({name_, output_, gx});
    return gx;
  }

  void clear_cache() { output_ = Tensor<T>(); }

 private:
  std::string name_;
  Tensor<T> output_;
};

// ---------------------------------------------------------------------------

template <typename T>
class MaxPool3d {
 public:
  MaxPool3d() = default;
  MaxPool3d(Dims3 kernel, Dims3 stride, Dims3 padding) : kernel_(kernel), stride_(stride), padding_(padding) {}

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const {
    require_rank5(in, "MaxPool3d");
    return {in[0], in[1], conv_out(in[2], kernel_[0], stride_[0], padding_[0]),
            conv_out(in[3], kernel_[1], stride_[1], padding_[1]), conv_out(in[4], kernel_[2], stride_[2], padding_[2])};
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y(output_shape(x.shape));
    in_shape_ = x.shape;
    argmax_.assign(y.numel(), 0);
    const long id = long(x.dim(2)), ih = long(x.dim(3)), iw = long(x.dim(4));
    const std::size_t od = y.dim(2), oh = y.dim(3), ow = y.dim(4);
    const std::size_t planes = x.dim(0) * x.dim(1);
    std::size_t o = 0;
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const std::size_t base = pl * std::size_t(id * ih * iw);
      for (std::size_t d = 0; d < od; ++d)
        for (std::size_t yy = 0; yy < oh; ++yy)
          for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t arg = base;
            for (std::size_t kd = 0; kd < kernel_[0]; ++kd) {
              const long zd = long(d * stride_[0] + kd) - long(padding_[0]);
              if (zd < 0 || zd >= id) continue;
              for (std::size_t ky = 0; ky < kernel_[1]; ++ky) {
                const long zy = long(yy * stride_[1] + ky) - long(padding_[1]);
                if (zy < 0 || zy >= ih) continue;
                for (std::size_t kx = 0; kx < kernel_[2]; ++kx) {
                  const long zx = long(xx * stride_[2] + kx) - long(padding_[2]);
                  if (zx < 0 || zx >= iw) continue;
                  const std::size_t idx = base + std::size_t((zd * ih + zy) * iw + zx);
                  if (x.data[idx] > best) {
                    best = x.data[idx];
                    arg = idx;
                  }
                }
              }
            }
            y.data[o] = best;
            argmax_[o] = arg;
          }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    require(gy.numel() == argmax_.size(), ErrorCode::shape_mismatch, "MaxPool3d: gradient shape mismatch");
    Tensor<T> gx(in_shape_);
    for (std::size_t i = 0; i < argmax_.size(); ++i) gx.data[argmax_[i]] += gy.data[i];
    return gx;
  }

  void clear_cache() { argmax_.clear(); }

 private:
  Dims3 kernel_{3, 3, 3}, stride_{1, 2, 2}, padding_{1, 1, 1};
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

// ---------------------------------------------------------------------------

// (N, C, D, H, W) -> (N, C)
template <typename T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    require_rank5(x.shape, "GlobalAvgPool");
    in_shape_ = x.shape;
    const std::size_t nc = x.dim(0) * x.dim(1), s = x.dim(2) * x.dim(3) * x.dim(4);
    Tensor<T> y({x.dim(0), x.dim(1)});
    for (std::size_t i = 0; i < nc; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < s; ++j) sum += double(x.data[i * s + j]);
      y.data[i] = T(sum / double(s));
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gx(in_shape_);
    const std::size_t s = in_shape_[2] * in_shape_[3] * in_shape_[4];
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      const T g = gy.data[i] / T(s);
      std::fill(gx.data.begin() + long(i * s), gx.data.begin() + long((i + 1) * s), g);
    }
    return gx;
  }

 private:
  std::vector<std::size_t> in_shape_;
};

// ---------------------------------------------------------------------------

// (N, F) -> (N, O). Explicit per-row loops keep each sample's result
// independent of batch composition.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out)
      : weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {}

  std::size_t in_features() const { return weight_.value.dim(1); }
  std::size_t out_features() const { return weight_.value.dim(0); }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  void init(Rng& rng) {
    weight_.value = xavier_init<T>(weight_.value.shape, rng);
    bias_.value.fill(T(0));
  }

  void collect(ParamRefs<T>& refs) {
    refs.params.push_back(&weight_);
    refs.params.push_back(&bias_);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    require(x.rank() == 2 && x.dim(1) == in_features(), ErrorCode::shape_mismatch,
            weight_.name + ": expected (N," + std::to_string(in_features()) + ") input, got " + shape_string(x.shape));
    input_ = x;
    const std::size_t n = x.dim(0), f = in_features(), o = out_features();
    Tensor<T> y({n, o});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < o; ++j) {
        double s = double(bias_.value.data[j]);
        for (std::size_t k = 0; k < f; ++k) s += double(weight_.value.data[j * f + k]) * double(x.data[i * f + k]);
        y.data[i * o + j] = T(s);
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::size_t n = input_.dim(0), f = in_features(), o = out_features();
    require(gy.rank() == 2 && gy.dim(0) == n && gy.dim(1) == o, ErrorCode::shape_mismatch,
            weight_.name + ": gradient shape mismatch");
    Tensor<T> gx({n, f});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < o; ++j) {
        const T g = gy.data[i * o + j];
        bias_.grad.data[j] += g;
        for (std::size_t k = 0; k < f; ++k) {
          weight_.grad.data[j * f + k] += g * input_.data[i * f + k];
          gx.data[i * f + k] += g * weight_.value.data[j * f + k];
        }
      }
    return gx;
  }

 private:
  Param<T> weight_, bias_;
  Tensor<T> input_;
};

}  // namespace echoflow::nn
