#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "echoflow/error.hpp"
#include "echoflow/rng.hpp"

namespace echoflow::nn {

// Dense row-major array. Activations are 5-D (N, C, D, H, W); head features
// are 2-D (N, F); parameters take whatever rank they need.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }
  // elements per leading-index slice
  std::size_t stride0() const { return shape.empty() ? 0 : numel() / shape[0]; }

  T* sample(std::size_t n) { return data.data() + n * stride0(); }
  const T* sample(std::size_t n) const { return data.data() + n * stride0(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> shape, T fill = T(0))
      : name(std::move(n)), value(shape, fill), grad(shape, T(0)) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Named non-trainable state (e.g. running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* value;
};

template <typename T>
struct ParamRefs {
  std::vector<Param<T>*> params;
  std::vector<Buffer<T>> buffers;
};

// Glorot/Xavier normal: N(0, 2 / (fan_in + fan_out)).
template <typename T>
Tensor<T> xavier_init(const std::vector<std::size_t>& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  require(!shape.empty() && fan_in + fan_out > 0, ErrorCode::invalid_argument, "xavier_init needs a shape");
  Tensor<T> t(shape);
  const double sd = std::sqrt(2.0 / double(fan_in + fan_out));
  std::normal_distribution<double> dist(0.0, sd);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

// Fan-in/fan-out from a weight shape (out, in, k...) as used by common frameworks.
template <typename T>
Tensor<T> xavier_init(const std::vector<std::size_t>& shape, Rng& rng) {
  require(!shape.empty(), ErrorCode::invalid_argument, "xavier_init needs a shape");
  std::size_t receptive = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) receptive *= shape[i];
  const std::size_t fan_out = shape[0] * receptive;
  const std::size_t fan_in = (shape.size() > 1 ? shape[1] : 1) * receptive;
  return xavier_init<T>(shape, fan_in, fan_out, rng);
}

}  // namespace echoflow::nn
