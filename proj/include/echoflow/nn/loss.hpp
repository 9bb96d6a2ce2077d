#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "echoflow/error.hpp"

namespace echoflow::nn {

inline constexpr double kProbClamp = 1e-7;

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d prediction (or d logit for the fused form)
};

// -(1/N) sum_i w_i [y_i log p_i + (1 - y_i) log(1 - p_i)] with p clamped to
// [eps, 1 - eps]. Gradient is with respect to the clamped prediction.
inline LossResult weighted_bce(std::span<const double> labels, std::span<const double> probs,
                               std::span<const double> weights) {
  require(labels.size() == probs.size() && labels.size() == weights.size(), ErrorCode::shape_mismatch,
          "weighted_bce: labels, predictions and weights differ in length");
  require(!labels.empty(), ErrorCode::invalid_argument, "weighted_bce: empty batch");
  const double n = double(labels.size());
  LossResult r;
  r.grad.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    const double y = labels[i], w = weights[i];
    r.loss -= w * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    r.grad[i] = -w * (y / p - (1.0 - y) / (1.0 - p)) / n;
  }
  r.loss /= n;
  return r;
}

// Same loss evaluated from logits; the gradient is taken through the sigmoid,
// w_i (sigmoid(z_i) - y_i) / N, which stays informative when p saturates.
inline LossResult weighted_bce_logits(std::span<const double> labels, std::span<const double> logits,
                                      std::span<const double> weights) {
  require(labels.size() == logits.size() && labels.size() == weights.size(), ErrorCode::shape_mismatch,
          "weighted_bce: labels, logits and weights differ in length");
  require(!labels.empty(), ErrorCode::invalid_argument, "weighted_bce: empty batch");
  const double n = double(labels.size());
  LossResult r;
  r.grad.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z = logits[i];
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    r.loss -= weights[i] * (labels[i] * std::log(pc) + (1.0 - labels[i]) * std::log(1.0 - pc));
    r.grad[i] = weights[i] * (p - labels[i]) / n;
  }
  r.loss /= n;
  return r;
}

// (1/N) sum_i w_i (z_i - y_i)^2, for linear-output (regression) heads.
inline LossResult weighted_mse(std::span<const double> targets, std::span<const double> outputs,
                               std::span<const double> weights) {
  require(targets.size() == outputs.size() && targets.size() == weights.size(), ErrorCode::shape_mismatch,
          "weighted_mse: lengths differ");
  require(!targets.empty(), ErrorCode::invalid_argument, "weighted_mse: empty batch");
  const double n = double(targets.size());
  LossResult r;
  r.grad.resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = outputs[i] - targets[i];
    r.loss += weights[i] * d * d;
    r.grad[i] = 2.0 * weights[i] * d / n;
  }
  r.loss /= n;
  return r;
}

struct ClassWeights {
  double negative = 1.0;
  double positive = 1.0;
  double of(int label) const { return label ? positive : negative; }
};

// w_c = N / (2 N_c): both classes carry equal total weight.
inline ClassWeights class_weights(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int y : labels) {
    require(y == 0 || y == 1, ErrorCode::invalid_argument, "labels must be 0 or 1");
    pos += std::size_t(y);
  }
  const std::size_t neg = labels.size() - pos;
  require(pos > 0 && neg > 0, ErrorCode::degenerate_input,
          "class weights need both classes (positives " + std::to_string(pos) + ", negatives " +
              std::to_string(neg) + ")");
  const double n = double(labels.size());
  return {n / (2.0 * double(neg)), n / (2.0 * double(pos))};
}

}  // namespace echoflow::nn
