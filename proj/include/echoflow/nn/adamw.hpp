#pragma once

#include <cmath>
#include <vector>

#include "echoflow/nn/tensor.hpp"

namespace echoflow::nn {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay: p <- p (1 - lr wd), then the
// bias-corrected Adam step. Moments are kept in double.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWOptions opt) : opt_(opt) {}

  const AdamWOptions& options() const { return opt_; }
  std::size_t step_count() const { return step_; }

  void step(const std::vector<Param<T>*>& params, double lr) {
    require(lr > 0.0 && std::isfinite(lr), ErrorCode::invalid_argument, "learning rate must be positive");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value.numel(), 0.0);
        v_.emplace_back(p->value.numel(), 0.0);
      }
    }
    require(m_.size() == params.size(), ErrorCode::shape_mismatch, "parameter list changed between AdamW steps");
    for (std::size_t k = 0; k < params.size(); ++k) {
      require(m_[k].size() == params[k]->value.numel() && params[k]->grad.numel() == params[k]->value.numel(),
              ErrorCode::shape_mismatch, params[k]->name + ": parameter and gradient shapes disagree");
      for (T g : params[k]->grad.data)
        require(std::isfinite(double(g)), ErrorCode::non_finite, "non-finite gradient in " + params[k]->name);
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(step_));
    const double decay = 1.0 - lr * opt_.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& val = params[k]->value.data;
      const auto& grad = params[k]->grad.data;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double g = double(grad[i]);
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
        const double mh = m[i] / bc1, vh = v[i] / bc2;
        val[i] = static_cast<T>(double(val[i]) * decay - lr * mh / (std::sqrt(vh) + opt_.eps));
      }
    }
  }

 private:
  AdamWOptions opt_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace echoflow::nn
