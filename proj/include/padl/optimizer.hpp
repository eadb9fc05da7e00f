#pragma once

// AdamW with decoupled weight decay. Parameter order is fixed at construction,
// so state updates are deterministic across runs.

#include "padl/tensor.hpp"

namespace padl {

class AdamW {
 public:
  struct Config {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
  };

  AdamW() = default;
  AdamW(std::vector<Tensor> params, Config cfg) : cfg_(cfg), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i].set_requires_grad(true);
      m_[i].assign(params_[i].numel(), 0.0f);
      v_[i].assign(params_[i].numel(), 0.0f);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      float* w = params_[i].data();
      const std::vector<float>& g = params_[i].grad();
      float* m = m_[i].data();
      float* v = v_[i].data();
      const std::size_t n = params_[i].numel();
      for (std::size_t j = 0; j < n; ++j) {
        const float gj = g[j];
        m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * gj * gj;
        const float mh = m[j] / bc1;
        const float vh = v[j] / bc2;
        w[j] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[j]);
      }
    }
  }

  int steps_taken() const { return t_; }
  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  int t_ = 0;
};

}  // namespace padl
