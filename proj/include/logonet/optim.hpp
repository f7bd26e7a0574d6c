#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "logonet/tensor.hpp"

namespace logonet {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;

  void validate() const {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ArgumentError("AdamWConfig: betas must lie in [0, 1)");
    }
    if (eps <= 0.0) throw ArgumentError("AdamWConfig: eps must be positive");
    if (weight_decay < 0.0) throw ArgumentError("AdamWConfig: weight_decay must be >= 0");
  }
};

// AdamW with decoupled weight decay: per step, first θ *= (1 - lr·wd), then
// the bias-corrected adaptive update θ -= lr·m̂/(√v̂ + eps). Trainable leaves
// always carry a gradient buffer (zeroed between steps), so decay applies on
// every step while a zero gradient leaves the adaptive term at exactly zero.
template <typename T>
class AdamW {
 public:
  AdamW() = default;

  AdamW(ParamList<T> params, const AdamWConfig& cfg = {}) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params_[i].tensor.numel()), T(0));
      v_[i].assign(static_cast<std::size_t>(params_[i].tensor.numel()), T(0));
    }
  }

  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  ParamList<T>& params() { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& t = params_[i].tensor;
      const std::vector<T>& g = t.grad_vec();
      if (g.empty()) {
        // Tensors never marked trainable carry no buffer; leave them alone.
        continue;
      }
      T* p = t.data();
      std::vector<T>& m = m_[i];
      std::vector<T>& v = v_[i];
      const std::size_t n = g.size();
      for (std::size_t k = 0; k < n; ++k) {
        p[k] = static_cast<T>(p[k] * (1.0 - lr * cfg_.weight_decay));
        const double gk = static_cast<double>(g[k]);
        const double mk = cfg_.beta1 * static_cast<double>(m[k]) + (1.0 - cfg_.beta1) * gk;
        const double vk = cfg_.beta2 * static_cast<double>(v[k]) + (1.0 - cfg_.beta2) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        const double m_hat = mk / bc1;
        const double v_hat = vk / bc2;
        p[k] = static_cast<T>(p[k] - lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

  // Optimizer state for checkpointing: moment buffers named after their
  // parameters plus the step counter (stored as a one-element buffer).
  struct StateRef {
    std::string name;
    std::vector<T>* data;
  };

  std::vector<StateRef> state() {
    std::vector<StateRef> out;
    out.reserve(2 * params_.size() + 1);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.push_back({"opt.m." + params_[i].name, &m_[i]});
      out.push_back({"opt.v." + params_[i].name, &v_[i]});
    }
    step_buf_.assign(1, static_cast<T>(step_));
    out.push_back({"opt.step", &step_buf_});
    return out;
  }

  // After loading state buffers, re-adopts the step counter.
  void sync_step_from_buffer() {
    if (!step_buf_.empty()) step_ = static_cast<std::int64_t>(step_buf_[0]);
  }

 private:
  AdamWConfig cfg_;
  ParamList<T> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::vector<T> step_buf_;
  std::int64_t step_ = 0;
};

// Linear warmup from zero to the peak over warmup_steps, then cosine decay
// to zero at total_steps.
inline double cosine_warmup_lr(std::int64_t step, std::int64_t warmup_steps,
                               std::int64_t total_steps, double peak_lr) {
  if (total_steps < 1 || warmup_steps < 0 || warmup_steps >= total_steps) {
    throw ArgumentError("cosine_warmup_lr: need 0 <= warmup < total");
  }
  if (step < 0 || step > total_steps) {
    throw ArgumentError("cosine_warmup_lr: step out of [0, total_steps]");
  }
  if (warmup_steps > 0 && step < warmup_steps) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace logonet
