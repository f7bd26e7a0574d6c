#pragma once

#include <cmath>
#include <vector>

#include "logonet/costing_hooks.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

template <typename T>
struct BufferRef {
  std::string name;
  std::vector<T>* data;
};

template <typename T>
using BufferList = std::vector<BufferRef<T>>;

// Per-channel batch normalization over (batch, S, H, W). Training mode
// normalizes with biased batch statistics and updates running estimates;
// eval mode is a deterministic affine map of the stored estimates.
// Accumulations run in double in one fixed order (channel-major, then flat
// row-major within the channel).
template <typename T>
class BatchNorm3d {
 public:
  BatchNorm3d() = default;

  explicit BatchNorm3d(std::int64_t channels, T eps = static_cast<T>(1e-5),
                       T momentum = static_cast<T>(0.1))
      : channels_(channels), eps_(eps), momentum_(momentum) {
    if (channels <= 0) throw ArgumentError("BatchNorm3d: channels must be positive");
    gamma_ = Tensor<T>::filled({1, channels, 1, 1, 1}, T(1));
    gamma_.set_requires_grad(true);
    beta_ = Tensor<T>::zeros({1, channels, 1, 1, 1});
    beta_.set_requires_grad(true);
    running_mean_.assign(static_cast<std::size_t>(channels), T(0));
    running_var_.assign(static_cast<std::size_t>(channels), T(1));
  }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  std::int64_t channels() const { return channels_; }
  std::vector<T>& running_mean() { return running_mean_; }
  std::vector<T>& running_var() { return running_var_; }
  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }

  Tensor<T> forward(const Tensor<T>& x) {
    const Shape5 s = x.shape();
    if (s[1] != channels_) {
      throw ShapeError("batchnorm3d: input has " + std::to_string(s[1]) +
                       " channels, layer has " + std::to_string(channels_));
    }
    if (cost::current()) {
      cost::record("batchnorm3d", s, 2 * static_cast<std::uint64_t>(channels_), 0,
                   2 * static_cast<std::uint64_t>(numel(s)));
      if (cost::dry_run()) return Tensor<T>::zeros(s);
    }

    const std::int64_t batch = s[0], vox = s[2] * s[3] * s[4];
    const std::int64_t m = batch * vox;
    Tensor<T> out = detail::make_op<T>(s, "batchnorm3d", {x.impl(), gamma_.impl(), beta_.impl()});

    const T* xp = x.data();
    T* op = out.data();
    const T* gp = gamma_.data();
    const T* bp = beta_.data();

    if (training_) {
      std::vector<T> mean(static_cast<std::size_t>(channels_));
      std::vector<T> invstd(static_cast<std::size_t>(channels_));
      for (std::int64_t c = 0; c < channels_; ++c) {
        double acc = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* src = xp + (b * channels_ + c) * vox;
          for (std::int64_t i = 0; i < vox; ++i) acc += static_cast<double>(src[i]);
        }
        const double mu = acc / static_cast<double>(m);
        double vacc = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* src = xp + (b * channels_ + c) * vox;
          for (std::int64_t i = 0; i < vox; ++i) {
            const double d = static_cast<double>(src[i]) - mu;
            vacc += d * d;
          }
        }
        const double var = vacc / static_cast<double>(m);
        mean[c] = static_cast<T>(mu);
        invstd[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));

        const double unbiased = m > 1 ? vacc / static_cast<double>(m - 1) : var;
        running_mean_[c] =
            static_cast<T>((1.0 - static_cast<double>(momentum_)) * running_mean_[c] +
                           static_cast<double>(momentum_) * mu);
        running_var_[c] =
            static_cast<T>((1.0 - static_cast<double>(momentum_)) * running_var_[c] +
                           static_cast<double>(momentum_) * unbiased);

        const T g = gp[c], be = bp[c], mu_t = mean[c], is_t = invstd[c];
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* src = xp + (b * channels_ + c) * vox;
          T* dst = op + (b * channels_ + c) * vox;
          for (std::int64_t i = 0; i < vox; ++i) dst[i] = g * ((src[i] - mu_t) * is_t) + be;
        }
      }

      if (out.impl()->requires_grad) {
        auto xn = x.impl();
        auto gn = gamma_.impl();
        auto bn = beta_.impl();
        const std::int64_t C = channels_;
        out.impl()->backward_fn = [xn, gn, bn, mean, invstd, batch, vox, m,
                                   C](detail::Node<T>& self) {
          const T* g = self.grad.data();
          const T* xv = xn->value.data();
          const T* gammav = gn->value.data();
          if (gn->requires_grad) gn->ensure_grad();
          if (bn->requires_grad) bn->ensure_grad();
          if (xn->requires_grad) xn->ensure_grad();
          for (std::int64_t c = 0; c < C; ++c) {
            const T mu = mean[static_cast<std::size_t>(c)];
            const T is = invstd[static_cast<std::size_t>(c)];
            double gsum = 0.0, gxsum = 0.0;
            for (std::int64_t b = 0; b < batch; ++b) {
              const T* gs = g + (b * C + c) * vox;
              const T* xs = xv + (b * C + c) * vox;
              for (std::int64_t i = 0; i < vox; ++i) {
                gsum += static_cast<double>(gs[i]);
                gxsum += static_cast<double>(gs[i]) * static_cast<double>((xs[i] - mu) * is);
              }
            }
            if (bn->requires_grad) bn->grad[static_cast<std::size_t>(c)] += static_cast<T>(gsum);
            if (gn->requires_grad) gn->grad[static_cast<std::size_t>(c)] += static_cast<T>(gxsum);
            if (xn->requires_grad) {
              const T gmean = static_cast<T>(gsum / static_cast<double>(m));
              const T gxmean = static_cast<T>(gxsum / static_cast<double>(m));
              const T scale = gammav[c] * is;
              T* gxp = xn->grad.data();
              for (std::int64_t b = 0; b < batch; ++b) {
                const T* gs = g + (b * C + c) * vox;
                const T* xs = xv + (b * C + c) * vox;
                T* dst = gxp + (b * C + c) * vox;
                for (std::int64_t i = 0; i < vox; ++i) {
                  const T xhat = (xs[i] - mu) * is;
                  dst[i] += scale * (gs[i] - gmean - xhat * gxmean);
                }
              }
            }
          }
        };
      }
      return out;
    }

    // Eval: affine map from running statistics.
    std::vector<T> rinvstd(static_cast<std::size_t>(channels_));
    for (std::int64_t c = 0; c < channels_; ++c) {
      rinvstd[c] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(running_var_[c]) + static_cast<double>(eps_)));
    }
    for (std::int64_t c = 0; c < channels_; ++c) {
      const T g = gp[c], be = bp[c], rm = running_mean_[c], ris = rinvstd[c];
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* src = xp + (b * channels_ + c) * vox;
        T* dst = op + (b * channels_ + c) * vox;
        for (std::int64_t i = 0; i < vox; ++i) dst[i] = g * ((src[i] - rm) * ris) + be;
      }
    }
    if (out.impl()->requires_grad) {
      auto xn = x.impl();
      auto gn = gamma_.impl();
      auto bn = beta_.impl();
      const std::int64_t C = channels_;
      std::vector<T> rm = running_mean_;
      out.impl()->backward_fn = [xn, gn, bn, rm, rinvstd, batch, vox, C](detail::Node<T>& self) {
        const T* g = self.grad.data();
        const T* xv = xn->value.data();
        const T* gammav = gn->value.data();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (std::int64_t c = 0; c < C; ++c) {
          const T ris = rinvstd[static_cast<std::size_t>(c)];
          const T mu = rm[static_cast<std::size_t>(c)];
          double gsum = 0.0, gxsum = 0.0;
          for (std::int64_t b = 0; b < batch; ++b) {
            const T* gs = g + (b * C + c) * vox;
            const T* xs = xv + (b * C + c) * vox;
            T* dst = xn->requires_grad ? xn->grad.data() + (b * C + c) * vox : nullptr;
            const T scale = gammav[c] * ris;
            for (std::int64_t i = 0; i < vox; ++i) {
              gsum += static_cast<double>(gs[i]);
              gxsum += static_cast<double>(gs[i]) * static_cast<double>((xs[i] - mu) * ris);
              if (dst) dst[i] += scale * gs[i];
            }
          }
          if (bn->requires_grad) bn->grad[static_cast<std::size_t>(c)] += static_cast<T>(gsum);
          if (gn->requires_grad) gn->grad[static_cast<std::size_t>(c)] += static_cast<T>(gxsum);
        }
      };
    }
    return out;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma_});
    out.push_back({prefix + ".beta", beta_});
  }

  void collect_buffers(const std::string& prefix, BufferList<T>& out) {
    out.push_back({prefix + ".running_mean", &running_mean_});
    out.push_back({prefix + ".running_var", &running_var_});
  }

 private:
  std::int64_t channels_ = 0;
  T eps_ = static_cast<T>(1e-5);
  T momentum_ = static_cast<T>(0.1);
  bool training_ = true;
  Tensor<T> gamma_;
  Tensor<T> beta_;
  std::vector<T> running_mean_;
  std::vector<T> running_var_;
};

}  // namespace logonet
