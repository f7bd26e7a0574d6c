#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "logonet/tensor.hpp"

namespace logonet {

struct DiceCeConfig {
  double w_dl = 1.0;
  double w_cl = 1.0;
  double eps = 1e-5;
  bool exclude_background = false;

  void validate() const {
    if (w_dl < 0.0 || w_cl < 0.0 || w_dl + w_cl <= 0.0) {
      throw ArgumentError("DiceCeConfig: weights must be nonnegative with positive sum");
    }
    if (eps <= 0.0) throw ArgumentError("DiceCeConfig: eps must be positive");
  }
};

// Per-voxel softmax over the channel axis with max subtraction.
template <typename T>
Tensor<T> softmax_channel(const Tensor<T>& x) {
  const Shape5 s = x.shape();
  Tensor<T> out = detail::make_op<T>(s, "softmax_channel", {x.impl()});
  const std::int64_t B = s[0], C = s[1], V = s[2] * s[3] * s[4];
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < V; ++i) {
      const std::int64_t base = b * C * V + i;
      T mx = px[base];
      for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, px[base + c * V]);
      T denom = T(0);
      for (std::int64_t c = 0; c < C; ++c) {
        const T e = std::exp(px[base + c * V] - mx);
        po[base + c * V] = e;
        denom += e;
      }
      for (std::int64_t c = 0; c < C; ++c) po[base + c * V] /= denom;
    }
  }
  if (out.impl()->requires_grad) {
    auto xn = x.impl();
    // self IS this node; capturing out.impl() here would form an ownership
    // cycle (node -> backward_fn -> node) and leak every upstream graph.
    out.impl()->backward_fn = [xn, B, C, V](detail::Node<T>& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const T* p = self.value.data();
      const T* g = self.grad.data();
      T* d = xn->grad.data();
      // dx_c = p_c * (g_c - sum_k g_k p_k) per voxel.
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t i = 0; i < V; ++i) {
          const std::int64_t base = b * C * V + i;
          T dot = T(0);
          for (std::int64_t c = 0; c < C; ++c) dot += g[base + c * V] * p[base + c * V];
          for (std::int64_t c = 0; c < C; ++c) {
            d[base + c * V] += p[base + c * V] * (g[base + c * V] - dot);
          }
        }
      }
    };
  }
  return out;
}

// Expands integer labels (b,1,S,H,W) to a one-hot float volume (b,C,S,H,W).
// Plain data, not differentiable.
template <typename T>
Tensor<T> one_hot(const Tensor<std::uint8_t>& labels, std::int64_t num_classes) {
  const Shape5 s = labels.shape();
  if (s[1] != 1) throw ShapeError("one_hot: expected a single label channel");
  if (num_classes < 1) throw ArgumentError("one_hot: num_classes must be positive");
  Tensor<T> out = Tensor<T>::zeros({s[0], num_classes, s[2], s[3], s[4]});
  const std::int64_t V = s[2] * s[3] * s[4];
  const std::uint8_t* pl = labels.data();
  T* po = out.data();
  for (std::int64_t b = 0; b < s[0]; ++b) {
    for (std::int64_t i = 0; i < V; ++i) {
      const std::int64_t cls = pl[b * V + i];
      if (cls >= num_classes) {
        throw ArgumentError("one_hot: label " + std::to_string(cls) + " out of range [0, " +
                            std::to_string(num_classes) + ")");
      }
      po[(b * num_classes + cls) * V + i] = T(1);
    }
  }
  return out;
}

// Soft Dice loss: per (batch, class) 1 - (2*sum(p*t)+eps)/(sum(p)+sum(t)+eps),
// averaged over batch and counted classes. Targets are plain data.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target_onehot, double eps = 1e-5,
                    bool exclude_background = false) {
  check_same_shape(probs, target_onehot, "dice_loss");
  const Shape5 s = probs.shape();
  const std::int64_t B = s[0], C = s[1], V = s[2] * s[3] * s[4];
  const std::int64_t c0 = exclude_background ? 1 : 0;
  if (c0 >= C) throw ArgumentError("dice_loss: no classes left after excluding background");
  const double denom_count = static_cast<double>(B * (C - c0));

  Tensor<T> out = detail::make_op<T>({1, 1, 1, 1, 1}, "dice_loss", {probs.impl()});
  const T* p = probs.data();
  const T* t = target_onehot.data();
  // Per-(b,c) sums kept for the backward closure.
  std::vector<double> inter(static_cast<std::size_t>(B * C), 0.0);
  std::vector<double> total(static_cast<std::size_t>(B * C), 0.0);
  double acc = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = c0; c < C; ++c) {
      const std::int64_t base = (b * C + c) * V;
      double a = 0.0, sp = 0.0, st = 0.0;
      for (std::int64_t i = 0; i < V; ++i) {
        a += static_cast<double>(p[base + i]) * static_cast<double>(t[base + i]);
        sp += static_cast<double>(p[base + i]);
        st += static_cast<double>(t[base + i]);
      }
      inter[static_cast<std::size_t>(b * C + c)] = a;
      total[static_cast<std::size_t>(b * C + c)] = sp + st;
      acc += 1.0 - (2.0 * a + eps) / (sp + st + eps);
    }
  }
  out.data()[0] = static_cast<T>(acc / denom_count);

  if (out.impl()->requires_grad) {
    auto pn = probs.impl();
    auto tn = target_onehot.impl();
    out.impl()->backward_fn = [pn, tn, inter, total, eps, c0, B, C, V,
                               denom_count](detail::Node<T>& self) {
      if (!pn->requires_grad) return;
      pn->ensure_grad();
      const T g = self.grad[0];
      const T* t = tn->value.data();
      T* d = pn->grad.data();
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = c0; c < C; ++c) {
          const std::size_t bc = static_cast<std::size_t>(b * C + c);
          const double den = total[bc] + eps;
          const double num = 2.0 * inter[bc] + eps;
          const std::int64_t base = (b * C + c) * V;
          // d/dp_i of (1 - num/den) = -(2 t_i den - num)/den^2, then the
          // batch/class mean factor.
          for (std::int64_t i = 0; i < V; ++i) {
            const double dd =
                -(2.0 * static_cast<double>(t[base + i]) * den - num) / (den * den);
            d[base + i] += g * static_cast<T>(dd / denom_count);
          }
        }
      }
    };
  }
  return out;
}

// Cross entropy against one-hot targets: voxel mean of -log(p_true), with the
// probability clamped at 1e-12 before the log.
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& probs, const Tensor<T>& target_onehot) {
  check_same_shape(probs, target_onehot, "ce_loss");
  const Shape5 s = probs.shape();
  const std::int64_t B = s[0], C = s[1], V = s[2] * s[3] * s[4];
  const double n_vox = static_cast<double>(B * V);
  constexpr double kClamp = 1e-12;

  Tensor<T> out = detail::make_op<T>({1, 1, 1, 1, 1}, "ce_loss", {probs.impl()});
  const T* p = probs.data();
  const T* t = target_onehot.data();
  double acc = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t base = (b * C + c) * V;
      for (std::int64_t i = 0; i < V; ++i) {
        const double ti = static_cast<double>(t[base + i]);
        if (ti != 0.0) {
          acc -= ti * std::log(std::max(static_cast<double>(p[base + i]), kClamp));
        }
      }
    }
  }
  out.data()[0] = static_cast<T>(acc / n_vox);

  if (out.impl()->requires_grad) {
    auto pn = probs.impl();
    auto tn = target_onehot.impl();
    out.impl()->backward_fn = [pn, tn, B, C, V, n_vox](detail::Node<T>& self) {
      if (!pn->requires_grad) return;
      pn->ensure_grad();
      const T g = self.grad[0];
      const T* p = pn->value.data();
      const T* t = tn->value.data();
      T* d = pn->grad.data();
      const std::int64_t n = B * C * V;
      for (std::int64_t i = 0; i < n; ++i) {
        const double ti = static_cast<double>(t[i]);
        if (ti == 0.0) continue;
        const double pi = static_cast<double>(p[i]);
        // Clamped region is constant in p, so its gradient is zero.
        if (pi > kClamp) d[i] += g * static_cast<T>(-ti / (pi * n_vox));
      }
    };
  }
  return out;
}

// Fine-tuning objective: softmax over channels, one-hot targets, then
// w_dl * Dice + w_cl * CE.
template <typename T>
Tensor<T> dice_ce_loss(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels,
                       const DiceCeConfig& cfg = {}) {
  cfg.validate();
  const Shape5 s = logits.shape();
  if (labels.shape() != Shape5{s[0], 1, s[2], s[3], s[4]}) {
    throw ShapeError("dice_ce_loss: labels " + shape_str(labels.shape()) +
                     " do not match logits " + shape_str(s));
  }
  Tensor<T> probs = softmax_channel(logits);
  Tensor<T> targets = one_hot<T>(labels, s[1]);
  Tensor<T> dl = dice_loss(probs, targets, cfg.eps, cfg.exclude_background);
  Tensor<T> cl = ce_loss(probs, targets);
  return add(scale(dl, static_cast<T>(cfg.w_dl)), scale(cl, static_cast<T>(cfg.w_cl)));
}

// Overlap metric 2|P∩T|/(|P|+|T|) for one class; 1.0 when both sets are
// empty (documented convention).
inline double dice_metric(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& truth,
                          std::uint8_t class_id) {
  check_same_shape(pred, truth, "dice_metric");
  const std::uint8_t* a = pred.data();
  const std::uint8_t* b = truth.data();
  const std::int64_t n = pred.numel();
  std::int64_t inter = 0, pa = 0, pb = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const bool ia = a[i] == class_id;
    const bool ib = b[i] == class_id;
    inter += ia && ib;
    pa += ia;
    pb += ib;
  }
  if (pa + pb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(pa + pb);
}

// Mean Dice over the foreground classes 1..num_classes-1.
inline double mean_foreground_dice(const Tensor<std::uint8_t>& pred,
                                   const Tensor<std::uint8_t>& truth,
                                   std::int64_t num_classes) {
  if (num_classes < 2) throw ArgumentError("mean_foreground_dice: need foreground classes");
  double acc = 0.0;
  for (std::int64_t c = 1; c < num_classes; ++c) {
    acc += dice_metric(pred, truth, static_cast<std::uint8_t>(c));
  }
  return acc / static_cast<double>(num_classes - 1);
}

}  // namespace logonet
