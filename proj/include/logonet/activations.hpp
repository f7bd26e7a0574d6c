#pragma once

#include <cmath>

#include "logonet/costing_hooks.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

namespace detail {

template <typename T, typename Fwd, typename Grad>
Tensor<T> pointwise_unary(const Tensor<T>& x, const char* op_name, Fwd f, Grad df) {
  const Shape5 s = x.shape();
  if (cost::current()) {
    cost::record(op_name, s, 0, 0, static_cast<std::uint64_t>(numel(s)));
    if (cost::dry_run()) return Tensor<T>::zeros(s);
  }
  Tensor<T> out = make_op<T>(s, op_name, {x.impl()});
  const T* xp = x.data();
  T* op = out.data();
  const std::int64_t n = numel(s);
  for (std::int64_t i = 0; i < n; ++i) op[i] = f(xp[i]);
  if (out.impl()->requires_grad) {
    auto xn = x.impl();
    out.impl()->backward_fn = [xn, df, n](Node<T>& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const T* g = self.grad.data();
      const T* xv = xn->value.data();
      T* gx = xn->grad.data();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * df(xv[i]);
    };
  }
  return out;
}

}  // namespace detail

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return detail::pointwise_unary<T>(
      x, "gelu",
      [](T v) {
        const double d = static_cast<double>(v);
        return static_cast<T>(0.5 * d * (1.0 + std::erf(d * kInvSqrt2)));
      },
      [](T v) {
        const double d = static_cast<double>(v);
        const double cdf = 0.5 * (1.0 + std::erf(d * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * d * d);
        return static_cast<T>(cdf + d * pdf);
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::pointwise_unary<T>(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha = static_cast<T>(0.01)) {
  return detail::pointwise_unary<T>(
      x, "leaky_relu", [alpha](T v) { return v > T(0) ? v : alpha * v; },
      [alpha](T v) { return v > T(0) ? T(1) : alpha; });
}

}  // namespace logonet
