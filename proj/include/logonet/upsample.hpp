#pragma once

#include <algorithm>
#include <vector>

#include "logonet/costing_hooks.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

enum class UpsampleMode { kNearest, kTrilinear };

namespace detail {

// Per-axis interpolation taps for a x2 resize with half-pixel centers
// (align_corners = false): src = (o + 0.5) / 2 - 0.5, clamped to the edge.
struct AxisTap {
  std::int64_t i0;
  std::int64_t i1;
  double w0;
  double w1;
};

inline std::vector<AxisTap> linear_taps_x2(std::int64_t in) {
  std::vector<AxisTap> taps(static_cast<std::size_t>(2 * in));
  for (std::int64_t o = 0; o < 2 * in; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    double lo = std::floor(src);
    double frac = src - lo;
    std::int64_t i0 = static_cast<std::int64_t>(lo);
    std::int64_t i1 = i0 + 1;
    if (i0 < 0) {
      i0 = 0;
      i1 = 0;
      frac = 0.0;
    }
    if (i1 > in - 1) i1 = in - 1;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace detail

// Doubles the three spatial extents. Nearest replicates; trilinear uses
// half-pixel sampling (align_corners = false) with edge clamping.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, UpsampleMode mode) {
  const Shape5 s = x.shape();
  const Shape5 os{s[0], s[1], s[2] * 2, s[3] * 2, s[4] * 2};
  const char* op_name =
      mode == UpsampleMode::kNearest ? "upsample2x_nearest" : "upsample2x_trilinear";
  if (cost::current()) {
    cost::record(op_name, os, 0, 0, static_cast<std::uint64_t>(numel(os)));
    if (cost::dry_run()) return Tensor<T>::zeros(os);
  }
  Tensor<T> out = detail::make_op<T>(os, op_name, {x.impl()});
  const std::int64_t planes = s[0] * s[1];
  const std::int64_t iS = s[2], iH = s[3], iW = s[4];
  const std::int64_t oS = os[2], oH = os[3], oW = os[4];
  const T* xp = x.data();
  T* op = out.data();

  if (mode == UpsampleMode::kNearest) {
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = xp + p * iS * iH * iW;
      T* dst = op + p * oS * oH * oW;
      for (std::int64_t zo = 0; zo < oS; ++zo)
        for (std::int64_t yo = 0; yo < oH; ++yo) {
          const T* row = src + ((zo / 2) * iH + yo / 2) * iW;
          T* orow = dst + (zo * oH + yo) * oW;
          for (std::int64_t xo = 0; xo < oW; ++xo) orow[xo] = row[xo / 2];
        }
    }
    if (out.impl()->requires_grad) {
      auto xn = x.impl();
      out.impl()->backward_fn = [xn, planes, iS, iH, iW, oS, oH, oW](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T* g = self.grad.data();
        T* gx = xn->grad.data();
        for (std::int64_t p = 0; p < planes; ++p) {
          const T* gsrc = g + p * oS * oH * oW;
          T* gdst = gx + p * iS * iH * iW;
          for (std::int64_t zo = 0; zo < oS; ++zo)
            for (std::int64_t yo = 0; yo < oH; ++yo) {
              T* grow = gdst + ((zo / 2) * iH + yo / 2) * iW;
              const T* srow = gsrc + (zo * oH + yo) * oW;
              for (std::int64_t xo = 0; xo < oW; ++xo) grow[xo / 2] += srow[xo];
            }
        }
      };
    }
    return out;
  }

  const auto tz = detail::linear_taps_x2(iS);
  const auto ty = detail::linear_taps_x2(iH);
  const auto tx = detail::linear_taps_x2(iW);
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = xp + p * iS * iH * iW;
    T* dst = op + p * oS * oH * oW;
    for (std::int64_t zo = 0; zo < oS; ++zo) {
      const auto& az = tz[static_cast<std::size_t>(zo)];
      for (std::int64_t yo = 0; yo < oH; ++yo) {
        const auto& ay = ty[static_cast<std::size_t>(yo)];
        const T* r00 = src + (az.i0 * iH + ay.i0) * iW;
        const T* r01 = src + (az.i0 * iH + ay.i1) * iW;
        const T* r10 = src + (az.i1 * iH + ay.i0) * iW;
        const T* r11 = src + (az.i1 * iH + ay.i1) * iW;
        T* orow = dst + (zo * oH + yo) * oW;
        for (std::int64_t xo = 0; xo < oW; ++xo) {
          const auto& ax = tx[static_cast<std::size_t>(xo)];
          const double v0 = az.w0 * (ay.w0 * (ax.w0 * r00[ax.i0] + ax.w1 * r00[ax.i1]) +
                                     ay.w1 * (ax.w0 * r01[ax.i0] + ax.w1 * r01[ax.i1]));
          const double v1 = az.w1 * (ay.w0 * (ax.w0 * r10[ax.i0] + ax.w1 * r10[ax.i1]) +
                                     ay.w1 * (ax.w0 * r11[ax.i0] + ax.w1 * r11[ax.i1]));
          orow[xo] = static_cast<T>(v0 + v1);
        }
      }
    }
  }
  if (out.impl()->requires_grad) {
    auto xn = x.impl();
    out.impl()->backward_fn = [xn, tz, ty, tx, planes, iS, iH, iW, oS, oH,
                               oW](detail::Node<T>& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const T* g = self.grad.data();
      T* gx = xn->grad.data();
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* gsrc = g + p * oS * oH * oW;
        T* gdst = gx + p * iS * iH * iW;
        for (std::int64_t zo = 0; zo < oS; ++zo) {
          const auto& az = tz[static_cast<std::size_t>(zo)];
          for (std::int64_t yo = 0; yo < oH; ++yo) {
            const auto& ay = ty[static_cast<std::size_t>(yo)];
            const std::int64_t b00 = (az.i0 * iH + ay.i0) * iW;
            const std::int64_t b01 = (az.i0 * iH + ay.i1) * iW;
            const std::int64_t b10 = (az.i1 * iH + ay.i0) * iW;
            const std::int64_t b11 = (az.i1 * iH + ay.i1) * iW;
            const T* srow = gsrc + (zo * oH + yo) * oW;
            for (std::int64_t xo = 0; xo < oW; ++xo) {
              const auto& ax = tx[static_cast<std::size_t>(xo)];
              const double gv = static_cast<double>(srow[xo]);
              gdst[b00 + ax.i0] += static_cast<T>(gv * az.w0 * ay.w0 * ax.w0);
              gdst[b00 + ax.i1] += static_cast<T>(gv * az.w0 * ay.w0 * ax.w1);
              gdst[b01 + ax.i0] += static_cast<T>(gv * az.w0 * ay.w1 * ax.w0);
              gdst[b01 + ax.i1] += static_cast<T>(gv * az.w0 * ay.w1 * ax.w1);
              gdst[b10 + ax.i0] += static_cast<T>(gv * az.w1 * ay.w0 * ax.w0);
              gdst[b10 + ax.i1] += static_cast<T>(gv * az.w1 * ay.w0 * ax.w1);
              gdst[b11 + ax.i0] += static_cast<T>(gv * az.w1 * ay.w1 * ax.w0);
              gdst[b11 + ax.i1] += static_cast<T>(gv * az.w1 * ay.w1 * ax.w1);
            }
          }
        }
      }
    };
  }
  return out;
}

}  // namespace logonet
