#pragma once

#include <Eigen/Core>
#include <cstring>
#include <vector>

#include "logonet/costing_hooks.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

// 3D cross-correlation with zero padding. Weight layout (out, in/groups,
// kS, kH, kW); bias layout (1, out, 1, 1, 1).
struct Conv3dSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::array<std::int64_t, 3> kernel{1, 1, 1};
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> padding{0, 0, 0};
  std::array<std::int64_t, 3> dilation{1, 1, 1};
  std::int64_t groups = 1;
  bool bias = true;

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0) {
      throw ArgumentError("Conv3dSpec: channel counts must be positive");
    }
    if (groups <= 0 || in_channels % groups != 0 || out_channels % groups != 0) {
      throw ArgumentError("Conv3dSpec: groups must divide both channel counts");
    }
    for (int i = 0; i < 3; ++i) {
      if (kernel[i] <= 0 || stride[i] <= 0 || dilation[i] <= 0 || padding[i] < 0) {
        throw ArgumentError("Conv3dSpec: bad kernel/stride/dilation/padding");
      }
    }
  }

  static std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p,
                                 std::int64_t d) {
    return (in + 2 * p - d * (k - 1) - 1) / s + 1;
  }

  Shape5 out_shape(const Shape5& in) const {
    validate();
    if (in[1] != in_channels) {
      throw ShapeError("conv3d: input has " + std::to_string(in[1]) + " channels, spec expects " +
                       std::to_string(in_channels));
    }
    Shape5 out{in[0], out_channels, 0, 0, 0};
    const char* axis_name[3] = {"S", "H", "W"};
    for (int i = 0; i < 3; ++i) {
      const std::int64_t o = out_extent(in[2 + i], kernel[i], stride[i], padding[i], dilation[i]);
      if (o < 1) {
        throw ShapeError(std::string("conv3d: output extent along ") + axis_name[i] +
                         " would be non-positive for input " + shape_str(in));
      }
      out[2 + i] = o;
    }
    return out;
  }

  Shape5 weight_shape() const {
    return Shape5{out_channels, in_channels / groups, kernel[0], kernel[1], kernel[2]};
  }

  std::uint64_t param_count() const {
    std::uint64_t p = static_cast<std::uint64_t>(out_channels) *
                      static_cast<std::uint64_t>(in_channels / groups) *
                      static_cast<std::uint64_t>(kernel[0] * kernel[1] * kernel[2]);
    if (bias) p += static_cast<std::uint64_t>(out_channels);
    return p;
  }
};

// Analytic counts: every kernel tap is one multiply, taps landing on the
// zero pad included, so macs = out_numel * (in/groups) * kS*kH*kW.
struct ConvCost {
  Shape5 out_shape;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

inline ConvCost count_conv3d(const Conv3dSpec& spec, const Shape5& in_shape) {
  ConvCost c;
  c.out_shape = spec.out_shape(in_shape);
  c.params = spec.param_count();
  c.macs = static_cast<std::uint64_t>(numel(c.out_shape)) *
           static_cast<std::uint64_t>(spec.in_channels / spec.groups) *
           static_cast<std::uint64_t>(spec.kernel[0] * spec.kernel[1] * spec.kernel[2]);
  return c;
}

namespace detail {

inline std::int64_t div_floor(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::int64_t div_ceil(std::int64_t a, std::int64_t b) { return -div_floor(-a, b); }

// Valid output range [o_begin, o_end) for kernel tap k along one axis, and
// the input coordinate offset i = o*stride + delta with delta = k*d - p.
struct TapRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  std::int64_t delta = 0;
};

inline TapRange tap_range(std::int64_t k, std::int64_t d, std::int64_t p, std::int64_t s,
                          std::int64_t in, std::int64_t out) {
  TapRange r;
  r.delta = k * d - p;
  r.begin = std::max<std::int64_t>(0, div_ceil(-r.delta, s));
  r.end = std::min<std::int64_t>(out, div_floor(in - 1 - r.delta, s) + 1);
  if (r.end < r.begin) r.end = r.begin;
  return r;
}

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Geometry shared by the forward and backward kernels.
struct ConvGeom {
  Conv3dSpec spec;
  Shape5 xs;
  Shape5 os;
  std::int64_t cin_g = 0, cout_g = 0, ktaps = 0, in_vox = 0, out_vox = 0, plane = 0;

  void init(const Conv3dSpec& sp, const Shape5& in_shape) {
    spec = sp;
    xs = in_shape;
    os = sp.out_shape(in_shape);
    cin_g = sp.in_channels / sp.groups;
    cout_g = sp.out_channels / sp.groups;
    ktaps = sp.kernel[0] * sp.kernel[1] * sp.kernel[2];
    in_vox = xs[2] * xs[3] * xs[4];
    out_vox = os[2] * os[3] * os[4];
    plane = os[3] * os[4];
  }

  bool depthwise() const {
    return spec.groups == spec.in_channels && spec.out_channels == spec.in_channels;
  }
};

// Fill the im2col slab for one (batch, group, output-depth-slice): rows are
// (ic, ks, kh, kw), columns are (oh, ow) row-major.
template <typename T>
void im2col_slab(const ConvGeom& g, const T* xb, std::int64_t group, std::int64_t osl, T* col) {
  const auto& sp = g.spec;
  const std::int64_t W = g.xs[4], H = g.xs[3], S = g.xs[2];
  const std::int64_t oW = g.os[4], oH = g.os[3];
  T* row = col;
  for (std::int64_t ic = 0; ic < g.cin_g; ++ic) {
    const T* xc = xb + (group * g.cin_g + ic) * g.in_vox;
    for (std::int64_t ks = 0; ks < sp.kernel[0]; ++ks) {
      const std::int64_t is = osl * sp.stride[0] - sp.padding[0] + ks * sp.dilation[0];
      const bool s_ok = is >= 0 && is < S;
      for (std::int64_t kh = 0; kh < sp.kernel[1]; ++kh) {
        const std::int64_t dh = kh * sp.dilation[1] - sp.padding[1];
        for (std::int64_t kw = 0; kw < sp.kernel[2]; ++kw) {
          if (!s_ok) {
            std::memset(row, 0, sizeof(T) * static_cast<std::size_t>(g.plane));
            row += g.plane;
            continue;
          }
          const TapRange rw = tap_range(kw, sp.dilation[2], sp.padding[2], sp.stride[2], W, oW);
          const T* xplane = xc + is * H * W;
          for (std::int64_t oh = 0; oh < oH; ++oh) {
            const std::int64_t ih = oh * sp.stride[1] + dh;
            T* seg = row + oh * oW;
            if (ih < 0 || ih >= H || rw.begin >= rw.end) {
              std::memset(seg, 0, sizeof(T) * static_cast<std::size_t>(oW));
              continue;
            }
            const T* xrow = xplane + ih * W;
            for (std::int64_t ow = 0; ow < rw.begin; ++ow) seg[ow] = T(0);
            if (sp.stride[2] == 1) {
              std::memcpy(seg + rw.begin, xrow + rw.begin + rw.delta,
                          sizeof(T) * static_cast<std::size_t>(rw.end - rw.begin));
            } else {
              for (std::int64_t ow = rw.begin; ow < rw.end; ++ow) {
                seg[ow] = xrow[ow * sp.stride[2] + rw.delta];
              }
            }
            for (std::int64_t ow = rw.end; ow < oW; ++ow) seg[ow] = T(0);
          }
          row += g.plane;
        }
      }
    }
  }
}

// Scatter-add the column-gradient slab back into the input gradient.
template <typename T>
void col2im_slab(const ConvGeom& g, const T* col, std::int64_t group, std::int64_t osl, T* gxb) {
  const auto& sp = g.spec;
  const std::int64_t W = g.xs[4], H = g.xs[3], S = g.xs[2];
  const std::int64_t oW = g.os[4], oH = g.os[3];
  const T* row = col;
  for (std::int64_t ic = 0; ic < g.cin_g; ++ic) {
    T* xc = gxb + (group * g.cin_g + ic) * g.in_vox;
    for (std::int64_t ks = 0; ks < sp.kernel[0]; ++ks) {
      const std::int64_t is = osl * sp.stride[0] - sp.padding[0] + ks * sp.dilation[0];
      const bool s_ok = is >= 0 && is < S;
      for (std::int64_t kh = 0; kh < sp.kernel[1]; ++kh) {
        const std::int64_t dh = kh * sp.dilation[1] - sp.padding[1];
        for (std::int64_t kw = 0; kw < sp.kernel[2]; ++kw) {
          if (!s_ok) {
            row += g.plane;
            continue;
          }
          const TapRange rw = tap_range(kw, sp.dilation[2], sp.padding[2], sp.stride[2], W, oW);
          T* xplane = xc + is * H * W;
          for (std::int64_t oh = 0; oh < oH; ++oh) {
            const std::int64_t ih = oh * sp.stride[1] + dh;
            if (ih < 0 || ih >= H) continue;
            T* xrow = xplane + ih * W;
            const T* seg = row + oh * oW;
            for (std::int64_t ow = rw.begin; ow < rw.end; ++ow) {
              xrow[ow * sp.stride[2] + rw.delta] += seg[ow];
            }
          }
          row += g.plane;
        }
      }
    }
  }
}

template <typename T>
void conv_forward_gemm(const ConvGeom& g, const T* x, const T* w, const T* bias, T* out) {
  const std::int64_t K = g.cin_g * g.ktaps;
  std::vector<T> col(static_cast<std::size_t>(K * g.plane));
  Eigen::Map<MatRM<T>> colm(col.data(), K, g.plane);
  for (std::int64_t b = 0; b < g.xs[0]; ++b) {
    const T* xb = x + b * g.spec.in_channels * g.in_vox;
    T* ob = out + b * g.spec.out_channels * g.out_vox;
    for (std::int64_t gr = 0; gr < g.spec.groups; ++gr) {
      Eigen::Map<const MatRM<T>> wm(w + gr * g.cout_g * K, g.cout_g, K);
      for (std::int64_t osl = 0; osl < g.os[2]; ++osl) {
        im2col_slab(g, xb, gr, osl, col.data());
        Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>> om(
            ob + gr * g.cout_g * g.out_vox + osl * g.plane, g.cout_g, g.plane,
            Eigen::OuterStride<>(g.out_vox));
        om.noalias() = wm * colm;
      }
    }
    if (bias) {
      for (std::int64_t oc = 0; oc < g.spec.out_channels; ++oc) {
        T* dst = ob + oc * g.out_vox;
        const T bv = bias[oc];
        for (std::int64_t i = 0; i < g.out_vox; ++i) dst[i] += bv;
      }
    }
  }
}

template <typename T>
void conv_backward_gemm(const ConvGeom& g, const T* x, const T* w, const T* gout, T* gx, T* gw,
                        T* gb) {
  const std::int64_t K = g.cin_g * g.ktaps;
  std::vector<T> col(static_cast<std::size_t>(K * g.plane));
  std::vector<T> colg;
  if (gx) colg.resize(static_cast<std::size_t>(K * g.plane));
  Eigen::Map<MatRM<T>> colm(col.data(), K, g.plane);
  for (std::int64_t b = 0; b < g.xs[0]; ++b) {
    const T* xb = x + b * g.spec.in_channels * g.in_vox;
    const T* gob = gout + b * g.spec.out_channels * g.out_vox;
    for (std::int64_t gr = 0; gr < g.spec.groups; ++gr) {
      Eigen::Map<const MatRM<T>> wm(w + gr * g.cout_g * K, g.cout_g, K);
      for (std::int64_t osl = 0; osl < g.os[2]; ++osl) {
        Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>> gm(
            gob + gr * g.cout_g * g.out_vox + osl * g.plane, g.cout_g, g.plane,
            Eigen::OuterStride<>(g.out_vox));
        if (gw) {
          im2col_slab(g, xb, gr, osl, col.data());
          Eigen::Map<MatRM<T>> gwm(gw + gr * g.cout_g * K, g.cout_g, K);
          gwm.noalias() += gm * colm.transpose();
        }
        if (gx) {
          Eigen::Map<MatRM<T>> cgm(colg.data(), K, g.plane);
          cgm.noalias() = wm.transpose() * gm;
          col2im_slab(g, colg.data(), gr, osl, gx + b * g.spec.in_channels * g.in_vox);
        }
      }
    }
    if (gb) {
      for (std::int64_t oc = 0; oc < g.spec.out_channels; ++oc) {
        const T* src = gob + oc * g.out_vox;
        T acc = T(0);
        for (std::int64_t i = 0; i < g.out_vox; ++i) acc += src[i];
        gb[oc] += acc;
      }
    }
  }
}

// Direct loops for groups == in == out channels; each channel convolves
// with its own single filter.
template <typename T>
void conv_forward_depthwise(const ConvGeom& g, const T* x, const T* w, const T* bias, T* out) {
  const auto& sp = g.spec;
  const std::int64_t S = g.xs[2], H = g.xs[3], W = g.xs[4];
  const std::int64_t oS = g.os[2], oH = g.os[3], oW = g.os[4];
  for (std::int64_t b = 0; b < g.xs[0]; ++b) {
    for (std::int64_t c = 0; c < sp.out_channels; ++c) {
      const T* xc = x + (b * sp.in_channels + c) * g.in_vox;
      const T* wc = w + c * g.ktaps;
      T* oc = out + (b * sp.out_channels + c) * g.out_vox;
      const T bv = bias ? bias[c] : T(0);
      for (std::int64_t os = 0; os < oS; ++os) {
        for (std::int64_t oh = 0; oh < oH; ++oh) {
          T* orow = oc + (os * oH + oh) * oW;
          for (std::int64_t ow = 0; ow < oW; ++ow) orow[ow] = bv;
          for (std::int64_t ks = 0; ks < sp.kernel[0]; ++ks) {
            const std::int64_t is = os * sp.stride[0] - sp.padding[0] + ks * sp.dilation[0];
            if (is < 0 || is >= S) continue;
            for (std::int64_t kh = 0; kh < sp.kernel[1]; ++kh) {
              const std::int64_t ih = oh * sp.stride[1] - sp.padding[1] + kh * sp.dilation[1];
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xc + (is * H + ih) * W;
              const T* wrow = wc + (ks * sp.kernel[1] + kh) * sp.kernel[2];
              for (std::int64_t kw = 0; kw < sp.kernel[2]; ++kw) {
                const TapRange rw =
                    tap_range(kw, sp.dilation[2], sp.padding[2], sp.stride[2], W, oW);
                const T wv = wrow[kw];
                if (sp.stride[2] == 1) {
                  const T* xs = xrow + rw.delta;
                  for (std::int64_t ow = rw.begin; ow < rw.end; ++ow) orow[ow] += wv * xs[ow];
                } else {
                  for (std::int64_t ow = rw.begin; ow < rw.end; ++ow) {
                    orow[ow] += wv * xrow[ow * sp.stride[2] + rw.delta];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_depthwise(const ConvGeom& g, const T* x, const T* w, const T* gout, T* gx,
                             T* gw, T* gb) {
  const auto& sp = g.spec;
  const std::int64_t S = g.xs[2], H = g.xs[3], W = g.xs[4];
  const std::int64_t oS = g.os[2], oH = g.os[3], oW = g.os[4];
  for (std::int64_t b = 0; b < g.xs[0]; ++b) {
    for (std::int64_t c = 0; c < sp.out_channels; ++c) {
      const T* xc = x + (b * sp.in_channels + c) * g.in_vox;
      const T* wc = w + c * g.ktaps;
      const T* gc = gout + (b * sp.out_channels + c) * g.out_vox;
      T* gxc = gx ? gx + (b * sp.in_channels + c) * g.in_vox : nullptr;
      T* gwc = gw ? gw + c * g.ktaps : nullptr;
      for (std::int64_t os = 0; os < oS; ++os) {
        for (std::int64_t oh = 0; oh < oH; ++oh) {
          const T* grow = gc + (os * oH + oh) * oW;
          for (std::int64_t ks = 0; ks < sp.kernel[0]; ++ks) {
            const std::int64_t is = os * sp.stride[0] - sp.padding[0] + ks * sp.dilation[0];
            if (is < 0 || is >= S) continue;
            for (std::int64_t kh = 0; kh < sp.kernel[1]; ++kh) {
              const std::int64_t ih = oh * sp.stride[1] - sp.padding[1] + kh * sp.dilation[1];
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xc + (is * H + ih) * W;
              T* gxrow = gxc ? gxc + (is * H + ih) * W : nullptr;
              const std::int64_t wbase = (ks * sp.kernel[1] + kh) * sp.kernel[2];
              for (std::int64_t kw = 0; kw < sp.kernel[2]; ++kw) {
                const TapRange rw =
                    tap_range(kw, sp.dilation[2], sp.padding[2], sp.stride[2], W, oW);
                const T wv = wc[wbase + kw];
                T wacc = T(0);
                for (std::int64_t ow = rw.begin; ow < rw.end; ++ow) {
                  const std::int64_t iw = ow * sp.stride[2] + rw.delta;
                  const T gv = grow[ow];
                  if (gxrow) gxrow[iw] += wv * gv;
                  wacc += xrow[iw] * gv;
                }
                if (gwc) gwc[wbase + kw] += wacc;
              }
            }
          }
        }
      }
      if (gb) {
        T acc = T(0);
        for (std::int64_t i = 0; i < g.out_vox; ++i) acc += gc[i];
        gb[c] += acc;
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv3dSpec& spec) {
  detail::ConvGeom geom;
  geom.init(spec, x.shape());
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv3d: weight shape " + shape_str(weight.shape()) + " does not match spec " +
                     shape_str(spec.weight_shape()));
  }
  if (spec.bias) {
    if (!bias.defined() || bias.shape() != Shape5{1, spec.out_channels, 1, 1, 1}) {
      throw ShapeError("conv3d: bias must have shape (1," + std::to_string(spec.out_channels) +
                       ",1,1,1)");
    }
  } else if (bias.defined()) {
    throw ArgumentError("conv3d: bias tensor given but spec.bias is false");
  }

  if (cost::current()) {
    const ConvCost cc = count_conv3d(spec, x.shape());
    cost::record("conv3d", cc.out_shape, cc.params, cc.macs,
                 spec.bias ? static_cast<std::uint64_t>(numel(cc.out_shape)) : 0);
    if (cost::dry_run()) return Tensor<T>::zeros(cc.out_shape);
  }

  std::vector<typename Tensor<T>::NodePtr> parents{x.impl(), weight.impl()};
  if (bias.defined()) parents.push_back(bias.impl());
  Tensor<T> out = detail::make_op<T>(geom.os, "conv3d", std::move(parents));

  const T* bias_ptr = bias.defined() ? bias.data() : nullptr;
  if (geom.depthwise()) {
    detail::conv_forward_depthwise(geom, x.data(), weight.data(), bias_ptr, out.data());
  } else {
    detail::conv_forward_gemm(geom, x.data(), weight.data(), bias_ptr, out.data());
  }

  if (out.impl()->requires_grad) {
    auto xn = x.impl();
    auto wn = weight.impl();
    auto bn = bias.defined() ? bias.impl() : nullptr;
    out.impl()->backward_fn = [geom, xn, wn, bn](detail::Node<T>& self) {
      T* gx = nullptr;
      T* gw = nullptr;
      T* gb = nullptr;
      if (xn->requires_grad) {
        xn->ensure_grad();
        gx = xn->grad.data();
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        gw = wn->grad.data();
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        gb = bn->grad.data();
      }
      if (!gx && !gw && !gb) return;
      if (geom.depthwise()) {
        detail::conv_backward_depthwise(geom, xn->value.data(), wn->value.data(),
                                        self.grad.data(), gx, gw, gb);
      } else {
        detail::conv_backward_gemm(geom, xn->value.data(), wn->value.data(), self.grad.data(), gx,
                                   gw, gb);
      }
    };
  }
  return out;
}

// Conv layer bundling spec + parameters, He-style init: weights drawn from
// N(0, 2/fan_in), biases zero.
template <typename T>
struct Conv3dLayer {
  Conv3dSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;

  Conv3dLayer() = default;

  Conv3dLayer(const Conv3dSpec& sp, Rng& rng) : spec(sp) {
    spec.validate();
    const double fan_in = static_cast<double>((sp.in_channels / sp.groups) * sp.kernel[0] *
                                              sp.kernel[1] * sp.kernel[2]);
    const T stddev = static_cast<T>(std::sqrt(2.0 / fan_in));
    weight = Tensor<T>::randn(spec.weight_shape(), rng, stddev);
    weight.set_requires_grad(true);
    if (spec.bias) {
      bias = Tensor<T>::zeros({1, spec.out_channels, 1, 1, 1});
      bias.set_requires_grad(true);
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv3d(x, weight, bias, spec); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (spec.bias) out.push_back({prefix + ".bias", bias});
  }
};

}  // namespace logonet
