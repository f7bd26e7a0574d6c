#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "logonet/common.hpp"
#include "logonet/rng.hpp"

namespace logonet {

// Thread-local autograd recording switch. Disabled forwards build plain
// value nodes with no parents, so eval passes hold no graph memory.
struct GradMode {
  static bool& flag() {
    thread_local bool enabled = true;
    return enabled;
  }
  static bool enabled() { return flag(); }
};

struct NoGradGuard {
  bool saved;
  NoGradGuard() : saved(GradMode::flag()) { GradMode::flag() = false; }
  ~NoGradGuard() { GradMode::flag() = saved; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

template <typename T>
struct Node {
  Shape5 shape{};
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  // Leaf gradients persist and accumulate across backward sweeps;
  // interior gradients are scratch re-zeroed per sweep.
  bool leaf = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

// Rank-5 tensor handle over a shared autograd node, laid out row-major as
// (batch, channel, S, H, W). Lower-rank data rides in degenerate trailing
// axes. Copying the handle shares the node (value semantics on the handle,
// shared storage), matching how parameters thread through a recorded graph.
template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(const Shape5& shape) { return filled(shape, T(0)); }

  static Tensor filled(const Shape5& shape, T v) {
    check_positive_shape(shape, "Tensor");
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = shape;
    t.node_->value.assign(static_cast<std::size_t>(logonet::numel(shape)), v);
    return t;
  }

  static Tensor scalar(T v) { return filled({1, 1, 1, 1, 1}, v); }

  static Tensor from_vector(const Shape5& shape, std::vector<T> data) {
    check_positive_shape(shape, "Tensor");
    if (static_cast<std::int64_t>(data.size()) != logonet::numel(shape)) {
      throw ShapeError("Tensor::from_vector: data size does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = shape;
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor randn(const Shape5& shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
    Tensor t = zeros(shape);
    for (T& v : t.node_->value) v = static_cast<T>(rng.normal()) * stddev + mean;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape5& shape() const { return node_->shape; }
  std::int64_t size(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& vec() { return node_->value; }
  const std::vector<T>& vec() const { return node_->value; }

  T& at(std::int64_t b, std::int64_t c, std::int64_t s, std::int64_t h, std::int64_t w) {
    const Shape5 st = strides_of(shape());
    return node_->value[static_cast<std::size_t>(b * st[0] + c * st[1] + s * st[2] + h * st[3] + w * st[4])];
  }
  T at(std::int64_t b, std::int64_t c, std::int64_t s, std::int64_t h, std::int64_t w) const {
    return const_cast<Tensor*>(this)->at(b, c, s, h, w);
  }

  T item() const {
    if (numel() != 1) throw ArgumentError("Tensor::item: tensor is not scalar");
    return node_->value[0];
  }

  void set_requires_grad(bool on) {
    if (!node_->parents.empty()) {
      throw ArgumentError("set_requires_grad: only leaf tensors (no parents) can be marked");
    }
    node_->requires_grad = on;
    node_->leaf = on;
    if (on) node_->ensure_grad();
  }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
  T* grad_data() { return node_->grad.data(); }
  const T* grad_data() const { return node_->grad.data(); }
  std::vector<T>& grad_vec() { return node_->grad; }
  const std::vector<T>& grad_vec() const { return node_->grad; }
  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  NodePtr& impl() { return node_; }
  const NodePtr& impl() const { return node_; }

 private:
  NodePtr node_;
};

// Named trainable tensor. Collections of these drive the optimizer and the
// checkpoint container; names are slash-free dotted paths.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<Parameter<T>>;

namespace detail {

template <typename T>
inline Tensor<T> make_op(const Shape5& out_shape, const char* op,
                         std::vector<std::shared_ptr<Node<T>>> parents) {
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  bool track = GradMode::enabled();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    track = any;
  }
  if (track) {
    out.impl()->requires_grad = true;
    out.impl()->op = op;
    out.impl()->parents = std::move(parents);
  }
  return out;
}

template <typename T>
inline void accumulate(Node<T>& dst, const std::vector<T>& src) {
  dst.ensure_grad();
  T* d = dst.grad.data();
  const T* s = src.data();
  const std::size_t n = src.size();
  for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops (no broadcasting: mismatched shapes raise).

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = detail::make_op<T>(a.shape(), "add", {a.impl(), b.impl()});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (out.impl()->requires_grad) {
    auto an = a.impl();
    auto bn = b.impl();
    out.impl()->backward_fn = [an, bn](detail::Node<T>& self) {
      if (an->requires_grad) detail::accumulate(*an, self.grad);
      if (bn->requires_grad) detail::accumulate(*bn, self.grad);
    };
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out = detail::make_op<T>(a.shape(), "sub", {a.impl(), b.impl()});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (out.impl()->requires_grad) {
    auto an = a.impl();
    auto bn = b.impl();
    out.impl()->backward_fn = [an, bn](detail::Node<T>& self) {
      if (an->requires_grad) detail::accumulate(*an, self.grad);
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* d = bn->grad.data();
        const T* g = self.grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] -= g[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out = detail::make_op<T>(a.shape(), "mul", {a.impl(), b.impl()});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (out.impl()->requires_grad) {
    auto an = a.impl();
    auto bn = b.impl();
    out.impl()->backward_fn = [an, bn](detail::Node<T>& self) {
      const T* g = self.grad.data();
      const std::size_t n2 = self.grad.size();
      if (an->requires_grad) {
        an->ensure_grad();
        T* d = an->grad.data();
        const T* other = bn->value.data();
        for (std::size_t i = 0; i < n2; ++i) d[i] += g[i] * other[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* d = bn->grad.data();
        const T* other = an->value.data();
        for (std::size_t i = 0; i < n2; ++i) d[i] += g[i] * other[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = detail::make_op<T>(a.shape(), "scale", {a.impl()});
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  if (out.impl()->requires_grad) {
    auto an = a.impl();
    out.impl()->backward_fn = [an, c](detail::Node<T>& self) {
      an->ensure_grad();
      T* d = an->grad.data();
      const T* g = self.grad.data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += g[i] * c;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data movement.

template <typename T>
Tensor<T> permute5(const Tensor<T>& x, const std::array<int, 5>& axes) {
  std::array<bool, 5> seen{};
  for (int a : axes) {
    if (a < 0 || a > 4 || seen[static_cast<std::size_t>(a)]) {
      throw ArgumentError("permute5: axes must be a permutation of 0..4");
    }
    seen[static_cast<std::size_t>(a)] = true;
  }
  const Shape5 in_shape = x.shape();
  Shape5 out_shape;
  for (int i = 0; i < 5; ++i) out_shape[i] = in_shape[axes[i]];
  Tensor<T> out = detail::make_op<T>(out_shape, "permute", {x.impl()});

  const Shape5 in_st = strides_of(in_shape);
  // Stride in the input for each output axis.
  Shape5 gather;
  for (int i = 0; i < 5; ++i) gather[i] = in_st[axes[i]];
  const T* src = x.data();
  T* dst = out.data();
  std::int64_t idx = 0;
  for (std::int64_t i0 = 0; i0 < out_shape[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < out_shape[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < out_shape[2]; ++i2)
        for (std::int64_t i3 = 0; i3 < out_shape[3]; ++i3) {
          std::int64_t base = i0 * gather[0] + i1 * gather[1] + i2 * gather[2] + i3 * gather[3];
          for (std::int64_t i4 = 0; i4 < out_shape[4]; ++i4) {
            dst[idx++] = src[base + i4 * gather[4]];
          }
        }

  if (out.impl()->requires_grad) {
    auto xn = x.impl();
    out.impl()->backward_fn = [xn, out_shape, gather](detail::Node<T>& self) {
      xn->ensure_grad();
      T* d = xn->grad.data();
      const T* g = self.grad.data();
      std::int64_t k = 0;
      for (std::int64_t i0 = 0; i0 < out_shape[0]; ++i0)
        for (std::int64_t i1 = 0; i1 < out_shape[1]; ++i1)
          for (std::int64_t i2 = 0; i2 < out_shape[2]; ++i2)
            for (std::int64_t i3 = 0; i3 < out_shape[3]; ++i3) {
              std::int64_t base =
                  i0 * gather[0] + i1 * gather[1] + i2 * gather[2] + i3 * gather[3];
              for (std::int64_t i4 = 0; i4 < out_shape[4]; ++i4) {
                d[base + i4 * gather[4]] += g[k++];
              }
            }
    };
  }
  return out;
}

template <typename T>
Tensor<T> reshape5(const Tensor<T>& x, const Shape5& new_shape) {
  check_positive_shape(new_shape, "reshape5");
  if (logonet::numel(new_shape) != x.numel()) {
    throw ShapeError("reshape5: element count mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  }
  Tensor<T> out = detail::make_op<T>(new_shape, "reshape", {x.impl()});
  std::memcpy(out.data(), x.data(), sizeof(T) * static_cast<std::size_t>(x.numel()));
  if (out.impl()->requires_grad) {
    auto xn = x.impl();
    out.impl()->backward_fn = [xn](detail::Node<T>& self) {
      detail::accumulate(*xn, self.grad);
    };
  }
  return out;
}

// (b, C, S, H, W) -> rank-3 view (b, C, S*H*W) carried as (b, C, S*H*W, 1, 1).
template <typename T>
Tensor<T> flatten_spatial(const Tensor<T>& x) {
  const Shape5& s = x.shape();
  return reshape5(x, Shape5{s[0], s[1], s[2] * s[3] * s[4], 1, 1});
}

template <typename T>
Tensor<T> concat_channel(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape5& sa = a.shape();
  const Shape5& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] || sa[4] != sb[4]) {
    throw ShapeError("concat_channel: non-channel extents differ: " + shape_str(sa) + " vs " +
                     shape_str(sb));
  }
  Shape5 out_shape = sa;
  out_shape[1] = sa[1] + sb[1];
  Tensor<T> out = detail::make_op<T>(out_shape, "concat_channel", {a.impl(), b.impl()});

  const std::int64_t vox = sa[2] * sa[3] * sa[4];
  const std::int64_t ca = sa[1];
  const std::int64_t cb = sb[1];
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t n = 0; n < sa[0]; ++n) {
    std::memcpy(po + n * (ca + cb) * vox, pa + n * ca * vox,
                sizeof(T) * static_cast<std::size_t>(ca * vox));
    std::memcpy(po + (n * (ca + cb) + ca) * vox, pb + n * cb * vox,
                sizeof(T) * static_cast<std::size_t>(cb * vox));
  }

  if (out.impl()->requires_grad) {
    auto an = a.impl();
    auto bn = b.impl();
    out.impl()->backward_fn = [an, bn, ca, cb, vox, batch = sa[0]](detail::Node<T>& self) {
      const T* g = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        T* d = an->grad.data();
        for (std::int64_t n = 0; n < batch; ++n) {
          const T* gs = g + n * (ca + cb) * vox;
          T* ds = d + n * ca * vox;
          for (std::int64_t i = 0; i < ca * vox; ++i) ds[i] += gs[i];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* d = bn->grad.data();
        for (std::int64_t n = 0; n < batch; ++n) {
          const T* gs = g + (n * (ca + cb) + ca) * vox;
          T* ds = d + n * cb * vox;
          for (std::int64_t i = 0; i < cb * vox; ++i) ds[i] += gs[i];
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cube partitioning between the volume layout and a folded batch of
// sub-cubes. Cubes are ordered row-major over the (n, n, n) grid and the
// output batch index is b*n^3 + cube_index. Both directions are exact
// index bijections.

inline void check_partition_args(const Shape5& s, std::int64_t n, const char* who) {
  if (n <= 0) throw PartitionError(std::string(who) + ": grid extent must be positive");
  if (s[2] != s[3] || s[3] != s[4]) {
    throw PartitionError(std::string(who) + ": input must be cube-shaped, got " + shape_str(s));
  }
  if (s[2] % n != 0) {
    throw PartitionError(std::string(who) + ": extent " + std::to_string(s[2]) +
                         " not divisible by grid extent " + std::to_string(n));
  }
}

template <typename T>
Tensor<T> partition_to_batch(const Tensor<T>& x, std::int64_t n) {
  const Shape5 s = x.shape();
  check_partition_args(s, n, "partition_to_batch");
  const std::int64_t bsz = s[0], ch = s[1], edge = s[2], cube = edge / n, ncubes = n * n * n;
  const Shape5 out_shape{bsz * ncubes, ch, cube, cube, cube};
  Tensor<T> out = detail::make_op<T>(out_shape, "partition_to_batch", {x.impl()});

  const Shape5 in_st = strides_of(s);
  const T* src = x.data();
  T* dst = out.data();
  std::int64_t idx = 0;
  for (std::int64_t b = 0; b < bsz; ++b)
    for (std::int64_t cs = 0; cs < n; ++cs)
      for (std::int64_t chh = 0; chh < n; ++chh)
        for (std::int64_t cw = 0; cw < n; ++cw)
          for (std::int64_t c = 0; c < ch; ++c)
            for (std::int64_t ls = 0; ls < cube; ++ls)
              for (std::int64_t lh = 0; lh < cube; ++lh) {
                const T* row = src + b * in_st[0] + c * in_st[1] + (cs * cube + ls) * in_st[2] +
                               (chh * cube + lh) * in_st[3] + cw * cube;
                for (std::int64_t lw = 0; lw < cube; ++lw) dst[idx++] = row[lw];
              }

  if (out.impl()->requires_grad) {
    auto xn = x.impl();
    out.impl()->backward_fn = [xn, bsz, ch, cube, n, in_st](detail::Node<T>& self) {
      xn->ensure_grad();
      T* d = xn->grad.data();
      const T* g = self.grad.data();
      std::int64_t idx2 = 0;
      for (std::int64_t b = 0; b < bsz; ++b)
        for (std::int64_t cs = 0; cs < n; ++cs)
          for (std::int64_t chh = 0; chh < n; ++chh)
            for (std::int64_t cw = 0; cw < n; ++cw)
              for (std::int64_t c = 0; c < ch; ++c)
                for (std::int64_t ls = 0; ls < cube; ++ls)
                  for (std::int64_t lh = 0; lh < cube; ++lh) {
                    T* row = d + b * in_st[0] + c * in_st[1] + (cs * cube + ls) * in_st[2] +
                             (chh * cube + lh) * in_st[3] + cw * cube;
                    for (std::int64_t lw = 0; lw < cube; ++lw) row[lw] += g[idx2++];
                  }
    };
  }
  return out;
}

template <typename T>
Tensor<T> reassemble_from_batch(const Tensor<T>& y, std::int64_t n) {
  const Shape5 s = y.shape();
  if (n <= 0) throw PartitionError("reassemble_from_batch: grid extent must be positive");
  const std::int64_t ncubes = n * n * n;
  if (s[0] % ncubes != 0) {
    throw PartitionError("reassemble_from_batch: batch " + std::to_string(s[0]) +
                         " not divisible by cube count " + std::to_string(ncubes));
  }
  if (s[2] != s[3] || s[3] != s[4]) {
    throw PartitionError("reassemble_from_batch: sub-cubes must be cube-shaped, got " +
                         shape_str(s));
  }
  const std::int64_t bsz = s[0] / ncubes, ch = s[1], cube = s[2], edge = cube * n;
  const Shape5 out_shape{bsz, ch, edge, edge, edge};
  Tensor<T> out = detail::make_op<T>(out_shape, "reassemble_from_batch", {y.impl()});

  const Shape5 out_st = strides_of(out_shape);
  const T* src = y.data();
  T* dst = out.data();
  std::int64_t idx = 0;
  for (std::int64_t b = 0; b < bsz; ++b)
    for (std::int64_t cs = 0; cs < n; ++cs)
      for (std::int64_t chh = 0; chh < n; ++chh)
        for (std::int64_t cw = 0; cw < n; ++cw)
          for (std::int64_t c = 0; c < ch; ++c)
            for (std::int64_t ls = 0; ls < cube; ++ls)
              for (std::int64_t lh = 0; lh < cube; ++lh) {
                T* row = dst + b * out_st[0] + c * out_st[1] + (cs * cube + ls) * out_st[2] +
                         (chh * cube + lh) * out_st[3] + cw * cube;
                for (std::int64_t lw = 0; lw < cube; ++lw) row[lw] = src[idx++];
              }

  if (out.impl()->requires_grad) {
    auto yn = y.impl();
    out.impl()->backward_fn = [yn, bsz, ch, cube, n, out_st](detail::Node<T>& self) {
      yn->ensure_grad();
      T* d = yn->grad.data();
      const T* g = self.grad.data();
      std::int64_t idx2 = 0;
      for (std::int64_t b = 0; b < bsz; ++b)
        for (std::int64_t cs = 0; cs < n; ++cs)
          for (std::int64_t chh = 0; chh < n; ++chh)
            for (std::int64_t cw = 0; cw < n; ++cw)
              for (std::int64_t c = 0; c < ch; ++c)
                for (std::int64_t ls = 0; ls < cube; ++ls)
                  for (std::int64_t lh = 0; lh < cube; ++lh) {
                    const T* row = g + b * out_st[0] + c * out_st[1] +
                                   (cs * cube + ls) * out_st[2] + (chh * cube + lh) * out_st[3] +
                                   cw * cube;
                    for (std::int64_t lw = 0; lw < cube; ++lw) d[idx2++] += row[lw];
                  }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions. Summation order is the flat row-major index order.

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out = detail::make_op<T>({1, 1, 1, 1, 1}, "sum_all", {x.impl()});
  const T* p = x.data();
  T acc = T(0);
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += p[i];
  out.data()[0] = acc;
  if (out.impl()->requires_grad) {
    auto xn = x.impl();
    out.impl()->backward_fn = [xn](detail::Node<T>& self) {
      xn->ensure_grad();
      const T g = self.grad[0];
      T* d = xn->grad.data();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) d[i] += g;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse sweep. Interior gradients are zeroed per sweep; leaf gradients
// accumulate across sweeps until zero_grad.

template <typename T>
void backward(Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ArgumentError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.impl()->requires_grad) return;

  std::vector<detail::Node<T>*> topo;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node<T>* node : topo) {
    if (!node->leaf) {
      node->grad.assign(node->value.size(), T(0));
    } else {
      node->ensure_grad();
    }
  }
  loss.impl()->grad[0] += T(1);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

}  // namespace logonet
