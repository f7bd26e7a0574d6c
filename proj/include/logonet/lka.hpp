#pragma once

#include "logonet/activations.hpp"
#include "logonet/batchnorm.hpp"
#include "logonet/conv3d.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

// Tokens are (b, N, C) carried as (b, N, C, 1, 1); volume order is row-major
// over (S, H, W), so token t maps to (s, h, w) = (t / (H*W), (t / W) % H,
// t % W). Both directions are exact bijections.
template <typename T>
Tensor<T> volume_to_tokens(const Tensor<T>& x) {
  return permute5(flatten_spatial(x), {0, 2, 1, 3, 4});
}

template <typename T>
Tensor<T> tokens_to_volume(const Tensor<T>& t, std::int64_t S, std::int64_t H, std::int64_t W) {
  const Shape5 s = t.shape();
  if (s[3] != 1 || s[4] != 1) {
    throw ShapeError("tokens_to_volume: expected (b, N, C, 1, 1), got " + shape_str(s));
  }
  if (s[1] != S * H * W) {
    throw ShapeError("tokens_to_volume: token count " + std::to_string(s[1]) +
                     " does not match spatial record (" + std::to_string(S) + "," +
                     std::to_string(H) + "," + std::to_string(W) + ")");
  }
  return reshape5(permute5(t, {0, 2, 1, 3, 4}), Shape5{s[0], s[2], S, H, W});
}

// Large-kernel attention: a 5^3 depthwise conv, a dilated 7^3 depthwise conv
// (dilation 3), and a pointwise mixing conv — the depthwise chain covers a
// 23-wide window per axis — gating the input elementwise.
struct LkaAttentionConfig {
  std::int64_t dim = 0;
  std::int64_t k_local = 5;
  std::int64_t k_dil = 7;
  std::int64_t dilation = 3;
  bool bias = true;
};

template <typename T>
struct LkaAttention {
  LkaAttentionConfig cfg;
  Conv3dLayer<T> chconv;
  Conv3dLayer<T> diconv;
  Conv3dLayer<T> pointwise;

  LkaAttention() = default;

  LkaAttention(const LkaAttentionConfig& c, Rng& rng) : cfg(c) {
    Conv3dSpec ch;
    ch.in_channels = c.dim;
    ch.out_channels = c.dim;
    ch.groups = c.dim;
    ch.kernel = {c.k_local, c.k_local, c.k_local};
    ch.padding = {c.k_local / 2, c.k_local / 2, c.k_local / 2};
    ch.bias = c.bias;
    chconv = Conv3dLayer<T>(ch, rng);

    Conv3dSpec di;
    di.in_channels = c.dim;
    di.out_channels = c.dim;
    di.groups = c.dim;
    di.kernel = {c.k_dil, c.k_dil, c.k_dil};
    di.dilation = {c.dilation, c.dilation, c.dilation};
    const std::int64_t dp = c.dilation * (c.k_dil - 1) / 2;
    di.padding = {dp, dp, dp};
    di.bias = c.bias;
    diconv = Conv3dLayer<T>(di, rng);

    Conv3dSpec pw;
    pw.in_channels = c.dim;
    pw.out_channels = c.dim;
    pw.bias = c.bias;
    pointwise = Conv3dLayer<T>(pw, rng);
  }

  // The multiplicative gate before it touches the input.
  Tensor<T> attention_map(const Tensor<T>& u) const {
    cost::Scope scope("attn");
    return pointwise.forward(diconv.forward(chconv.forward(u)));
  }

  Tensor<T> forward(const Tensor<T>& u) const {
    if (u.shape()[1] != cfg.dim) {
      throw ShapeError("lka_attention: input has " + std::to_string(u.shape()[1]) +
                       " channels, unit has " + std::to_string(cfg.dim));
    }
    return mul(attention_map(u), u);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    chconv.collect(prefix + ".chconv", out);
    diconv.collect(prefix + ".diconv", out);
    pointwise.collect(prefix + ".pointwise", out);
  }
};

// Pointwise expand -> GELU -> 3^3 depthwise at hidden width -> GELU ->
// pointwise contract.
struct MlpConfig {
  std::int64_t dim = 0;
  std::int64_t ratio = 4;
  bool bias = true;
};

template <typename T>
struct MlpBlock {
  MlpConfig cfg;
  Conv3dLayer<T> fc1;
  Conv3dLayer<T> dwconv;
  Conv3dLayer<T> fc2;

  MlpBlock() = default;

  MlpBlock(const MlpConfig& c, Rng& rng) : cfg(c) {
    const std::int64_t hidden = c.dim * c.ratio;
    Conv3dSpec s1;
    s1.in_channels = c.dim;
    s1.out_channels = hidden;
    s1.bias = c.bias;
    fc1 = Conv3dLayer<T>(s1, rng);

    Conv3dSpec sd;
    sd.in_channels = hidden;
    sd.out_channels = hidden;
    sd.groups = hidden;
    sd.kernel = {3, 3, 3};
    sd.padding = {1, 1, 1};
    sd.bias = c.bias;
    dwconv = Conv3dLayer<T>(sd, rng);

    Conv3dSpec s2;
    s2.in_channels = hidden;
    s2.out_channels = c.dim;
    s2.bias = c.bias;
    fc2 = Conv3dLayer<T>(s2, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    cost::Scope scope("mlp");
    return fc2.forward(gelu(dwconv.forward(gelu(fc1.forward(x)))));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    dwconv.collect(prefix + ".dwconv", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

// Pre-norm residual block: x += Attn(BN(x)); x += MLP(BN(x)). The residual
// carries the un-normalized stream. Token entry points round-trip through
// the (b, C, S, H, W) view, where all conv work happens.
struct LkaBlockConfig {
  std::int64_t dim = 0;
  std::int64_t mlp_ratio = 4;
  LkaAttentionConfig attention;  // dim is overwritten from block dim
  bool bias = true;
};

template <typename T>
struct LkaBlock {
  LkaBlockConfig cfg;
  BatchNorm3d<T> norm1;
  BatchNorm3d<T> norm2;
  LkaAttention<T> attn;
  MlpBlock<T> mlp;

  LkaBlock() = default;

  LkaBlock(const LkaBlockConfig& c, Rng& rng) : cfg(c) {
    norm1 = BatchNorm3d<T>(c.dim);
    norm2 = BatchNorm3d<T>(c.dim);
    LkaAttentionConfig ac = c.attention;
    ac.dim = c.dim;
    ac.bias = c.bias;
    attn = LkaAttention<T>(ac, rng);
    mlp = MlpBlock<T>({c.dim, c.mlp_ratio, c.bias}, rng);
  }

  Tensor<T> forward_volume(const Tensor<T>& x) {
    Tensor<T> h = add(x, attn.forward(norm1.forward(x)));
    return add(h, mlp.forward(norm2.forward(h)));
  }

  Tensor<T> forward_tokens(const Tensor<T>& tokens, std::int64_t S, std::int64_t H,
                           std::int64_t W) {
    if (tokens.shape()[2] != cfg.dim) {
      throw ShapeError("lka_block: token dim " + std::to_string(tokens.shape()[2]) +
                       " does not match block dim " + std::to_string(cfg.dim));
    }
    Tensor<T> vol = tokens_to_volume(tokens, S, H, W);
    return volume_to_tokens(forward_volume(vol));
  }

  void set_training(bool on) {
    norm1.set_training(on);
    norm2.set_training(on);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    norm1.collect(prefix + ".norm1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    mlp.collect(prefix + ".mlp", out);
  }

  void collect_buffers(const std::string& prefix, BufferList<T>& out) {
    norm1.collect_buffers(prefix + ".norm1", out);
    norm2.collect_buffers(prefix + ".norm2", out);
  }
};

// Strided conv + channel norm; emits tokens plus the spatial record needed
// to view them as a volume again.
struct PatchEmbedConfig {
  std::int64_t in_channels = 0;
  std::int64_t dim = 0;
  std::int64_t kernel = 3;
  std::int64_t stride = 2;
  bool bias = true;
};

template <typename T>
struct PatchEmbed {
  PatchEmbedConfig cfg;
  Conv3dLayer<T> proj;
  BatchNorm3d<T> norm;

  struct Out {
    Tensor<T> tokens;
    std::array<std::int64_t, 3> spatial;
  };

  PatchEmbed() = default;

  PatchEmbed(const PatchEmbedConfig& c, Rng& rng) : cfg(c) {
    Conv3dSpec sp;
    sp.in_channels = c.in_channels;
    sp.out_channels = c.dim;
    sp.kernel = {c.kernel, c.kernel, c.kernel};
    sp.stride = {c.stride, c.stride, c.stride};
    sp.padding = {c.kernel / 2, c.kernel / 2, c.kernel / 2};
    sp.bias = c.bias;
    proj = Conv3dLayer<T>(sp, rng);
    norm = BatchNorm3d<T>(c.dim);
  }

  Out forward(const Tensor<T>& x) {
    cost::Scope scope("embed");
    Tensor<T> v = norm.forward(proj.forward(x));
    const Shape5 s = v.shape();
    return Out{volume_to_tokens(v), {s[2], s[3], s[4]}};
  }

  void set_training(bool on) { norm.set_training(on); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    proj.collect(prefix + ".proj", out);
    norm.collect(prefix + ".norm", out);
  }

  void collect_buffers(const std::string& prefix, BufferList<T>& out) {
    norm.collect_buffers(prefix + ".norm", out);
  }
};

}  // namespace logonet
