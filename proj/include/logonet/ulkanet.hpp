#pragma once

#include <string>
#include <vector>

#include "logonet/lka.hpp"
#include "logonet/upsample.hpp"

namespace logonet {

// Four (or two, for the local path) encoder stages of LKA blocks joined to a
// decoder of bottleneck + one block per stage. decoder_channels lists the
// output width of each decoder block in execution order (bottleneck first,
// final block last); decoder_upsample marks which blocks double the spatial
// extents. The plan must satisfy prod(strides) == 2^(number of upsamples) so
// the decoder restores the input extents exactly.
struct UlkanetConfig {
  std::int64_t in_channels = 1;
  std::vector<std::int64_t> depths;
  std::vector<std::int64_t> dims;
  std::vector<std::int64_t> mlp_ratios;
  std::vector<std::int64_t> patch_kernels;
  std::vector<std::int64_t> patch_strides;
  std::vector<std::int64_t> decoder_channels;
  std::vector<bool> decoder_upsample;
  std::int64_t out_channels = 64;
  LkaAttentionConfig attention;  // kernel plan shared by all stages
  UpsampleMode upsample_mode = UpsampleMode::kTrilinear;
  bool bias = true;

  std::size_t n_stages() const { return depths.size(); }

  std::int64_t total_stride() const {
    std::int64_t p = 1;
    for (std::int64_t s : patch_strides) p *= s;
    return p;
  }

  void validate() const {
    const std::size_t n = depths.size();
    if (n < 1) throw ArgumentError("UlkanetConfig: at least one stage required");
    if (dims.size() != n || mlp_ratios.size() != n || patch_kernels.size() != n ||
        patch_strides.size() != n) {
      throw ArgumentError("UlkanetConfig: per-stage lists must share one length");
    }
    if (decoder_channels.size() != n + 1 || decoder_upsample.size() != n + 1) {
      throw ArgumentError("UlkanetConfig: decoder plan needs n_stages + 1 entries");
    }
    if (decoder_channels.back() != out_channels) {
      throw ArgumentError("UlkanetConfig: last decoder width must equal out_channels");
    }
    std::int64_t up = 1;
    for (bool u : decoder_upsample) up *= u ? 2 : 1;
    if (up != total_stride()) {
      throw ArgumentError("UlkanetConfig: upsample plan does not invert the stride plan");
    }
  }

  // Four-stage presets. The decoder width plan (half the matching encoder
  // width per level) is declared here, not taken from a reference.
  static UlkanetConfig normal(std::int64_t in_ch = 1, std::int64_t out_ch = 64) {
    UlkanetConfig c;
    c.in_channels = in_ch;
    c.depths = {3, 4, 6, 3};
    c.dims = {64, 128, 256, 512};
    c.mlp_ratios = {8, 8, 4, 4};
    c.patch_kernels = {7, 3, 3, 3};
    c.patch_strides = {4, 2, 2, 2};
    c.decoder_channels = {256, 128, 64, 32, out_ch};
    c.decoder_upsample = {true, true, true, true, true};
    c.out_channels = out_ch;
    return c;
  }

  static UlkanetConfig large(std::int64_t in_ch = 1, std::int64_t out_ch = 64) {
    UlkanetConfig c = normal(in_ch, out_ch);
    c.depths = {3, 3, 24, 3};
    c.dims = {96, 192, 384, 768};
    c.decoder_channels = {384, 192, 96, 48, out_ch};
    return c;
  }

  // Desk-scale variant: stride-2 stages (total /16), so the final decoder
  // block keeps its resolution and the plan still restores the input extents.
  static UlkanetConfig tiny(std::int64_t in_ch = 1, std::int64_t out_ch = 16) {
    UlkanetConfig c;
    c.in_channels = in_ch;
    c.depths = {1, 1, 2, 1};
    c.dims = {16, 32, 48, 64};
    c.mlp_ratios = {8, 8, 4, 4};
    c.patch_kernels = {3, 3, 3, 3};
    c.patch_strides = {2, 2, 2, 2};
    c.decoder_channels = {32, 24, 16, 8, out_ch};
    c.decoder_upsample = {true, true, true, true, false};
    c.out_channels = out_ch;
    return c;
  }

  // Two-stage local-path presets.
  static UlkanetConfig local_normal(std::int64_t in_ch = 1, std::int64_t out_ch = 64) {
    UlkanetConfig c;
    c.in_channels = in_ch;
    c.depths = {3, 4};
    c.dims = {64, 128};
    c.mlp_ratios = {8, 8};
    c.patch_kernels = {7, 3};
    c.patch_strides = {4, 2};
    c.decoder_channels = {64, 32, out_ch};
    c.decoder_upsample = {true, true, true};
    c.out_channels = out_ch;
    return c;
  }

  static UlkanetConfig local_tiny(std::int64_t in_ch = 1, std::int64_t out_ch = 16) {
    UlkanetConfig c;
    c.in_channels = in_ch;
    c.depths = {1, 1};
    c.dims = {16, 32};
    c.mlp_ratios = {8, 8};
    c.patch_kernels = {3, 3};
    c.patch_strides = {2, 2};
    c.decoder_channels = {16, 8, out_ch};
    c.decoder_upsample = {true, true, false};
    c.out_channels = out_ch;
    return c;
  }
};

template <typename T>
struct EncoderStage {
  PatchEmbed<T> embed;
  std::vector<LkaBlock<T>> blocks;
  BatchNorm3d<T> norm;  // stage end, applied over channels in volume form

  EncoderStage() = default;

  EncoderStage(std::int64_t in_ch, std::int64_t dim, std::int64_t depth, std::int64_t mlp_ratio,
               std::int64_t kernel, std::int64_t stride, const LkaAttentionConfig& attention,
               bool bias, Rng& rng) {
    PatchEmbedConfig pe;
    pe.in_channels = in_ch;
    pe.dim = dim;
    pe.kernel = kernel;
    pe.stride = stride;
    pe.bias = bias;
    embed = PatchEmbed<T>(pe, rng);
    blocks.reserve(static_cast<std::size_t>(depth));
    for (std::int64_t i = 0; i < depth; ++i) {
      LkaBlockConfig bc;
      bc.dim = dim;
      bc.mlp_ratio = mlp_ratio;
      bc.attention = attention;
      bc.bias = bias;
      blocks.emplace_back(bc, rng);
    }
    norm = BatchNorm3d<T>(dim);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    auto e = embed.forward(x);
    Tensor<T> tok = e.tokens;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      cost::Scope scope("blk" + std::to_string(i));
      tok = blocks[i].forward_tokens(tok, e.spatial[0], e.spatial[1], e.spatial[2]);
    }
    Tensor<T> vol = tokens_to_volume(tok, e.spatial[0], e.spatial[1], e.spatial[2]);
    cost::Scope scope("norm");
    return norm.forward(vol);
  }

  void set_training(bool on) {
    embed.set_training(on);
    for (auto& b : blocks) b.set_training(on);
    norm.set_training(on);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    embed.collect(prefix + ".embed", out);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].collect(prefix + ".blk" + std::to_string(i), out);
    }
    norm.collect(prefix + ".norm", out);
  }

  void collect_buffers(const std::string& prefix, BufferList<T>& out) {
    embed.collect_buffers(prefix + ".embed", out);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].collect_buffers(prefix + ".blk" + std::to_string(i), out);
    }
    norm.collect_buffers(prefix + ".norm", out);
  }
};

// Three (conv 3^3 p1 + norm + leaky relu 0.01) units, then an optional x2
// upsample. The first conv maps in -> out, the other two preserve width.
template <typename T>
struct DecoderBlock {
  Conv3dLayer<T> conv1, conv2, conv3;
  BatchNorm3d<T> bn1, bn2, bn3;
  bool upsample = true;
  UpsampleMode mode = UpsampleMode::kTrilinear;

  DecoderBlock() = default;

  DecoderBlock(std::int64_t in_ch, std::int64_t out_ch, bool up, UpsampleMode m, bool bias,
               Rng& rng)
      : upsample(up), mode(m) {
    auto make = [&](std::int64_t ic, std::int64_t oc) {
      Conv3dSpec sp;
      sp.in_channels = ic;
      sp.out_channels = oc;
      sp.kernel = {3, 3, 3};
      sp.padding = {1, 1, 1};
      sp.bias = bias;
      return Conv3dLayer<T>(sp, rng);
    };
    conv1 = make(in_ch, out_ch);
    conv2 = make(out_ch, out_ch);
    conv3 = make(out_ch, out_ch);
    bn1 = BatchNorm3d<T>(out_ch);
    bn2 = BatchNorm3d<T>(out_ch);
    bn3 = BatchNorm3d<T>(out_ch);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> h = leaky_relu(bn1.forward(conv1.forward(x)));
    h = leaky_relu(bn2.forward(conv2.forward(h)));
    h = leaky_relu(bn3.forward(conv3.forward(h)));
    if (upsample) h = upsample2x(h, mode);
    return h;
  }

  void set_training(bool on) {
    bn1.set_training(on);
    bn2.set_training(on);
    bn3.set_training(on);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv1.collect(prefix + ".conv1", out);
    bn1.collect(prefix + ".bn1", out);
    conv2.collect(prefix + ".conv2", out);
    bn2.collect(prefix + ".bn2", out);
    conv3.collect(prefix + ".conv3", out);
    bn3.collect(prefix + ".bn3", out);
  }

  void collect_buffers(const std::string& prefix, BufferList<T>& out) {
    bn1.collect_buffers(prefix + ".bn1", out);
    bn2.collect_buffers(prefix + ".bn2", out);
    bn3.collect_buffers(prefix + ".bn3", out);
  }
};

template <typename T>
class Ulkanet {
 public:
  Ulkanet() = default;

  Ulkanet(const UlkanetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t n = cfg_.n_stages();
    stages_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t in_ch = i == 0 ? cfg_.in_channels : cfg_.dims[i - 1];
      stages_.emplace_back(in_ch, cfg_.dims[i], cfg_.depths[i], cfg_.mlp_ratios[i],
                           cfg_.patch_kernels[i], cfg_.patch_strides[i], cfg_.attention,
                           cfg_.bias, rng);
    }
    // Bottleneck, then one block per stage walking back up, then the final
    // no-skip block.
    decoder_.reserve(n + 1);
    decoder_.emplace_back(cfg_.dims[n - 1], cfg_.decoder_channels[0], cfg_.decoder_upsample[0],
                          cfg_.upsample_mode, cfg_.bias, rng);
    for (std::size_t i = 1; i < n; ++i) {
      const std::int64_t skip_ch = cfg_.dims[n - 1 - i];
      decoder_.emplace_back(cfg_.decoder_channels[i - 1] + skip_ch, cfg_.decoder_channels[i],
                            cfg_.decoder_upsample[i], cfg_.upsample_mode, cfg_.bias, rng);
    }
    decoder_.emplace_back(cfg_.decoder_channels[n - 1], cfg_.decoder_channels[n],
                          cfg_.decoder_upsample[n], cfg_.upsample_mode, cfg_.bias, rng);
  }

  const UlkanetConfig& config() const { return cfg_; }

  std::vector<Tensor<T>> encode(const Tensor<T>& x) {
    const Shape5 s = x.shape();
    const std::int64_t stride = cfg_.total_stride();
    for (int axis = 2; axis < 5; ++axis) {
      if (s[axis] % stride != 0) {
        throw ShapeError("ulkanet: spatial extents " + shape_str(s) +
                         " must be divisible by the stride plan (" + std::to_string(stride) +
                         ")");
      }
    }
    std::vector<Tensor<T>> feats;
    feats.reserve(stages_.size());
    Tensor<T> h = x;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      cost::Scope scope("enc" + std::to_string(i + 1));
      try {
        h = stages_[i].forward(h);
      } catch (const ShapeError& e) {
        throw ShapeError("encoder stage " + std::to_string(i + 1) + ": " + e.what());
      }
      feats.push_back(h);
    }
    return feats;
  }

  Tensor<T> decode(const std::vector<Tensor<T>>& feats) {
    const std::size_t n = stages_.size();
    if (feats.size() != n) {
      throw ShapeError("ulkanet decode: expected " + std::to_string(n) + " features, got " +
                       std::to_string(feats.size()));
    }
    Tensor<T> h;
    {
      cost::Scope scope("dec.bottleneck");
      h = decoder_[0].forward(feats[n - 1]);
    }
    for (std::size_t i = 1; i < n; ++i) {
      cost::Scope scope("dec.up" + std::to_string(i));
      h = decoder_[i].forward(concat_channel(h, feats[n - 1 - i]));
    }
    cost::Scope scope("dec.final");
    return decoder_[n].forward(h);
  }

  Tensor<T> forward(const Tensor<T>& x) { return decode(encode(x)); }

  void set_training(bool on) {
    for (auto& s : stages_) s.set_training(on);
    for (auto& d : decoder_) d.set_training(on);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      stages_[i].collect(prefix + ".enc" + std::to_string(i + 1), out);
    }
    decoder_[0].collect(prefix + ".dec.bottleneck", out);
    for (std::size_t i = 1; i < stages_.size(); ++i) {
      decoder_[i].collect(prefix + ".dec.up" + std::to_string(i), out);
    }
    decoder_.back().collect(prefix + ".dec.final", out);
  }

  void collect_buffers(const std::string& prefix, BufferList<T>& out) {
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      stages_[i].collect_buffers(prefix + ".enc" + std::to_string(i + 1), out);
    }
    decoder_[0].collect_buffers(prefix + ".dec.bottleneck", out);
    for (std::size_t i = 1; i < stages_.size(); ++i) {
      decoder_[i].collect_buffers(prefix + ".dec.up" + std::to_string(i), out);
    }
    decoder_.back().collect_buffers(prefix + ".dec.final", out);
  }

  std::vector<EncoderStage<T>>& stages() { return stages_; }
  std::vector<DecoderBlock<T>>& decoder() { return decoder_; }

 private:
  UlkanetConfig cfg_;
  std::vector<EncoderStage<T>> stages_;
  std::vector<DecoderBlock<T>> decoder_;
};

// Total trainable scalar count of a parameter list.
template <typename T>
std::int64_t param_count(const ParamList<T>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace logonet
