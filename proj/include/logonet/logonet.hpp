#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "logonet/ulkanet.hpp"

namespace logonet {

inline std::int64_t cube_root_exact(std::int64_t v) {
  for (std::int64_t n = 1; n * n * n <= v; ++n) {
    if (n * n * n == v) return n;
  }
  return -1;
}

// Grid bookkeeping for the list-level partition API. n is the grid extent
// per axis, cube the sub-cube edge; together with the batch size this is
// enough to invert the partition exactly.
struct PartitionIndex {
  std::int64_t n = 1;
  std::int64_t cube = 0;
  std::int64_t batch = 0;
};

template <typename T>
struct CubePartition {
  std::vector<Tensor<T>> cubes;  // row-major over the (n, n, n) grid
  PartitionIndex index;
};

// Splits a cube-shaped volume into N = n^3 sub-cubes of edge B = E/n as a
// list of plain tensors (data-level utility; the training path folds cubes
// into the batch axis instead, which is the same bijection).
template <typename T>
CubePartition<T> partition_cube(const Tensor<T>& x, std::int64_t N) {
  const std::int64_t n = cube_root_exact(N);
  if (n < 1) {
    throw PartitionError("partition_cube: N = " + std::to_string(N) +
                         " is not a perfect cube");
  }
  check_partition_args(x.shape(), n, "partition_cube");
  const Shape5 s = x.shape();
  const std::int64_t cube = s[2] / n;
  CubePartition<T> out;
  out.index = {n, cube, s[0]};
  out.cubes.reserve(static_cast<std::size_t>(N));
  NoGradGuard guard;
  for (std::int64_t cs = 0; cs < n; ++cs)
    for (std::int64_t ch = 0; ch < n; ++ch)
      for (std::int64_t cw = 0; cw < n; ++cw) {
        Tensor<T> c = Tensor<T>::zeros({s[0], s[1], cube, cube, cube});
        for (std::int64_t b = 0; b < s[0]; ++b)
          for (std::int64_t cc = 0; cc < s[1]; ++cc)
            for (std::int64_t ls = 0; ls < cube; ++ls)
              for (std::int64_t lh = 0; lh < cube; ++lh)
                for (std::int64_t lw = 0; lw < cube; ++lw) {
                  c.at(b, cc, ls, lh, lw) =
                      x.at(b, cc, cs * cube + ls, ch * cube + lh, cw * cube + lw);
                }
        out.cubes.push_back(std::move(c));
      }
  return out;
}

// Exact inverse on shapes; accepts any channel width (local-path outputs are
// reassembled channel-wise).
template <typename T>
Tensor<T> reassemble(const std::vector<Tensor<T>>& cubes, const PartitionIndex& index) {
  const std::int64_t n = index.n;
  if (n < 1 || index.cube < 1 || index.batch < 1) {
    throw PartitionError("reassemble: invalid index");
  }
  if (static_cast<std::int64_t>(cubes.size()) != n * n * n) {
    throw PartitionError("reassemble: expected " + std::to_string(n * n * n) + " cubes, got " +
                         std::to_string(cubes.size()));
  }
  const Shape5 cs0 = cubes.front().shape();
  if (cs0[0] != index.batch || cs0[2] != index.cube || cs0[3] != index.cube ||
      cs0[4] != index.cube) {
    throw PartitionError("reassemble: cube shape " + shape_str(cs0) +
                         " inconsistent with index");
  }
  for (const auto& c : cubes) {
    if (c.shape() != cs0) throw PartitionError("reassemble: cubes disagree in shape");
  }
  const std::int64_t edge = index.cube * n;
  Tensor<T> out = Tensor<T>::zeros({index.batch, cs0[1], edge, edge, edge});
  std::size_t k = 0;
  for (std::int64_t cs = 0; cs < n; ++cs)
    for (std::int64_t ch = 0; ch < n; ++ch)
      for (std::int64_t cw = 0; cw < n; ++cw) {
        const Tensor<T>& c = cubes[k++];
        for (std::int64_t b = 0; b < index.batch; ++b)
          for (std::int64_t cc = 0; cc < cs0[1]; ++cc)
            for (std::int64_t ls = 0; ls < index.cube; ++ls)
              for (std::int64_t lh = 0; lh < index.cube; ++lh)
                for (std::int64_t lw = 0; lw < index.cube; ++lw) {
                  out.at(b, cc, cs * index.cube + ls, ch * index.cube + lh,
                         cw * index.cube + lw) = c.at(b, cc, ls, lh, lw);
                }
      }
  return out;
}

struct LoGoNetConfig {
  UlkanetConfig global_cfg;
  UlkanetConfig local_cfg;
  std::int64_t partitions = 8;  // N, a perfect cube
  std::int64_t fusion_channels = 64;
  std::int64_t num_classes = 2;
  bool use_local = true;

  void validate() const {
    global_cfg.validate();
    local_cfg.validate();
    if (cube_root_exact(partitions) < 1) {
      throw ArgumentError("LoGoNetConfig: partitions must be a perfect cube");
    }
    if (num_classes < 1) throw ArgumentError("LoGoNetConfig: num_classes must be positive");
    if (global_cfg.out_channels != fusion_channels ||
        local_cfg.out_channels != fusion_channels) {
      throw ArgumentError("LoGoNetConfig: both paths must emit fusion_channels");
    }
    if (global_cfg.in_channels != local_cfg.in_channels) {
      throw ArgumentError("LoGoNetConfig: paths disagree on input channels");
    }
  }

  static LoGoNetConfig normal(std::int64_t in_ch, std::int64_t classes) {
    LoGoNetConfig c;
    c.global_cfg = UlkanetConfig::normal(in_ch, 64);
    c.local_cfg = UlkanetConfig::local_normal(in_ch, 64);
    c.fusion_channels = 64;
    c.num_classes = classes;
    return c;
  }

  static LoGoNetConfig large(std::int64_t in_ch, std::int64_t classes) {
    LoGoNetConfig c = normal(in_ch, classes);
    c.global_cfg = UlkanetConfig::large(in_ch, 64);
    return c;
  }

  static LoGoNetConfig tiny(std::int64_t in_ch, std::int64_t classes) {
    LoGoNetConfig c;
    c.global_cfg = UlkanetConfig::tiny(in_ch, 16);
    c.local_cfg = UlkanetConfig::local_tiny(in_ch, 16);
    c.fusion_channels = 16;
    c.num_classes = classes;
    return c;
  }
};

// Fused-feature head: conv 3^3 + norm + GELU, then a pointwise classifier.
template <typename T>
struct SegmentationHead {
  Conv3dLayer<T> fuse;
  BatchNorm3d<T> norm;
  Conv3dLayer<T> classifier;

  SegmentationHead() = default;

  SegmentationHead(std::int64_t channels, std::int64_t classes, bool bias, Rng& rng) {
    Conv3dSpec fs;
    fs.in_channels = channels;
    fs.out_channels = channels;
    fs.kernel = {3, 3, 3};
    fs.padding = {1, 1, 1};
    fs.bias = bias;
    fuse = Conv3dLayer<T>(fs, rng);
    norm = BatchNorm3d<T>(channels);
    Conv3dSpec cs;
    cs.in_channels = channels;
    cs.out_channels = classes;
    cs.bias = bias;
    classifier = Conv3dLayer<T>(cs, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    return classifier.forward(gelu(norm.forward(fuse.forward(x))));
  }

  void set_training(bool on) { norm.set_training(on); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    fuse.collect(prefix + ".fuse", out);
    norm.collect(prefix + ".norm", out);
    classifier.collect(prefix + ".classifier", out);
  }

  void collect_buffers(const std::string& prefix, BufferList<T>& out) {
    norm.collect_buffers(prefix + ".norm", out);
  }
};

// Dual encoding: a global extractor over the whole cube plus one shared
// local extractor applied to every sub-cube (folded into the batch axis),
// fused by elementwise summation before the segmentation head.
template <typename T>
class LoGoNet {
 public:
  LoGoNet() = default;

  LoGoNet(const LoGoNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    n_ = cube_root_exact(cfg_.partitions);
    global_ = Ulkanet<T>(cfg_.global_cfg, rng);
    local_ = Ulkanet<T>(cfg_.local_cfg, rng);
    head_ = SegmentationHead<T>(cfg_.fusion_channels, cfg_.num_classes, cfg_.global_cfg.bias,
                                rng);
  }

  const LoGoNetConfig& config() const { return cfg_; }
  std::int64_t grid_extent() const { return n_; }
  Ulkanet<T>& global_path() { return global_; }
  Ulkanet<T>& local_path() { return local_; }
  SegmentationHead<T>& head() { return head_; }
  void set_use_local(bool on) { cfg_.use_local = on; }

  Tensor<T> global_features(const Tensor<T>& x) {
    cost::Scope scope("global");
    return global_.forward(x);
  }

  Tensor<T> local_features(const Tensor<T>& x) {
    cost::Scope scope("local");
    Tensor<T> folded = partition_to_batch(x, n_);
    Tensor<T> out = local_.forward(folded);
    return reassemble_from_batch(out, n_);
  }

  // Pre-head fusion tensor: global(x) + reassembled local outputs.
  Tensor<T> forward_features(const Tensor<T>& x) {
    Tensor<T> g = global_features(x);
    if (!cfg_.use_local) return g;
    Tensor<T> l = local_features(x);
    if (g.shape() != l.shape()) {
      throw ShapeError("logonet: path outputs disagree: global " + shape_str(g.shape()) +
                       " vs local " + shape_str(l.shape()));
    }
    return add(g, l);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> fused = forward_features(x);
    cost::Scope scope("head");
    return head_.forward(fused);
  }

  void set_training(bool on) {
    global_.set_training(on);
    local_.set_training(on);
    head_.set_training(on);
  }

  void collect(ParamList<T>& out) const {
    global_.collect("global", out);
    local_.collect("local", out);
    head_.collect("head", out);
  }

  void collect_buffers(BufferList<T>& out) {
    global_.collect_buffers("global", out);
    local_.collect_buffers("local", out);
    head_.collect_buffers("head", out);
  }

 private:
  LoGoNetConfig cfg_;
  std::int64_t n_ = 2;
  Ulkanet<T> global_;
  Ulkanet<T> local_;
  SegmentationHead<T> head_;
};

// Per-voxel argmax over the class axis; ties resolve to the smaller class
// index. Labels ride in a (b, 1, S, H, W) byte tensor.
template <typename T>
Tensor<std::uint8_t> predict_segmentation(const Tensor<T>& logits) {
  const Shape5 s = logits.shape();
  if (s[1] > 255) throw ArgumentError("predict_segmentation: more than 255 classes");
  Tensor<std::uint8_t> out = Tensor<std::uint8_t>::zeros({s[0], 1, s[2], s[3], s[4]});
  const std::int64_t vox = s[2] * s[3] * s[4];
  const T* p = logits.data();
  std::uint8_t* o = out.data();
  for (std::int64_t b = 0; b < s[0]; ++b) {
    for (std::int64_t i = 0; i < vox; ++i) {
      std::int64_t best = 0;
      T bv = p[(b * s[1]) * vox + i];
      for (std::int64_t c = 1; c < s[1]; ++c) {
        const T v = p[(b * s[1] + c) * vox + i];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      o[b * vox + i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace logonet
