#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "logonet/kmeans.hpp"
#include "logonet/rng.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

// Masking decision for one slice inside one chain: a per-patch keep/mask
// bitmap over a grid of patch*patch tiles covering the H*W plane (edge tiles
// clipped). bitmap is row-major over (ceil(H/patch), ceil(W/patch)).
struct ChainSlice {
  std::int64_t slice = 0;
  std::int64_t patch = 1;
  std::vector<std::uint8_t> bitmap;
};

// Full masking plan for one volume: each sampled anchor extends to a chain of
// consecutive slices ending at the anchor, and every chain slice carries its
// own patch-grid bitmap. Overlapping chains union their masked voxels.
struct MaskPlan {
  std::int64_t slices = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::int64_t> anchors;
  std::int64_t chain_length = 1;
  std::vector<ChainSlice> chain_slices;

  // Sorted, de-duplicated list of slice indices touched by any chain.
  std::vector<std::int64_t> masked_slices() const {
    std::vector<std::int64_t> out;
    out.reserve(chain_slices.size());
    for (const auto& cs : chain_slices) out.push_back(cs.slice);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  // True if (s, h, w) is zeroed by at least one chain-slice bitmap.
  bool covers(std::int64_t s, std::int64_t h, std::int64_t w) const {
    for (const auto& cs : chain_slices) {
      if (cs.slice != s) continue;
      const std::int64_t gw = (width + cs.patch - 1) / cs.patch;
      const std::int64_t cell = (h / cs.patch) * gw + (w / cs.patch);
      if (cs.bitmap[static_cast<std::size_t>(cell)] != 0) return true;
    }
    return false;
  }

  std::int64_t masked_voxels_per_channel() const {
    std::int64_t acc = 0;
    for (std::int64_t s = 0; s < slices; ++s) {
      for (std::int64_t h = 0; h < height; ++h) {
        for (std::int64_t w = 0; w < width; ++w) {
          if (covers(s, h, w)) ++acc;
        }
      }
    }
    return acc;
  }
};

struct MaskParams {
  double anchor_prob = 0.1;   // per-slice probability of starting a chain
  double patch_prob = 0.7;    // per-patch probability of masking within a chain slice
  std::int64_t chain_length = 5;
  std::vector<std::int64_t> patch_sizes = {1, 2, 4, 8, 16, 32, 96};

  void validate() const {
    if (anchor_prob < 0.0 || anchor_prob > 1.0) {
      throw ArgumentError("MaskParams: anchor_prob must lie in [0, 1]");
    }
    if (patch_prob < 0.0 || patch_prob > 1.0) {
      throw ArgumentError("MaskParams: patch_prob must lie in [0, 1]");
    }
    if (chain_length < 1) throw ArgumentError("MaskParams: chain_length must be positive");
    if (patch_sizes.empty()) throw ArgumentError("MaskParams: patch_sizes must be non-empty");
    for (const std::int64_t p : patch_sizes) {
      if (p < 1) throw ArgumentError("MaskParams: patch sizes must be positive");
    }
  }
};

// Sample a masking plan: every slice independently becomes a chain anchor with
// probability anchor_prob; a chain covers the anchor plus the chain_length-1
// preceding slices (clipped at 0). Each chain slice draws a patch size
// uniformly from patch_sizes and masks each grid cell independently with
// probability patch_prob. Chain slices are emitted anchor-by-anchor in
// ascending slice order, so the plan is a pure function of the rng state.
inline MaskPlan build_mask_plan(std::int64_t slices, std::int64_t height, std::int64_t width,
                                const MaskParams& params, Rng& rng) {
  params.validate();
  if (slices < 1 || height < 1 || width < 1) {
    throw ArgumentError("build_mask_plan: extents must be positive");
  }
  MaskPlan plan;
  plan.slices = slices;
  plan.height = height;
  plan.width = width;
  plan.chain_length = params.chain_length;
  for (std::int64_t s = 0; s < slices; ++s) {
    if (rng.bernoulli(params.anchor_prob)) plan.anchors.push_back(s);
  }
  for (const std::int64_t anchor : plan.anchors) {
    const std::int64_t first = std::max<std::int64_t>(0, anchor - (params.chain_length - 1));
    for (std::int64_t s = first; s <= anchor; ++s) {
      ChainSlice cs;
      cs.slice = s;
      const std::size_t pick = rng.below(params.patch_sizes.size());
      cs.patch = params.patch_sizes[pick];
      const std::int64_t gh = (height + cs.patch - 1) / cs.patch;
      const std::int64_t gw = (width + cs.patch - 1) / cs.patch;
      cs.bitmap.resize(static_cast<std::size_t>(gh * gw));
      for (auto& cell : cs.bitmap) {
        cell = rng.bernoulli(params.patch_prob) ? 1 : 0;
      }
      plan.chain_slices.push_back(std::move(cs));
    }
  }
  return plan;
}

// Apply a plan to a (b, c, s, h, w) volume: masked voxels become 0.0 across
// every batch entry and channel. Pure data transform, no graph node.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& x, const MaskPlan& plan) {
  const Shape5 sh = x.shape();
  if (sh[2] != plan.slices || sh[3] != plan.height || sh[4] != plan.width) {
    throw ShapeError("apply_mask: plan extents " + std::to_string(plan.slices) + "x" +
                     std::to_string(plan.height) + "x" + std::to_string(plan.width) +
                     " do not match volume " + shape_str(sh));
  }
  NoGradGuard ng;
  Tensor<T> out = Tensor<T>::zeros(sh);
  std::copy(x.vec().begin(), x.vec().end(), out.vec().begin());
  // Precompute the per-slice mask once, then broadcast over batch/channels.
  std::vector<std::uint8_t> voxel_mask(
      static_cast<std::size_t>(plan.slices * plan.height * plan.width), 0);
  for (const auto& cs : plan.chain_slices) {
    const std::int64_t gw = (plan.width + cs.patch - 1) / cs.patch;
    for (std::int64_t h = 0; h < plan.height; ++h) {
      for (std::int64_t w = 0; w < plan.width; ++w) {
        const std::int64_t cell = (h / cs.patch) * gw + (w / cs.patch);
        if (cs.bitmap[static_cast<std::size_t>(cell)] == 0) continue;
        voxel_mask[static_cast<std::size_t>((cs.slice * plan.height + h) * plan.width + w)] = 1;
      }
    }
  }
  const std::int64_t plane = plan.slices * plan.height * plan.width;
  for (std::int64_t b = 0; b < sh[0]; ++b) {
    for (std::int64_t c = 0; c < sh[1]; ++c) {
      T* base = out.data() + (b * sh[1] + c) * plane;
      for (std::int64_t v = 0; v < plane; ++v) {
        if (voxel_mask[static_cast<std::size_t>(v)] != 0) base[v] = T(0);
      }
    }
  }
  return out;
}

// Flatten a (1, c, s, h, w) volume into s per-slice feature vectors of length
// c*h*w, channel-major row-major, as the clustering inputs.
template <typename T>
FeatureDataset slice_features(const Tensor<T>& x) {
  const Shape5 sh = x.shape();
  if (sh[0] != 1) throw ShapeError("slice_features: expected batch 1, got " + shape_str(sh));
  const std::int64_t c_n = sh[1], s_n = sh[2], h_n = sh[3], w_n = sh[4];
  FeatureDataset out(static_cast<std::size_t>(s_n),
                     FeatureVector(static_cast<std::size_t>(c_n * h_n * w_n)));
  const T* src = x.data();
  for (std::int64_t s = 0; s < s_n; ++s) {
    FeatureVector& v = out[static_cast<std::size_t>(s)];
    std::size_t j = 0;
    for (std::int64_t c = 0; c < c_n; ++c) {
      const T* plane = src + ((c * s_n + s) * h_n) * w_n;
      for (std::int64_t i = 0; i < h_n * w_n; ++i) v[j++] = static_cast<double>(plane[i]);
    }
  }
  return out;
}

}  // namespace logonet
