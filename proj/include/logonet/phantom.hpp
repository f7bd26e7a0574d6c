#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "logonet/rng.hpp"
#include "logonet/tensor.hpp"
#include "logonet/volume_io.hpp"

namespace logonet {

enum class PhantomShape {
  kEllipsoid,
  kTube,          // elliptic cylinder along the slice axis with flat caps
  kBlobCorners,   // ellipsoid unioned with a concentric box; corners protrude
};

inline std::string phantom_shape_name(PhantomShape s) {
  switch (s) {
    case PhantomShape::kEllipsoid: return "ellipsoid";
    case PhantomShape::kTube: return "tube";
    case PhantomShape::kBlobCorners: return "blob-with-corners";
  }
  return "?";
}

// One synthetic object. Coordinates are (slice, height, width) voxel units;
// intensity is on the raw scale (air -1000 .. dense tissue +1000) before the
// [0,1] window is applied.
struct PhantomObject {
  PhantomShape shape = PhantomShape::kEllipsoid;
  std::array<double, 3> center = {0.0, 0.0, 0.0};
  std::array<double, 3> radii = {1.0, 1.0, 1.0};
  std::int64_t class_id = 1;
  double intensity = 0.0;

  bool contains(double s, double h, double w) const {
    const double ds = (s - center[0]) / radii[0];
    const double dh = (h - center[1]) / radii[1];
    const double dw = (w - center[2]) / radii[2];
    switch (shape) {
      case PhantomShape::kEllipsoid:
        return ds * ds + dh * dh + dw * dw <= 1.0;
      case PhantomShape::kTube:
        return std::abs(ds) <= 1.0 && dh * dh + dw * dw <= 1.0;
      case PhantomShape::kBlobCorners: {
        const bool ell = ds * ds + dh * dh + dw * dw <= 1.0;
        const bool box = std::abs(ds) <= 0.75 && std::abs(dh) <= 0.75 && std::abs(dw) <= 0.75;
        return ell || box;
      }
    }
    return false;
  }
};

struct PhantomSpec {
  std::int64_t slices = 32;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::int64_t num_classes = 3;
  double noise_sigma = 20.0;  // raw intensity units
  std::vector<PhantomObject> objects;

  void validate() const {
    if (slices < 1 || height < 1 || width < 1) {
      throw ArgumentError("PhantomSpec: extents must be positive");
    }
    if (num_classes < 2) throw ArgumentError("PhantomSpec: need at least one foreground class");
    if (noise_sigma < 0.0) throw ArgumentError("PhantomSpec: noise_sigma must be non-negative");
    for (std::size_t i = 0; i < objects.size(); ++i) {
      const PhantomObject& o = objects[i];
      if (o.class_id < 1 || o.class_id >= num_classes) {
        throw ArgumentError("PhantomSpec: object " + std::to_string(i) + " class id " +
                            std::to_string(o.class_id) + " outside [1, " +
                            std::to_string(num_classes) + ")");
      }
      if (o.radii[0] <= 0.0 || o.radii[1] <= 0.0 || o.radii[2] <= 0.0) {
        throw ArgumentError("PhantomSpec: object " + std::to_string(i) +
                            " radii must be positive");
      }
    }
  }
};

template <typename T = float>
struct PhantomVolume {
  Tensor<T> image;                 // (1,1,S,H,W) in [0,1]
  Tensor<std::uint8_t> labels;     // (1,1,S,H,W) class ids, background 0
};

// Rasterizes the object list onto an air background (-1000), in declaration
// order (later objects overwrite), adds voxel Gaussian noise, then applies
// the clipped intensity window (v + 1000) / 2000 -> [0,1]. Every declared
// object must keep at least one voxel of its class in the final label map.
template <typename T = float>
PhantomVolume<T> generate_phantom(const PhantomSpec& spec, Rng rng) {
  spec.validate();
  NoGradGuard guard;
  const Shape5 shape{1, 1, spec.slices, spec.height, spec.width};
  Tensor<double> raw = Tensor<double>::zeros(shape);
  Tensor<std::uint8_t> labels = Tensor<std::uint8_t>::zeros(shape);
  double* rv = raw.data();
  std::uint8_t* lv = labels.data();
  const std::int64_t n = raw.numel();
  std::fill(rv, rv + n, -1000.0);

  std::int64_t idx = 0;
  for (std::int64_t s = 0; s < spec.slices; ++s) {
    for (std::int64_t h = 0; h < spec.height; ++h) {
      for (std::int64_t w = 0; w < spec.width; ++w, ++idx) {
        const double cs = static_cast<double>(s);
        const double ch = static_cast<double>(h);
        const double cw = static_cast<double>(w);
        for (const PhantomObject& o : spec.objects) {
          if (o.contains(cs, ch, cw)) {
            rv[idx] = o.intensity;
            lv[idx] = static_cast<std::uint8_t>(o.class_id);
          }
        }
      }
    }
  }

  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const PhantomObject& o = spec.objects[i];
    bool seen = false;
    std::int64_t j = 0;
    for (std::int64_t s = 0; s < spec.slices && !seen; ++s)
      for (std::int64_t h = 0; h < spec.height && !seen; ++h)
        for (std::int64_t w = 0; w < spec.width && !seen; ++w) {
          j = (s * spec.height + h) * spec.width + w;
          seen = lv[j] == o.class_id &&
                 o.contains(static_cast<double>(s), static_cast<double>(h),
                            static_cast<double>(w));
        }
    if (!seen) {
      throw ArgumentError("PhantomSpec: object " + std::to_string(i) + " (" +
                          phantom_shape_name(o.shape) + ", class " +
                          std::to_string(o.class_id) +
                          ") produced no voxel of its class");
    }
  }

  PhantomVolume<T> out;
  out.image = Tensor<T>::zeros(shape);
  T* iv = out.image.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const double noisy = rv[i] + spec.noise_sigma * rng.normal();
    const double scaled = std::clamp((noisy + 1000.0) / 2000.0, 0.0, 1.0);
    iv[i] = static_cast<T>(scaled);
  }
  out.labels = std::move(labels);
  return out;
}

namespace detail_phantom {

// Non-overlapping placement cells: foreground objects land one per cell of a
// 1x1x2 / 1x2x2 / 2x2x2 split, so no object can occlude another.
inline std::array<std::int64_t, 3> cell_grid(std::int64_t n_objects) {
  if (n_objects <= 1) return {1, 1, 1};
  if (n_objects <= 2) return {1, 1, 2};
  if (n_objects <= 4) return {1, 2, 2};
  return {2, 2, 2};
}

}  // namespace detail_phantom

// One object per foreground class (class c gets shape c-1 mod 3), each in its
// own half/quadrant/octant so objects never overlap. Intensities sit in
// disjoint bands per class so classes stay separable under noise.
inline PhantomSpec random_phantom_spec(std::int64_t slices, std::int64_t height,
                                       std::int64_t width, std::int64_t num_classes, Rng rng) {
  if (num_classes < 2 || num_classes > 9) {
    throw ArgumentError("random_phantom_spec: num_classes must lie in [2, 9]");
  }
  if (slices < 8 || height < 8 || width < 8) {
    throw ArgumentError("random_phantom_spec: extents must be at least 8");
  }
  PhantomSpec spec;
  spec.slices = slices;
  spec.height = height;
  spec.width = width;
  spec.num_classes = num_classes;
  spec.noise_sigma = 20.0;

  const std::int64_t n_fg = num_classes - 1;
  const auto grid = detail_phantom::cell_grid(n_fg);
  const std::array<double, 3> extents = {static_cast<double>(slices),
                                         static_cast<double>(height),
                                         static_cast<double>(width)};
  std::int64_t cell = 0;
  for (std::int64_t c = 1; c < num_classes; ++c, ++cell) {
    PhantomObject o;
    switch ((c - 1) % 3) {
      case 0: o.shape = PhantomShape::kEllipsoid; break;
      case 1: o.shape = PhantomShape::kTube; break;
      default: o.shape = PhantomShape::kBlobCorners; break;
    }
    const std::array<std::int64_t, 3> at = {cell / (grid[1] * grid[2]),
                                            (cell / grid[2]) % grid[1], cell % grid[2]};
    for (int a = 0; a < 3; ++a) {
      const double cell_extent = extents[a] / static_cast<double>(grid[a]);
      const double mid = (static_cast<double>(at[a]) + 0.5) * cell_extent;
      const double jitter = (rng.uniform(0.0, 1.0) - 0.5) * cell_extent / 4.0;
      o.center[a] = mid + jitter;
      // Center jitter (cell/8) plus radius stays inside the cell half-extent.
      const double r_lo = 0.22 * cell_extent;
      const double r_hi = 0.36 * cell_extent;
      o.radii[a] = r_lo + rng.uniform(0.0, 1.0) * (r_hi - r_lo);
    }
    o.class_id = c;
    // Bands centered at -100, +300, +700, ... with +-40 jitter; background
    // air sits at -1000, so bands stay separated by >= 300 raw units.
    o.intensity = -500.0 + 400.0 * static_cast<double>(c) + (rng.uniform(0.0, 1.0) - 0.5) * 80.0;
    spec.objects.push_back(o);
  }
  return spec;
}

inline std::string phantom_image_name(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "vol_%04lld_img.lgv", static_cast<long long>(index));
  return buf;
}

inline std::string phantom_label_name(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "vol_%04lld_lbl.lgv", static_cast<long long>(index));
  return buf;
}

struct PhantomFilePair {
  std::string image_path;
  std::string label_path;
};

// Writes `count` image/label pairs under out_dir. Volume i draws from the
// data stream split by i+1, so corpora are reproducible per (seed, i) and
// extending a corpus never changes earlier files.
inline std::vector<PhantomFilePair> gen_phantom_corpus(
    const std::string& out_dir, std::int64_t count, std::int64_t slices, std::int64_t height,
    std::int64_t width, std::int64_t num_classes, std::uint64_t seed) {
  if (count < 0) throw ArgumentError("gen_phantom_corpus: count must be non-negative");
  std::vector<PhantomFilePair> out;
  if (count == 0) return out;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("gen_phantom_corpus: cannot create " + out_dir + ": " + ec.message());
  const Rng root(seed);
  const Rng data = root.split(rng_stream::kData);
  for (std::int64_t i = 0; i < count; ++i) {
    const Rng vrng = data.split(static_cast<std::uint64_t>(i) + 1);
    const PhantomSpec spec =
        random_phantom_spec(slices, height, width, num_classes, vrng.split(1));
    const PhantomVolume<float> vol = generate_phantom<float>(spec, vrng.split(2));
    PhantomFilePair pair;
    pair.image_path = (std::filesystem::path(out_dir) / phantom_image_name(i)).string();
    pair.label_path = (std::filesystem::path(out_dir) / phantom_label_name(i)).string();
    write_volume(pair.image_path, vol.image);
    write_volume(pair.label_path, vol.labels);
    out.push_back(std::move(pair));
  }
  return out;
}

// Loads every vol_NNNN_img.lgv / vol_NNNN_lbl.lgv pair under dir, in index
// order, stopping at the first missing index.
template <typename T = float>
std::vector<PhantomVolume<T>> load_phantom_corpus(const std::string& dir) {
  std::vector<PhantomVolume<T>> out;
  for (std::int64_t i = 0;; ++i) {
    const std::filesystem::path img = std::filesystem::path(dir) / phantom_image_name(i);
    const std::filesystem::path lbl = std::filesystem::path(dir) / phantom_label_name(i);
    if (!std::filesystem::exists(img)) break;
    if (!std::filesystem::exists(lbl)) {
      throw IoError("load_phantom_corpus: " + img.string() + " has no label file");
    }
    PhantomVolume<T> v;
    if constexpr (std::is_same_v<T, float>) {
      v.image = read_volume_f32(img.string());
    } else {
      Tensor<float> f = read_volume_f32(img.string());
      NoGradGuard guard;
      v.image = Tensor<T>::zeros(f.shape());
      std::copy(f.vec().begin(), f.vec().end(), v.image.vec().begin());
    }
    v.labels = read_volume_u8(lbl.string());
    out.push_back(std::move(v));
  }
  if (out.empty()) throw IoError("load_phantom_corpus: no vol_0000_img.lgv under " + dir);
  return out;
}

}  // namespace logonet
