#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "logonet/serialize.hpp"
#include "logonet/ssl_loss.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

// Volume container: magic "LGV1", one dtype tag byte (0 = f32, 1 = u8),
// four little-endian u32 extents (C, S, H, W), then the row-major payload.
// Tensors map to files with their singleton batch axis dropped.
enum class VolumeDtype : std::uint8_t { kF32 = 0, kU8 = 1 };

namespace detail_io {

template <typename T>
void check_volume_shape(const Tensor<T>& x, const char* who) {
  if (x.shape()[0] != 1) {
    throw ShapeError(std::string(who) + ": expected batch extent 1, got " + shape_str(x.shape()));
  }
}

inline Shape5 read_volume_header(ByteReader& r, VolumeDtype expected) {
  r.expect_magic("LGV1");
  const std::uint8_t tag = r.get_u8();
  if (tag != static_cast<std::uint8_t>(VolumeDtype::kF32) &&
      tag != static_cast<std::uint8_t>(VolumeDtype::kU8)) {
    throw IoError(r.origin() + ": unknown dtype tag " + std::to_string(tag));
  }
  if (tag != static_cast<std::uint8_t>(expected)) {
    throw IoError(r.origin() + ": dtype tag " + std::to_string(tag) + " does not match request");
  }
  Shape5 s{1, 0, 0, 0, 0};
  for (int i = 1; i < 5; ++i) {
    s[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(r.get_u32());
    if (s[static_cast<std::size_t>(i)] < 1) {
      throw IoError(r.origin() + ": non-positive extent in header");
    }
  }
  return s;
}

}  // namespace detail_io

inline VolumeDtype peek_volume_dtype(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic("LGV1");
  const std::uint8_t tag = r.get_u8();
  if (tag == static_cast<std::uint8_t>(VolumeDtype::kF32)) return VolumeDtype::kF32;
  if (tag == static_cast<std::uint8_t>(VolumeDtype::kU8)) return VolumeDtype::kU8;
  throw IoError(path + ": unknown dtype tag " + std::to_string(tag));
}

inline void write_volume(const std::string& path, const Tensor<float>& x) {
  detail_io::check_volume_shape(x, "write_volume");
  ByteWriter w;
  w.put_magic("LGV1");
  w.put_u8(static_cast<std::uint8_t>(VolumeDtype::kF32));
  for (int i = 1; i < 5; ++i) w.put_u32(static_cast<std::uint32_t>(x.shape()[i]));
  for (const float v : x.vec()) w.put_f32(v);
  w.save(path);
}

inline void write_volume(const std::string& path, const Tensor<std::uint8_t>& x) {
  detail_io::check_volume_shape(x, "write_volume");
  ByteWriter w;
  w.put_magic("LGV1");
  w.put_u8(static_cast<std::uint8_t>(VolumeDtype::kU8));
  for (int i = 1; i < 5; ++i) w.put_u32(static_cast<std::uint32_t>(x.shape()[i]));
  for (const std::uint8_t v : x.vec()) w.put_u8(v);
  w.save(path);
}

inline Tensor<float> read_volume_f32(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  const Shape5 s = detail_io::read_volume_header(r, VolumeDtype::kF32);
  if (r.remaining() != static_cast<std::size_t>(numel(s)) * 4) {
    throw IoError(path + ": payload length does not match header extents");
  }
  NoGradGuard ng;
  Tensor<float> out = Tensor<float>::zeros(s);
  for (auto& v : out.vec()) v = r.get_f32();
  return out;
}

inline Tensor<std::uint8_t> read_volume_u8(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  const Shape5 s = detail_io::read_volume_header(r, VolumeDtype::kU8);
  if (r.remaining() != static_cast<std::size_t>(numel(s))) {
    throw IoError(path + ": payload length does not match header extents");
  }
  NoGradGuard ng;
  Tensor<std::uint8_t> out = Tensor<std::uint8_t>::zeros(s);
  for (auto& v : out.vec()) v = r.get_u8();
  return out;
}

// Pseudo-label store: magic "LGPL", u32 clusterer count N, N u32 cluster
// sizes, u32 volume count, then per volume a u32 slice count followed by
// slice-major rows of N little-endian u32 labels.
inline void write_pseudo_labels(const std::string& path, const PseudoLabelSet& pl) {
  ByteWriter w;
  w.put_magic("LGPL");
  w.put_u32(static_cast<std::uint32_t>(pl.cluster_sizes.size()));
  for (const std::int64_t k : pl.cluster_sizes) w.put_u32(static_cast<std::uint32_t>(k));
  w.put_u32(static_cast<std::uint32_t>(pl.labels.size()));
  for (const auto& vol : pl.labels) {
    w.put_u32(static_cast<std::uint32_t>(vol.size()));
    for (const auto& slice : vol) {
      if (slice.size() != pl.cluster_sizes.size()) {
        throw ArgumentError("write_pseudo_labels: slice row width != clusterer count");
      }
      for (const std::uint32_t lab : slice) w.put_u32(lab);
    }
  }
  w.save(path);
}

inline PseudoLabelSet read_pseudo_labels(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic("LGPL");
  PseudoLabelSet pl;
  const std::uint32_t n = r.get_u32();
  if (n == 0) throw IoError(path + ": zero clusterers");
  for (std::uint32_t i = 0; i < n; ++i) {
    pl.cluster_sizes.push_back(static_cast<std::int64_t>(r.get_u32()));
  }
  const std::uint32_t n_vol = r.get_u32();
  for (std::uint32_t v = 0; v < n_vol; ++v) {
    const std::uint32_t n_slices = r.get_u32();
    std::vector<std::vector<std::uint32_t>> vol;
    vol.reserve(n_slices);
    for (std::uint32_t s = 0; s < n_slices; ++s) {
      std::vector<std::uint32_t> row(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        row[i] = r.get_u32();
        if (row[i] >= static_cast<std::uint32_t>(pl.cluster_sizes[i])) {
          throw IoError(path + ": label exceeds its clusterer's size");
        }
      }
      vol.push_back(std::move(row));
    }
    pl.labels.push_back(std::move(vol));
  }
  r.expect_exhausted();
  return pl;
}

}  // namespace logonet
