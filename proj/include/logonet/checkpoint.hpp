#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "logonet/batchnorm.hpp"
#include "logonet/serialize.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

// Checkpoint container: magic "LGCK", u32 entry count, a manifest of
// (name, 5 little-endian u32 extents) records, then the f32 payloads
// concatenated in manifest order. Entry order is preserved exactly, so
// save -> load -> save is byte-identical.
struct CheckpointEntry {
  std::string name;
  Shape5 shape{1, 1, 1, 1, 1};
  std::vector<float> data;
};

class Checkpoint {
 public:
  void add(const std::string& name, const Shape5& shape, std::vector<float> data) {
    if (numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ArgumentError("Checkpoint::add: " + name + " payload does not match its shape");
    }
    if (find(name) != nullptr) throw ArgumentError("Checkpoint::add: duplicate entry " + name);
    entries_.push_back({name, shape, std::move(data)});
  }

  // Shapeless vectors (optimizer moments, counters) live as (1,1,1,1,n).
  void add_flat(const std::string& name, std::vector<float> data) {
    const Shape5 s{1, 1, 1, 1, static_cast<std::int64_t>(data.size())};
    add(name, s, std::move(data));
  }

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  void save(const std::string& path) const {
    ByteWriter w;
    w.put_magic("LGCK");
    w.put_u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      w.put_string(e.name);
      for (const std::int64_t d : e.shape) w.put_u32(static_cast<std::uint32_t>(d));
    }
    for (const auto& e : entries_) {
      for (const float v : e.data) w.put_f32(v);
    }
    w.save(path);
  }

  static Checkpoint load(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("LGCK");
    const std::uint32_t n = r.get_u32();
    Checkpoint ck;
    ck.entries_.resize(n);
    for (auto& e : ck.entries_) {
      e.name = r.get_string();
      for (auto& d : e.shape) {
        d = static_cast<std::int64_t>(r.get_u32());
        if (d < 1) throw IoError(path + ": non-positive extent for " + e.name);
      }
    }
    for (auto& e : ck.entries_) {
      e.data.resize(static_cast<std::size_t>(numel(e.shape)));
      if (r.remaining() < e.data.size() * 4) {
        throw IoError(path + ": payload truncated at " + e.name);
      }
      for (auto& v : e.data) v = r.get_f32();
    }
    r.expect_exhausted();
    return ck;
  }

 private:
  std::vector<CheckpointEntry> entries_;
};

// Snapshot helpers: parameters and norm buffers become entries named by
// their collect() paths, values cast to f32.
template <typename T>
void snapshot_params(Checkpoint& ck, const ParamList<T>& params) {
  for (const auto& p : params) {
    std::vector<float> data(p.tensor.vec().begin(), p.tensor.vec().end());
    ck.add(p.name, p.tensor.shape(), std::move(data));
  }
}

template <typename T>
void snapshot_buffers(Checkpoint& ck, const BufferList<T>& buffers) {
  for (const auto& b : buffers) {
    std::vector<float> data(b.data->begin(), b.data->end());
    ck.add_flat(b.name, std::move(data));
  }
}

// Restore every parameter whose name the checkpoint knows. Names matching
// none of the entries are collected; if any of them is not covered by an
// `optional_prefix`, the load fails listing the missing parameter paths.
// Checkpoint entries the model does not ask for are ignored.
template <typename T>
void restore_params(const Checkpoint& ck, ParamList<T>& params,
                    const std::vector<std::string>& optional_prefixes = {}) {
  std::vector<std::string> missing;
  for (auto& p : params) {
    const CheckpointEntry* e = ck.find(p.name);
    if (e == nullptr) {
      const bool optional =
          std::any_of(optional_prefixes.begin(), optional_prefixes.end(),
                      [&](const std::string& pre) { return p.name.rfind(pre, 0) == 0; });
      if (!optional) missing.push_back(p.name);
      continue;
    }
    if (e->shape != p.tensor.shape()) {
      throw ShapeError("checkpoint entry " + p.name + " has shape " + shape_str(e->shape) +
                       ", model expects " + shape_str(p.tensor.shape()));
    }
    std::copy(e->data.begin(), e->data.end(), p.tensor.vec().begin());
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint is missing " + std::to_string(missing.size()) + " parameters:";
    for (const auto& name : missing) msg += " " + name;
    throw ConfigError(msg);
  }
}

template <typename T>
void restore_buffers(const Checkpoint& ck, BufferList<T>& buffers,
                     const std::vector<std::string>& optional_prefixes = {}) {
  std::vector<std::string> missing;
  for (auto& b : buffers) {
    const CheckpointEntry* e = ck.find(b.name);
    if (e == nullptr) {
      const bool optional =
          std::any_of(optional_prefixes.begin(), optional_prefixes.end(),
                      [&](const std::string& pre) { return b.name.rfind(pre, 0) == 0; });
      if (!optional) missing.push_back(b.name);
      continue;
    }
    if (e->data.size() != b.data->size()) {
      throw ShapeError("checkpoint buffer " + b.name + " has " + std::to_string(e->data.size()) +
                       " values, model expects " + std::to_string(b.data->size()));
    }
    std::copy(e->data.begin(), e->data.end(), b.data->begin());
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint is missing " + std::to_string(missing.size()) + " buffers:";
    for (const auto& name : missing) msg += " " + name;
    throw ConfigError(msg);
  }
}

}  // namespace logonet
