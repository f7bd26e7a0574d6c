#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "logonet/common.hpp"

namespace logonet::cost {

// One accounting row per layer invocation, in forward order. MACs cover
// convolutions only; normalization, activations, upsampling and bias adds
// land in the elementwise column, so the headline MAC total is the
// multiply-accumulate count of the convolution stack.
struct Row {
  std::string name;
  std::string kind;
  Shape5 out_shape{};
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;
};

struct Recorder {
  std::vector<Row> rows;
  // Dry-run forwards skip all arithmetic and emit zero-filled outputs;
  // shapes and counts are exact because they come from the same code path.
  bool dry_run = false;
};

inline Recorder*& current() {
  thread_local Recorder* r = nullptr;
  return r;
}

inline bool dry_run() { return current() != nullptr && current()->dry_run; }

inline std::vector<std::string>& scope_stack() {
  thread_local std::vector<std::string> stack;
  return stack;
}

inline std::string scope_name() {
  const auto& stack = scope_stack();
  std::string joined;
  for (const auto& part : stack) {
    if (!joined.empty()) joined += '.';
    joined += part;
  }
  return joined;
}

// RAII layer-name segment for report rows.
struct Scope {
  explicit Scope(std::string part) { scope_stack().push_back(std::move(part)); }
  ~Scope() { scope_stack().pop_back(); }
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;
};

inline void record(const char* kind, const Shape5& out_shape, std::uint64_t params,
                   std::uint64_t macs, std::uint64_t elementwise) {
  Recorder* r = current();
  if (!r) return;
  Row row;
  row.name = scope_name();
  if (row.name.empty()) row.name = kind;
  row.kind = kind;
  row.out_shape = out_shape;
  row.params = params;
  row.macs = macs;
  row.elementwise = elementwise;
  r->rows.push_back(std::move(row));
}

}  // namespace logonet::cost
