#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace logonet {

// Bad tensor extents or an operation applied to incompatible shapes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// A structurally valid value that violates an operation's contract.
struct ArgumentError : std::invalid_argument {
  explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Cube partitioning violations (non-cube input, indivisible extents).
struct PartitionError : std::runtime_error {
  explicit PartitionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent run configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format violations (bad magic, truncated payload, dtype mismatch).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape5 = std::array<std::int64_t, 5>;

inline std::int64_t numel(const Shape5& s) {
  return s[0] * s[1] * s[2] * s[3] * s[4];
}

// Row-major strides, innermost axis last.
inline Shape5 strides_of(const Shape5& s) {
  Shape5 st{};
  st[4] = 1;
  for (int i = 3; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

inline std::string shape_str(const Shape5& s) {
  std::ostringstream os;
  os << "(" << s[0] << "," << s[1] << "," << s[2] << "," << s[3] << "," << s[4] << ")";
  return os.str();
}

inline void check_positive_shape(const Shape5& s, const char* who) {
  for (int i = 0; i < 5; ++i) {
    if (s[i] <= 0) {
      throw ShapeError(std::string(who) + ": non-positive extent in shape " + shape_str(s));
    }
  }
}

}  // namespace logonet
