#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "spatiodec/error.hpp"

namespace spatiodec {

enum class Padding { valid, same_zero };
enum class Mode { train, infer };

/// Spatial extents (height, width, depth).
struct Extents3 {
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t d = 1;

  std::size_t volume() const { return h * w * d; }
  std::size_t operator[](std::size_t i) const { return i == 0 ? h : i == 1 ? w : d; }
  friend bool operator==(const Extents3&, const Extents3&) = default;
  std::string str() const {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(d);
  }
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Output extent of a strided window along one axis.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   Padding padding) {
  if (stride == 0) throw ShapeError("stride must be >= 1");
  if (padding == Padding::same_zero) return ceil_div(in, stride);
  if (in < k) {
    throw ShapeError("input extent " + std::to_string(in) + " smaller than kernel " +
                     std::to_string(k));
  }
  return (in - k) / stride + 1;
}

/// Low-side zero padding for same_zero; any odd remainder goes on the high side.
inline std::size_t conv_pad_lo(std::size_t in, std::size_t k, std::size_t stride,
                               Padding padding) {
  if (padding == Padding::valid) return 0;
  const std::size_t out = ceil_div(in, stride);
  const std::size_t need = (out - 1) * stride + k;
  const std::size_t total = need > in ? need - in : 0;
  return total / 2;
}

inline Extents3 conv_out_extents(const Extents3& in, const Extents3& k, std::size_t stride,
                                 Padding padding) {
  return {conv_out_extent(in.h, k.h, stride, padding),
          conv_out_extent(in.w, k.w, stride, padding),
          conv_out_extent(in.d, k.d, stride, padding)};
}

}  // namespace spatiodec
