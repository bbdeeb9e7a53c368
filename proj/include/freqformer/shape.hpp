#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>

#include "freqformer/error.hpp"

namespace fqf {

/// Extents of a tensor of rank 0..4. Rank-4 tensors follow (batch, channels, height, width).
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;

  Shape(std::initializer_list<std::int64_t> dims) { assign(std::span(dims.begin(), dims.size())); }

  explicit Shape(std::span<const std::int64_t> dims) { assign(dims); }

  int rank() const noexcept { return rank_; }

  /// Negative indices count from the back.
  std::int64_t operator[](int axis) const { return dims_[static_cast<std::size_t>(normalize(axis))]; }

  std::int64_t numel() const noexcept {
    std::int64_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= dims_[static_cast<std::size_t>(i)];
    return n;
  }

  int normalize(int axis) const {
    const int a = axis < 0 ? axis + rank_ : axis;
    if (a < 0 || a >= rank_) {
      throw ShapeError("shape", "axis " + std::to_string(axis) + " out of range for " + str());
    }
    return a;
  }

  /// Copy with one extent replaced.
  Shape with(int axis, std::int64_t extent) const {
    Shape s = *this;
    s.dims_[static_cast<std::size_t>(normalize(axis))] = extent;
    return s;
  }

  /// Extents left-padded with ones to rank 4.
  std::array<std::int64_t, kMaxRank> padded4() const noexcept {
    std::array<std::int64_t, kMaxRank> out{1, 1, 1, 1};
    const int off = kMaxRank - rank_;
    for (int i = 0; i < rank_; ++i) out[static_cast<std::size_t>(off + i)] = dims_[static_cast<std::size_t>(i)];
    return out;
  }

  std::span<const std::int64_t> dims() const noexcept { return {dims_.data(), static_cast<std::size_t>(rank_)}; }

  bool operator==(const Shape& o) const noexcept {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i) {
      if (dims_[static_cast<std::size_t>(i)] != o.dims_[static_cast<std::size_t>(i)]) return false;
    }
    return true;
  }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[static_cast<std::size_t>(i)]);
    }
    return s + "]";
  }

 private:
  void assign(std::span<const std::int64_t> dims) {
    if (dims.size() > kMaxRank) throw ShapeError("shape", "rank " + std::to_string(dims.size()) + " exceeds 4");
    rank_ = static_cast<int>(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (dims[i] < 0) throw ShapeError("shape", "negative extent at axis " + std::to_string(i));
      dims_[i] = dims[i];
    }
  }

  std::array<std::int64_t, kMaxRank> dims_{};
  int rank_ = 0;
};

}  // namespace fqf
