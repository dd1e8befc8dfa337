#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "focalseg/error.hpp"

namespace focalseg {

/// Dense row-major 2-D array.
template <typename T>
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid2D(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw Error(ErrorCode::ShapeMismatch, "grid data does not match its dimensions");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Grid2D<U>& other) const noexcept {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Ground-truth indicator grid; every element is exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(Grid2D<std::uint8_t> grid);
  BinaryMask(std::size_t rows, std::size_t cols) : grid_(rows, cols, 0) {}

  /// Nonzero becomes foreground.
  template <typename T>
  static BinaryMask threshold(const Grid2D<T>& values, T cutoff = T{}) {
    Grid2D<std::uint8_t> g(values.rows(), values.cols());
    for (std::size_t i = 0; i < values.size(); ++i) g[i] = values[i] > cutoff ? 1 : 0;
    return BinaryMask(std::move(g));
  }

  std::size_t rows() const noexcept { return grid_.rows(); }
  std::size_t cols() const noexcept { return grid_.cols(); }
  std::size_t size() const noexcept { return grid_.size(); }

  std::uint8_t operator()(std::size_t r, std::size_t c) const { return grid_(r, c); }
  std::uint8_t operator[](std::size_t i) const { return grid_[i]; }
  void set(std::size_t r, std::size_t c, bool on) { grid_(r, c) = on ? 1 : 0; }

  const Grid2D<std::uint8_t>& grid() const noexcept { return grid_; }
  std::size_t count() const noexcept;
  BinaryMask inverted() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Grid2D<std::uint8_t> grid_;
};

}  // namespace focalseg
