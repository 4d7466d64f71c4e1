#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace tonguesync {

/// Dense row-major 2-D array.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// One ultrasound frame: scan lines (rows) x echo returns (cols).
using Frame = Matrix<std::uint8_t>;

}  // namespace tonguesync
