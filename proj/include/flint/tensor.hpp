#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flint/error.hpp"

namespace flint {

// Spatial extent of a 2D or 3D grid. 2D grids carry depth 1 so every kernel
// can run one 3D code path.
struct Grid {
  int dims = 2;
  int depth = 1;
  int height = 0;
  int width = 0;

  static Grid make2d(int h, int w) { return Grid{2, 1, h, w}; }
  static Grid make3d(int d, int h, int w) { return Grid{3, d, h, w}; }

  // Builds a grid from spatial sizes ordered slowest-varying first.
  static Grid from_shape(std::span<const int> shape);

  std::size_t cells() const {
    return static_cast<std::size_t>(depth) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::vector<int> shape() const;
  std::string to_string() const;

  bool operator==(const Grid&) const = default;
};

// Dense channels-first array over a grid: (C, H, W) or (C, D, H, W).
template <typename T>
class Field {
 public:
  Field() = default;
  Field(int channels, Grid grid, T fill = T(0))
      : channels_(channels), grid_(grid), data_(static_cast<std::size_t>(channels) * grid.cells(), fill) {}
  Field(int channels, Grid grid, std::vector<T> data) : channels_(channels), grid_(grid), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(channels) * grid.cells()) {
      throw ContractError("field payload size does not match " + std::to_string(channels) + "x" + grid.to_string());
    }
  }

  int channels() const { return channels_; }
  const Grid& grid() const { return grid_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  std::span<T> channel(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * grid_.cells(), grid_.cells()};
  }
  std::span<const T> channel(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * grid_.cells(), grid_.cells()};
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int c, int z, int y, int x) { return data_[index(c, z, y, x)]; }
  const T& at(int c, int z, int y, int x) const { return data_[index(c, z, y, x)]; }

  std::size_t index(int c, int z, int y, int x) const {
    return ((static_cast<std::size_t>(c) * grid_.depth + z) * grid_.height + y) * grid_.width + x;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Field<U> cast() const {
    Field<U> out(channels_, grid_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  int channels_ = 0;
  Grid grid_{};
  std::vector<T> data_;
};

using FieldF = Field<float>;
using FieldD = Field<double>;

// Throws ContractError unless both fields have the same grid.
void require_same_grid(const Grid& a, const Grid& b, const char* what);

}  // namespace flint
