#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace ctxrnn {

/// Dimension list of rank 0..4. Rank 0 is a scalar holding one value.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);

  static Shape scalar() { return {}; }
  static Shape vector(std::size_t n) { return {n}; }
  static Shape matrix(std::size_t rows, std::size_t cols) { return {rows, cols}; }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  std::size_t numel() const;

  /// Rows/cols of a rank-2 shape; a rank-1 shape is treated as a column.
  std::size_t rows() const { return rank_ == 0 ? 1 : dims_[0]; }
  std::size_t cols() const { return rank_ == 2 ? dims_[1] : 1; }

  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b);

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

/// Dense row-major tensor of 64-bit floats. Plain value type; tape-tracked
/// tensors are `Var` handles (see tape.hpp).
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);
  explicit Tensor(Shape s, double fill = 0.0);

  static Tensor scalar(double v) { return Tensor(Shape::scalar(), std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double& at(std::size_t r, std::size_t c) { return values[r * shape.cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * shape.cols() + c]; }
};

}  // namespace ctxrnn
