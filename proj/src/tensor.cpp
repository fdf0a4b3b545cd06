#include "ctxrnn/tensor.hpp"

#include <sstream>

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

Shape::Shape(std::initializer_list<std::size_t> dims) {
  if (dims.size() > kMaxRank) throw ShapeError("rank exceeds 4");
  for (std::size_t d : dims) dims_[rank_++] = d;
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
  os << ')';
  return os.str();
}

bool operator==(const Shape& a, const Shape& b) {
  if (a.rank_ != b.rank_) return false;
  for (std::size_t i = 0; i < a.rank_; ++i)
    if (a.dims_[i] != b.dims_[i]) return false;
  return true;
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(s), values(std::move(v)) {
  if (shape.numel() != values.size())
    throw ShapeError("tensor shape " + shape.str() + " does not match " +
                     std::to_string(values.size()) + " values");
}

Tensor::Tensor(Shape s, double fill) : shape(s), values(s.numel(), fill) {}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape::vector(n), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape::matrix(rows, cols), std::move(v));
}

}  // namespace ctxrnn
