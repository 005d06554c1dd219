#ifndef EDGEREG_TENSOR_HPP
#define EDGEREG_TENSOR_HPP

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "edgereg/errors.hpp"

namespace edgereg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape &s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape &s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major 64-bit float tensor. Rank 0 is a scalar, rank 1 a vector,
// rank 2 a matrix; higher ranks are storage-only.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until allocated; same length as data

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_size(shape) != static_cast<std::int64_t>(data.size()))
      throw ValidationError("tensor shape " + shape_str(shape) +
                            " does not match buffer of " + std::to_string(data.size()));
  }

  static Tensor zeros(Shape s) {
    Tensor t;
    t.data.assign(static_cast<std::size_t>(shape_size(s)), 0.0);
    t.shape = std::move(s);
    return t;
  }

  static Tensor full(Shape s, double v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return size() == 1 && rank() <= 1; }

  // 2-D view used by elementwise broadcasting: scalar -> 1x1, vector -> 1xN.
  std::int64_t vrows() const {
    if (rank() <= 1) return 1;
    if (rank() == 2) return shape[0];
    throw ValidationError("rank>2 tensor has no 2-D view");
  }
  std::int64_t vcols() const {
    if (rank() == 0) return 1;
    if (rank() == 1) return shape[0];
    if (rank() == 2) return shape[1];
    throw ValidationError("rank>2 tensor has no 2-D view");
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }

  double &at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * vcols() + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * vcols() + c)]; }
};

}  // namespace edgereg

#endif  // EDGEREG_TENSOR_HPP
