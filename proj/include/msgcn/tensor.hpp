#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "msgcn/error.hpp"

namespace msgcn {

// Dense row-major matrix of doubles. Vectors are V×1 or 1×N as convenient.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  Mat(int r, int c, std::vector<double> data)
      : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != static_cast<size_t>(r) * c)
      throw ShapeError("Mat: data length does not match shape");
  }

  double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const {
    return v[static_cast<size_t>(r) * cols + c];
  }

  size_t size() const { return v.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

}  // namespace msgcn
