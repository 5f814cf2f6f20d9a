#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kshield {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int e : s) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= static_cast<size_t>(e);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major float32 tensor. Plain value type: copyable, no graph state.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(Shape s) {
    size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<float>(n, 0.0f));
  }

  static Tensor full(Shape s, float v) {
    size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<float>(n, v));
  }

  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  float& operator[](size_t i) { return data[i]; }
  float operator[](size_t i) const { return data[i]; }

  bool all_finite() const {
    for (float v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double sum() const {
    double s = 0.0;
    for (float v : data) s += v;
    return s;
  }

  double l2_norm() const {
    double s = 0.0;
    for (float v : data) s += static_cast<double>(v) * v;
    return std::sqrt(s);
  }
};

inline double l2_distance(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("shape mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace kshield
