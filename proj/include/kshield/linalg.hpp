#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace kshield {

struct SymEigen {
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // n x n row-major, row k is the k-th eigenvector
};

// Cyclic Jacobi eigendecomposition for symmetric matrices, double precision.
// Deterministic: fixed sweep order, fixed rotation formulas, stable ordering.
// Fine at descriptor dimensionalities (a few hundred to low thousands).
inline SymEigen jacobi_eigen_symmetric(std::vector<double> a, int n, int max_sweeps = 64) {
  if (n <= 0 || static_cast<int>(a.size()) != n * n) {
    throw std::invalid_argument("jacobi: matrix size mismatch");
  }
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

  auto off_norm = [&]() {
    double s = 0.0;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) s += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
    }
    return s;
  };
  double base = 0.0;
  for (double x : a) base += x * x;
  const double tol = 1e-26 * std::max(base, 1e-300);

  for (int sweep = 0; sweep < max_sweeps && off_norm() > tol; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<size_t>(p) * n + q];
        if (apq == 0.0) continue;
        const double app = a[static_cast<size_t>(p) * n + p];
        const double aqq = a[static_cast<size_t>(q) * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[static_cast<size_t>(k) * n + p];
          const double akq = a[static_cast<size_t>(k) * n + q];
          a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[static_cast<size_t>(p) * n + k];
          const double aqk = a[static_cast<size_t>(q) * n + k];
          a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[static_cast<size_t>(k) * n + p];
          const double vkq = v[static_cast<size_t>(k) * n + q];
          v[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
          v[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return a[static_cast<size_t>(x) * n + x] > a[static_cast<size_t>(y) * n + y];
  });

  SymEigen out;
  out.values.resize(static_cast<size_t>(n));
  out.vectors.resize(static_cast<size_t>(n) * n);
  for (int k = 0; k < n; ++k) {
    const int src = order[static_cast<size_t>(k)];
    out.values[static_cast<size_t>(k)] = a[static_cast<size_t>(src) * n + src];
    for (int i = 0; i < n; ++i) {
      out.vectors[static_cast<size_t>(k) * n + i] = v[static_cast<size_t>(i) * n + src];
    }
  }
  return out;
}

}  // namespace kshield
