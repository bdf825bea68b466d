#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "darse/lowrank.hpp"
#include "darse/matrix.hpp"

namespace darse::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Matrix::uniform(rows, cols, rng, -1.0, 1.0);
}

/// Exactly rank-k matrix built from Gaussian factors.
inline Matrix random_low_rank(std::size_t rows, std::size_t cols, std::size_t k,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix a = Matrix::gaussian(rows, k, rng);
  Matrix b = Matrix::gaussian(cols, k, rng);
  return multiply_transposed(a, b);
}

inline double relative_error(double actual, double expected) {
  const double scale = std::max(std::abs(expected), 1e-300);
  return std::abs(actual - expected) / scale;
}

/// |err − tail| ≤ 1e-8 · max(tail, 1e-6 · ‖m‖_F). The floor keeps the relative
/// check meaningful at full rank, where the tail is exactly zero and the
/// reconstruction error is pure rounding.
inline bool matches_tail(double err, double tail, double norm) {
  return std::abs(err - tail) <= 1e-8 * std::max(tail, 1e-6 * norm);
}

/// max |QᵀQ − I|.
inline double orthogonality_defect(const Matrix& q) {
  const Matrix g = transposed_multiply(q, q);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

/// Central finite-difference gradient of f at x.
template <typename F>
std::vector<double> finite_difference_gradient(F&& f, std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂).
inline double vector_relative_error(const std::vector<double>& a,
                                    const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
  return std::sqrt(diff) / scale;
}

}  // namespace darse::testing
