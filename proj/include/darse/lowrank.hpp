#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darse/error.hpp"
#include "darse/matrix.hpp"

namespace darse {

/// Shape of one adapted weight matrix.
struct LayerSpec {
  int id = 0;
  int rows = 1;
  int cols = 1;

  /// Largest rank a factorization of this layer can have.
  int max_rank() const noexcept { return std::min(rows, cols); }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline void validate_layers(std::span<const LayerSpec> layers) {
  if (layers.empty()) throw InvalidInput("layer list is empty");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.id != static_cast<int>(i)) {
      throw InvalidInput("layer ids must be contiguous from 0; position " +
                         std::to_string(i) + " has id " + std::to_string(l.id));
    }
    if (l.rows < 1 || l.cols < 1) {
      throw InvalidInput("layer " + std::to_string(i) + " has non-positive shape");
    }
  }
}

/// Builds layer specs with ids 0..N-1 from (rows, cols) pairs.
inline std::vector<LayerSpec> make_layers(
    std::span<const std::pair<int, int>> shapes) {
  std::vector<LayerSpec> layers;
  layers.reserve(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    layers.push_back({static_cast<int>(i), shapes[i].first, shapes[i].second});
  }
  return layers;
}

/// Per-layer adapter ranks.
struct RankVector {
  std::vector<int> ranks;

  RankVector() = default;
  explicit RankVector(std::vector<int> r) : ranks(std::move(r)) {}
  RankVector(std::initializer_list<int> r) : ranks(r) {}

  std::size_t size() const noexcept { return ranks.size(); }
  int& operator[](std::size_t i) { return ranks[i]; }
  int operator[](std::size_t i) const { return ranks[i]; }
  auto begin() const noexcept { return ranks.begin(); }
  auto end() const noexcept { return ranks.end(); }

  long long total() const {
    return std::accumulate(ranks.begin(), ranks.end(), 0LL);
  }

  std::string to_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(ranks[i]);
    }
    return s + "]";
  }

  friend bool operator==(const RankVector&, const RankVector&) = default;
  friend auto operator<=>(const RankVector&, const RankVector&) = default;
};

/// Canonical preference between two rank vectors with known metrics: lower
/// metric wins; on equal metrics the smaller rank total wins, then the
/// lexicographically smaller vector. Shared by the search and the oracles so
/// that ties resolve identically everywhere.
inline bool preferred(double metric_a, const RankVector& a, double metric_b,
                      const RankVector& b) {
  if (metric_a != metric_b) return metric_a < metric_b;
  const long long ta = a.total();
  const long long tb = b.total();
  if (ta != tb) return ta < tb;
  return a.ranks < b.ranks;
}

/// Σ r_i (m_i + n_i): trainable adapter parameters for rank vector `r`.
inline long long param_count(const RankVector& r, std::span<const LayerSpec> layers) {
  if (r.size() != layers.size()) {
    throw InvalidInput("param_count: rank vector has " + std::to_string(r.size()) +
                       " entries for " + std::to_string(layers.size()) + " layers");
  }
  long long total = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    total += static_cast<long long>(r[i]) * (layers[i].rows + layers[i].cols);
  }
  return total;
}

inline void validate_ranks(const RankVector& r, std::span<const LayerSpec> layers) {
  if (r.size() != layers.size()) {
    throw InvalidInput("rank vector " + r.to_string() + " has wrong length for " +
                       std::to_string(layers.size()) + " layers");
  }
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] < 0 || r[i] > layers[i].max_rank()) {
      throw InvalidRank("rank " + std::to_string(r[i]) + " out of range [0, " +
                        std::to_string(layers[i].max_rank()) + "] for layer " +
                        std::to_string(i));
    }
  }
}

/// Singular values, sorted non-increasing, all non-negative.
struct Spectrum {
  std::vector<double> values;

  Spectrum() = default;
  explicit Spectrum(std::vector<double> v) : values(std::move(v)) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i]) || values[i] < 0.0) {
        throw InvalidInput("spectrum values must be finite and non-negative");
      }
      if (i > 0 && values[i] > values[i - 1]) {
        throw InvalidInput("spectrum must be sorted non-increasing");
      }
    }
  }

  std::size_t size() const noexcept { return values.size(); }

  /// Σ_{j ≥ r} σ_j² (0-based j): energy not captured by the leading r values.
  /// Summed smallest-first.
  double tail_energy(std::size_t r) const {
    double s = 0.0;
    for (std::size_t j = values.size(); j > r; --j) s += values[j - 1] * values[j - 1];
    return s;
  }

  double total_energy() const { return tail_energy(0); }

  friend bool operator==(const Spectrum&, const Spectrum&) = default;
};

/// Adapter factors: the update is u · vᵀ with u (m × r) and v (n × r).
struct LowRankFactors {
  Matrix u;
  Matrix v;

  static LowRankFactors zero(std::size_t rows, std::size_t cols) {
    return {Matrix(rows, 0), Matrix(cols, 0)};
  }

  std::size_t rank() const noexcept { return u.cols(); }

  /// u · vᵀ as a dense rows × cols matrix.
  Matrix product() const {
    if (rank() == 0) return Matrix(u.rows(), v.rows());
    return multiply_transposed(u, v);
  }
};

struct SvdResult {
  Matrix left;        // m × k, orthonormal columns
  Spectrum spectrum;  // k = min(m, n) values
  Matrix right;       // n × k, orthonormal columns
};

struct SvdOptions {
  int max_sweeps = 100;
};

namespace detail {

// Completes column `col` of `q` (which must be zero there) with a unit vector
// orthogonal to the columns listed in `filled`.
inline void complete_orthonormal_column(Matrix& q, std::size_t col,
                                        const std::vector<std::size_t>& filled) {
  const std::size_t m = q.rows();
  std::vector<double> best_vec;
  double best_norm = -1.0;
  for (std::size_t e = 0; e < m; ++e) {
    std::vector<double> w(m, 0.0);
    w[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t c : filled) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += q(i, c) * w[i];
        for (std::size_t i = 0; i < m; ++i) w[i] -= dot * q(i, c);
      }
    }
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > best_norm) {
      best_norm = norm;
      best_vec = std::move(w);
    }
    if (best_norm > 0.5) break;
  }
  for (std::size_t i = 0; i < m; ++i) q(i, col) = best_vec[i] / best_norm;
}

// One-sided Jacobi on a tall (rows ≥ cols) matrix.
inline SvdResult jacobi_svd_tall(const Matrix& a, const SvdOptions& opts) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix w = a;
  Matrix v = Matrix::identity(n);
  constexpr double tol = 1e-15;

  bool converged = n < 2;
  for (int sweep = 0; sweep < opts.max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          alpha += wp * wp;
          beta += wq * wq;
          gamma += wp * wq;
        }
        if (gamma == 0.0 || alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) {
    throw NumericFailure("svd: no convergence within " +
                         std::to_string(opts.max_sweeps) + " sweeps for matrix " +
                         a.shape_string());
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double smax = n ? sigma[order[0]] : 0.0;
  const double floor = smax * std::numeric_limits<double>::epsilon() *
                       static_cast<double>(std::max(m, n));

  SvdResult out{Matrix(m, n), Spectrum{}, Matrix(n, n)};
  std::vector<double> values(n);
  std::vector<std::size_t> filled;
  std::vector<std::size_t> deficient;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    values[k] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) out.right(i, k) = v(i, j);
    if (sigma[j] > floor && sigma[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.left(i, k) = w(i, j) / sigma[j];
      filled.push_back(k);
    } else {
      deficient.push_back(k);
    }
  }
  for (std::size_t k : deficient) {
    complete_orthonormal_column(out.left, k, filled);
    filled.push_back(k);
  }
  out.spectrum.values = std::move(values);
  return out;
}

}  // namespace detail

/// Thin singular value decomposition m = left · diag(spectrum) · rightᵀ.
inline SvdResult svd(const Matrix& m, const SvdOptions& opts = {}) {
  if (m.rows() == 0 || m.cols() == 0) throw InvalidInput("svd: empty matrix");
  require_finite(m, "svd");
  if (m.rows() >= m.cols()) return detail::jacobi_svd_tall(m, opts);
  SvdResult t = detail::jacobi_svd_tall(transpose(m), opts);
  return {std::move(t.right), std::move(t.spectrum), std::move(t.left)};
}

/// left · diag(σ) · rightᵀ.
inline Matrix reconstruct(const SvdResult& s) {
  Matrix scaled = s.left;
  for (std::size_t i = 0; i < scaled.rows(); ++i)
    for (std::size_t k = 0; k < scaled.cols(); ++k) scaled(i, k) *= s.spectrum.values[k];
  return multiply_transposed(scaled, s.right);
}

/// Best rank-r approximation factors, singular values split as √σ into each
/// factor.
inline LowRankFactors truncated_factorization(const SvdResult& s, std::size_t r) {
  const std::size_t k = s.spectrum.size();
  if (r > k) {
    throw InvalidRank("truncated_factorization: rank " + std::to_string(r) +
                      " exceeds " + std::to_string(k));
  }
  LowRankFactors f{Matrix(s.left.rows(), r), Matrix(s.right.rows(), r)};
  for (std::size_t c = 0; c < r; ++c) {
    const double root = std::sqrt(s.spectrum.values[c]);
    for (std::size_t i = 0; i < f.u.rows(); ++i) f.u(i, c) = s.left(i, c) * root;
    for (std::size_t i = 0; i < f.v.rows(); ++i) f.v(i, c) = s.right(i, c) * root;
  }
  return f;
}

inline LowRankFactors truncated_factorization(const Matrix& m, int r) {
  if (r < 0 || static_cast<std::size_t>(r) > std::min(m.rows(), m.cols())) {
    throw InvalidRank("truncated_factorization: rank " + std::to_string(r) +
                      " outside [0, " +
                      std::to_string(std::min(m.rows(), m.cols())) + "]");
  }
  return truncated_factorization(svd(m), static_cast<std::size_t>(r));
}

/// ‖m − (base + u·vᵀ)‖_F; an absent base is the zero matrix.
inline double reconstruction_error(const Matrix& m, const LowRankFactors& f,
                                   const std::optional<Matrix>& base = std::nullopt) {
  if (f.u.rows() != m.rows() || f.v.rows() != m.cols() || f.u.cols() != f.v.cols()) {
    throw InvalidInput("reconstruction_error: factors (" + f.u.shape_string() + ", " +
                       f.v.shape_string() + ") do not conform to " + m.shape_string());
  }
  if (base) require_same_shape(m, *base, "reconstruction_error");
  Matrix residual = base ? m - *base : m;
  if (f.rank() > 0) residual = residual - f.product();
  return frobenius_norm(residual);
}

}  // namespace darse
