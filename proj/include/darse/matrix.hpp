#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "darse/error.hpp"

namespace darse {

/// Dense real matrix, row-major, 64-bit entries.
///
/// A matrix may have zero columns (or rows) so that rank-0 factors can be
/// represented; the text format and the public operations that consume user
/// data require both dimensions to be positive.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
      : rows_(rows), cols_(cols), data_(std::move(entries)) {
    if (data_.size() != rows_ * cols_) {
      throw InvalidInput("matrix entries length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  /// rows x cols matrix with `values` on the leading diagonal.
  static Matrix diagonal(std::span<const double> values, std::size_t rows,
                         std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < values.size() && i < rows && i < cols; ++i) {
      m(i, i) = values[i];
    }
    return m;
  }

  static Matrix diagonal(std::span<const double> values) {
    return diagonal(values, values.size(), values.size());
  }

  /// Entries i.i.d. uniform in [lo, hi] drawn from `rng` in row-major order.
  template <typename Rng>
  static Matrix uniform(std::size_t rows, std::size_t cols, Rng& rng,
                        double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (double& x : m.data_) x = dist(rng);
    return m;
  }

  template <typename Rng>
  static Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng,
                         double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (double& x : m.data_) x = dist(rng);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  bool all_finite() const {
    for (double x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) {
    throw InvalidInput(std::string(what) + ": matrix " + m.shape_string() +
                       " has non-finite entries");
  }
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput(std::string(what) + ": shape mismatch " + a.shape_string() +
                       " vs " + b.shape_string());
  }
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw InvalidInput("multiply: inner dimensions differ " + a.shape_string() +
                       " * " + b.shape_string());
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

/// a * bᵀ without materializing the transpose.
inline Matrix multiply_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw InvalidInput("multiply_transposed: column counts differ " +
                       a.shape_string() + " vs " + b.shape_string());
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  }
  return c;
}

/// aᵀ * b without materializing the transpose.
inline Matrix transposed_multiply(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw InvalidInput("transposed_multiply: row counts differ " +
                       a.shape_string() + " vs " + b.shape_string());
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
    }
  }
  return c;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  auto out = c.data();
  auto rhs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rhs[i];
  return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix c = a;
  auto out = c.data();
  auto rhs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= rhs[i];
  return c;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (double& x : c.data()) x *= s;
  return c;
}

inline double frobenius_norm_squared(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return s;
}

inline double frobenius_norm(const Matrix& m) {
  return std::sqrt(frobenius_norm_squared(m));
}

inline double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double x : m.data()) best = std::max(best, std::abs(x));
  return best;
}

// Plain-text format: "rows cols" on the first line, then one row per line.

inline void write_matrix(std::ostream& os, const Matrix& m) {
  std::ostringstream line;
  line.precision(17);
  os << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    line.str({});
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) line << ' ';
      line << m(i, j);
    }
    os << line.str() << '\n';
  }
}

inline Matrix read_matrix(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("matrix: missing header line", line_no);
  std::istringstream header(line);
  long long rows = 0, cols = 0;
  if (!(header >> rows >> cols) || rows < 1 || cols < 1) {
    throw ParseError("matrix: header must be two positive integers", line_no);
  }
  std::string trailing;
  if (header >> trailing) throw ParseError("matrix: trailing data in header", line_no);

  std::vector<double> entries;
  entries.reserve(static_cast<std::size_t>(rows * cols));
  for (long long i = 0; i < rows; ++i) {
    if (!next_line()) {
      throw ParseError("matrix: expected " + std::to_string(rows) + " rows, got " +
                           std::to_string(i),
                       line_no);
    }
    std::istringstream row(line);
    std::string token;
    long long count = 0;
    while (row >> token) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size()) {
        throw ParseError("matrix: bad number '" + token + "'", line_no);
      }
      if (!std::isfinite(v)) throw ParseError("matrix: non-finite entry", line_no);
      entries.push_back(v);
      ++count;
    }
    if (count != cols) {
      throw ParseError("matrix: row has " + std::to_string(count) +
                           " values, expected " + std::to_string(cols),
                       line_no);
    }
  }
  if (next_line()) throw ParseError("matrix: unexpected trailing rows", line_no);
  return Matrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols),
                std::move(entries));
}

}  // namespace darse
