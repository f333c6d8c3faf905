#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace supfex {

using Vector = std::vector<double>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Incompatible operand shapes (matrix/vector dimension mismatch).
struct ShapeError : Error {
  using Error::Error;
};
// Malformed input document (network file, dataset file).
struct ParseError : Error {
  using Error::Error;
};
// Index outside the valid range of a layer, neuron or feature rank.
struct IndexError : Error {
  using Error::Error;
};
// Value-level contract violation (non-finite entry, pixel out of range, ...).
struct ValidationError : Error {
  using Error::Error;
};
// Size guard of a brute-force routine exceeded.
struct GuardError : Error {
  using Error::Error;
};

inline bool all_finite(const Vector& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require_finite(const Vector& v, const std::string& what) {
  if (!all_finite(v)) throw ValidationError(what + ": non-finite entry");
}

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
      : rows_(rows), cols_(cols), data_(std::move(entries)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("matrix: " + std::to_string(data_.size()) +
                       " entries for " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    require_finite(data_, "matrix");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Vector column(std::size_t c) const {
    Vector out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size())
    throw ShapeError("matvec: matrix has " + std::to_string(m.cols()) +
                     " cols, vector has " + std::to_string(v.size()));
  Vector out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) acc += m(r, c) * v[c];
    out[r] = acc;
  }
  return out;
}

inline Vector affine(const Matrix& m, const Vector& v, const Vector& b) {
  if (m.rows() != b.size())
    throw ShapeError("affine: matrix has " + std::to_string(m.rows()) +
                     " rows, bias has " + std::to_string(b.size()));
  Vector out = matvec(m, v);
  for (std::size_t r = 0; r < out.size(); ++r) out[r] += b[r];
  return out;
}

inline double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size())
    throw ShapeError("dot: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace supfex
