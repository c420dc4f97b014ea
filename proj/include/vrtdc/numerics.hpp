#pragma once

// Small dense linear algebra: row-major matrices, Gaussian elimination,
// symmetric eigenvalues (closed form for 2x2, cyclic Jacobi otherwise).

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vrtdc/errors.hpp"

namespace vrtdc {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ == 0 ? 0 : init.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw DimensionMismatch("ragged matrix literal");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  // u v^T
  static Matrix outer(std::span<const double> u, std::span<const double> v) {
    Matrix m(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i)
      for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix& operator+=(const Matrix& o) {
    check_same(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  friend Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols_ != b.rows_) throw DimensionMismatch("matrix product");
    Matrix c(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
      }
    return c;
  }

  friend Vector operator*(const Matrix& a, std::span<const double> x) {
    if (a.cols_ != x.size()) throw DimensionMismatch("matrix-vector product");
    Vector y(a.rows_, 0.0);
    for (std::size_t i = 0; i < a.rows_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < a.cols_; ++j) s += a(i, j) * x[j];
      y[i] = s;
    }
    return y;
  }
  friend Vector operator*(const Matrix& a, const Vector& x) {
    return a * std::span<const double>(x);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  void check_same(const Matrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionMismatch("elementwise matrix op");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---- vector helpers ----

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline double norm_inf(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double max_abs_entry(const Matrix& m) { return norm_inf(m.data()); }

inline Vector add(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("vector add");
  Vector c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
  return c;
}

inline Vector sub(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("vector sub");
  Vector c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
  return c;
}

inline Vector scale(std::span<const double> a, double s) {
  Vector c(a.begin(), a.end());
  for (double& x : c) x *= s;
  return c;
}

// y += s * x
inline void axpy(double s, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---- linear solves ----

inline constexpr double kPivotTolerance = 1e-12;

// Solves M X = Y for a matrix right-hand side (Gaussian elimination with
// partial pivoting). Throws SingularMatrix when a pivot falls below 1e-12.
inline Matrix solve_linear(const Matrix& m, const Matrix& y) {
  if (!m.square()) throw DimensionMismatch("solve_linear: matrix not square");
  if (y.rows() != m.rows()) throw DimensionMismatch("solve_linear: rhs rows");
  const std::size_t n = m.rows();
  const std::size_t k = y.cols();
  Matrix a = m;
  Matrix x = y;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    double best = std::abs(a(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > best) {
        best = std::abs(a(r, col));
        piv = r;
      }
    }
    if (!(best >= kPivotTolerance))
      throw SingularMatrix("pivot " + std::to_string(best) + " in column " + std::to_string(col));
    if (piv != col) {
      std::swap_ranges(a.row(col).begin(), a.row(col).end(), a.row(piv).begin());
      std::swap_ranges(x.row(col).begin(), x.row(col).end(), x.row(piv).begin());
    }
    const double inv = 1.0 / a(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) * inv;
      if (f == 0.0) continue;
      a(r, col) = 0.0;
      for (std::size_t c = col + 1; c < n; ++c) a(r, c) -= f * a(col, c);
      for (std::size_t c = 0; c < k; ++c) x(r, c) -= f * x(col, c);
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = x(ii, c);
      for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * x(j, c);
      x(ii, c) = s / a(ii, ii);
    }
  }
  return x;
}

inline Vector solve_linear(const Matrix& m, std::span<const double> y) {
  if (y.size() != m.rows()) throw DimensionMismatch("solve_linear: rhs size");
  Matrix rhs(y.size(), 1);
  std::copy(y.begin(), y.end(), rhs.data().begin());
  return solve_linear(m, rhs).data();
}

inline Vector solve_linear(const Matrix& m, const Vector& y) {
  return solve_linear(m, std::span<const double>(y));
}

inline Matrix inverse(const Matrix& m) { return solve_linear(m, Matrix::identity(m.rows())); }

// ---- symmetric eigenvalues ----

inline constexpr double kSymmetryTolerance = 1e-10;

inline void require_symmetric(const Matrix& s) {
  if (!s.square()) throw NotSymmetric("matrix not square");
  const double scale = std::max(1.0, max_abs_entry(s));
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = i + 1; j < s.cols(); ++j)
      if (std::abs(s(i, j) - s(j, i)) > kSymmetryTolerance * scale)
        throw NotSymmetric("asymmetry at (" + std::to_string(i) + "," + std::to_string(j) + ")");
}

namespace detail {

// Cyclic Jacobi rotations; returns the eigenvalues (unsorted).
inline Vector jacobi_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    double diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diag += a(i, i) * a(i, i);
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    }
    if (off <= 1e-30 * std::max(diag, 1e-300) || off == 0.0) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
      }
    }
  }
  Vector ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  return ev;
}

}  // namespace detail

// All eigenvalues of a symmetric matrix in ascending order.
inline Vector sym_eigenvalues(const Matrix& s) {
  require_symmetric(s);
  const std::size_t n = s.rows();
  Vector ev;
  if (n == 0) return ev;
  if (n == 1) {
    ev = {s(0, 0)};
  } else if (n == 2) {
    const double a = s(0, 0);
    const double d = s(1, 1);
    const double b = 0.5 * (s(0, 1) + s(1, 0));
    const double mean = 0.5 * (a + d);
    const double rad = std::hypot(0.5 * (a - d), b);
    ev = {mean - rad, mean + rad};
  } else {
    Matrix sym = s;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) sym(i, j) = sym(j, i) = 0.5 * (s(i, j) + s(j, i));
    ev = detail::jacobi_eigenvalues(std::move(sym));
  }
  std::sort(ev.begin(), ev.end());
  return ev;
}

inline double sym_max_eig(const Matrix& s) { return sym_eigenvalues(s).back(); }

inline double sym_min_eig(const Matrix& s) { return sym_eigenvalues(s).front(); }

// Largest singular value.
inline double spectral_norm(const Matrix& m) {
  if (!all_finite(m.data())) throw InvalidParams("spectral_norm: non-finite entries");
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  const Matrix gram = m.cols() <= m.rows() ? m.transpose() * m : m * m.transpose();
  return std::sqrt(std::max(0.0, sym_max_eig(gram)));
}

}  // namespace vrtdc
