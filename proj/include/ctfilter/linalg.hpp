#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <utility>
#include <vector>

#include "error.hpp"

namespace ctfilter {

using Vector = std::vector<double>;

/* Dense row-major matrix of doubles.  Dimensions in this library are the
   number of chain states (rarely more than a handful), so everything is a
   plain O(n^3) implementation with no blocking. */
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    a_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_)
        fail(ErrorCode::ShapeError, "ragged matrix initializer");
      a_.insert(a_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return a_[i * cols_ + j];
  }

  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }
  const double* row(std::size_t i) const { return a_.data() + i * cols_; }

  Matrix& operator*=(double s) {
    for (double& x : a_) x *= s;
    return *this;
  }
  Matrix& operator+=(const Matrix& o) {
    for (std::size_t k = 0; k < a_.size(); ++k) a_[k] += o.a_[k];
    return *this;
  }

  friend Matrix operator*(Matrix m, double s) { return m *= s; }
  friend Matrix operator*(double s, Matrix m) { return m *= s; }
  friend Matrix operator+(Matrix m, const Matrix& o) { return m += o; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  Vector a_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) fail(ErrorCode::ShapeError, "matmul dimensions");
  Matrix c(a.rows(), b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/* y = M x (column-vector action). */
inline Vector matvec(const Matrix& m, const Vector& x) {
  if (m.cols() != x.size()) fail(ErrorCode::ShapeError, "matvec dimensions");
  Vector y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

/* y^T = x^T M (row-vector action). */
inline Vector vec_matmul(const Vector& x, const Matrix& m) {
  if (m.rows() != x.size()) fail(ErrorCode::ShapeError, "vec_matmul dimensions");
  Vector y(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (std::size_t j = 0; j < m.cols(); ++j) y[j] += xi * m(i, j);
  }
  return y;
}

/* Maximum absolute column sum. */
inline double norm1(const Matrix& a) {
  double best = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += std::abs(a(i, j));
    if (s > best) best = s;
  }
  return best;
}

/* Solve A X = B in place via LU with partial pivoting; A and B are clobbered
   and B holds the solution on return. */
inline void solve_inplace(Matrix& a, Matrix& b) {
  const std::size_t n = a.rows();
  if (!a.square() || b.rows() != n)
    fail(ErrorCode::ShapeError, "solve dimensions");
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (a(piv, col) == 0.0)
      fail(ErrorCode::SolverInstability, "singular matrix in linear solve");
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(col, j), a(piv, j));
      for (std::size_t j = 0; j < b.cols(); ++j)
        std::swap(b(col, j), b(piv, j));
    }
    const double inv = 1.0 / a(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) * inv;
      if (f == 0.0) continue;
      a(r, col) = 0.0;
      for (std::size_t j = col + 1; j < n; ++j) a(r, j) -= f * a(col, j);
      for (std::size_t j = 0; j < b.cols(); ++j) b(r, j) -= f * b(col, j);
    }
  }
  for (std::size_t col = n; col-- > 0;) {
    const double inv = 1.0 / a(col, col);
    for (std::size_t j = 0; j < b.cols(); ++j) b(col, j) *= inv;
    for (std::size_t r = 0; r < col; ++r) {
      const double f = a(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) b(r, j) -= f * b(col, j);
    }
  }
}

namespace detail {

/* exp of a 2x2 matrix in closed form:
   exp(M) = e^{tr/2} [cosh(mu) I + sinh(mu)/mu (M - (tr/2) I)],
   mu^2 = ((m00-m11)/2)^2 + m01 m10.  mu^2 < 0 switches cosh/sinh to cos/sin;
   sinh(mu)/mu is evaluated by its series near zero. */
inline Matrix expm2(const Matrix& m) {
  const double half_tr = 0.5 * (m(0, 0) + m(1, 1));
  const double delta = 0.5 * (m(0, 0) - m(1, 1));
  const double mu2 = delta * delta + m(0, 1) * m(1, 0);
  double c, s;  // cosh(mu), sinh(mu)/mu as functions of mu^2
  if (std::abs(mu2) < 1e-8) {
    c = 1.0 + mu2 / 2.0 + mu2 * mu2 / 24.0;
    s = 1.0 + mu2 / 6.0 + mu2 * mu2 / 120.0;
  } else if (mu2 > 0) {
    const double mu = std::sqrt(mu2);
    c = std::cosh(mu);
    s = std::sinh(mu) / mu;
  } else {
    const double nu = std::sqrt(-mu2);
    c = std::cos(nu);
    s = std::sin(nu) / nu;
  }
  const double e = std::exp(half_tr);
  Matrix r(2, 2);
  r(0, 0) = e * (c + s * delta);
  r(1, 1) = e * (c - s * delta);
  r(0, 1) = e * s * m(0, 1);
  r(1, 0) = e * s * m(1, 0);
  return r;
}

/* Degree-13 diagonal Pade approximant with scaling and squaring. */
inline Matrix expm_pade13(Matrix a) {
  static const double b[] = {64764752532480000.0, 32382376266240000.0,
                             7771770303897600.0,  1187353796428800.0,
                             129060195264000.0,   10559470521600.0,
                             670442572800.0,      33522128640.0,
                             1323241920.0,        40840800.0,
                             960960.0,            16380.0,
                             182.0,               1.0};
  const double theta13 = 5.371920351148152;
  const std::size_t n = a.rows();

  int squarings = 0;
  const double nrm = norm1(a);
  if (nrm > theta13) {
    squarings = static_cast<int>(std::ceil(std::log2(nrm / theta13)));
    a *= std::ldexp(1.0, -squarings);
  }

  const Matrix id = Matrix::identity(n);
  const Matrix a2 = matmul(a, a);
  const Matrix a4 = matmul(a2, a2);
  const Matrix a6 = matmul(a2, a4);

  Matrix u = matmul(a6, b[13] * a6 + b[11] * a4 + b[9] * a2);
  u += b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id;
  u = matmul(a, u);
  Matrix v = matmul(a6, b[12] * a6 + b[10] * a4 + b[8] * a2);
  v += b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;

  Matrix num = v;
  num += u;  // V + U
  Matrix den = v;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) den(i, j) -= u(i, j);  // V - U
  solve_inplace(den, num);

  for (int k = 0; k < squarings; ++k) num = matmul(num, num);
  return num;
}

}  // namespace detail

inline Matrix expm(const Matrix& m) {
  if (!m.square()) fail(ErrorCode::ShapeError, "expm needs a square matrix");
  if (m.rows() == 1) {
    Matrix r(1, 1);
    r(0, 0) = std::exp(m(0, 0));
    return r;
  }
  if (m.rows() == 2) return detail::expm2(m);
  return detail::expm_pade13(m);
}

}  // namespace ctfilter
