#pragma once

// Pointwise linear algebra for n x n symmetric matrices with n in {2, 3}.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <utility>

namespace roughflow {

template <int Dim>
inline constexpr int sym_count = Dim * (Dim + 1) / 2;

/// Packed index of the unordered pair (i, j), row-major over the upper triangle.
template <int Dim>
constexpr int sym_index(int i, int j) {
  if (i > j) std::swap(i, j);
  return i * Dim - i * (i - 1) / 2 + (j - i);
}

template <int Dim>
constexpr std::array<std::pair<int, int>, sym_count<Dim>> sym_pairs() {
  std::array<std::pair<int, int>, sym_count<Dim>> out{};
  for (int i = 0; i < Dim; ++i)
    for (int j = i; j < Dim; ++j) out[sym_index<Dim>(i, j)] = {i, j};
  return out;
}

template <int Dim>
using Mat = std::array<std::array<double, Dim>, Dim>;

template <int Dim>
using Vec = std::array<double, Dim>;

template <int Dim>
constexpr Mat<Dim> identity_matrix() {
  Mat<Dim> m{};
  for (int i = 0; i < Dim; ++i) m[i][i] = 1.0;
  return m;
}

template <int Dim>
double determinant(const Mat<Dim>& m) {
  if constexpr (Dim == 2) {
    return m[0][0] * m[1][1] - m[0][1] * m[1][0];
  } else {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }
}

/// Cofactor inverse. Returns false when the matrix is not positive definite
/// or its Frobenius condition number exceeds max_condition.
template <int Dim>
bool invert_spd(const Mat<Dim>& m, Mat<Dim>& inv, double max_condition = 1e12) {
  if (!(m[0][0] > 0.0)) return false;
  const double det = determinant<Dim>(m);
  if constexpr (Dim == 3) {
    if (!(m[0][0] * m[1][1] - m[0][1] * m[1][0] > 0.0)) return false;
  }
  if (!(det > 0.0) || !std::isfinite(det)) return false;
  const double s = 1.0 / det;
  if constexpr (Dim == 2) {
    inv[0][0] = m[1][1] * s;
    inv[1][1] = m[0][0] * s;
    inv[0][1] = inv[1][0] = -m[0][1] * s;
  } else {
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * s;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * s;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * s;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * s;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * s;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * s;
    inv[1][0] = inv[0][1];
    inv[2][0] = inv[0][2];
    inv[2][1] = inv[1][2];
  }
  double fm = 0.0, fi = 0.0;
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) {
      fm += m[i][j] * m[i][j];
      fi += inv[i][j] * inv[i][j];
    }
  return std::sqrt(fm * fi) <= max_condition;
}

/// Eigenvalues of a symmetric matrix in ascending order (closed form).
template <int Dim>
Vec<Dim> sym_eigenvalues(const Mat<Dim>& m) {
  if constexpr (Dim == 2) {
    const double tr = 0.5 * (m[0][0] + m[1][1]);
    const double d = 0.5 * (m[0][0] - m[1][1]);
    const double r = std::hypot(d, m[0][1]);
    return {tr - r, tr + r};
  } else {
    const double p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    const double q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if (p1 <= 1e-300) {
      Vec<3> e{m[0][0], m[1][1], m[2][2]};
      if (e[0] > e[1]) std::swap(e[0], e[1]);
      if (e[1] > e[2]) std::swap(e[1], e[2]);
      if (e[0] > e[1]) std::swap(e[0], e[1]);
      return e;
    }
    const double a = m[0][0] - q, b = m[1][1] - q, c = m[2][2] - q;
    const double p2 = a * a + b * b + c * c + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    Mat<3> bm = m;
    for (int i = 0; i < 3; ++i) bm[i][i] -= q;
    for (auto& row : bm)
      for (auto& v : row) v /= p;
    double r = 0.5 * determinant<3>(bm);
    r = std::clamp(r, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double e_hi = q + 2.0 * p * std::cos(phi);
    const double e_lo = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
    const double e_mid = 3.0 * q - e_hi - e_lo;
    return {e_lo, e_mid, e_hi};
  }
}

/// Lower Cholesky factor; returns false if the matrix is not positive definite.
template <int Dim>
bool cholesky(const Mat<Dim>& m, Mat<Dim>& l) {
  l = Mat<Dim>{};
  for (int j = 0; j < Dim; ++j) {
    double d = m[j][j];
    for (int k = 0; k < j; ++k) d -= l[j][k] * l[j][k];
    if (!(d > 0.0)) return false;
    l[j][j] = std::sqrt(d);
    for (int i = j + 1; i < Dim; ++i) {
      double s = m[i][j];
      for (int k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      l[i][j] = s / l[j][j];
    }
  }
  return true;
}

/// Extreme eigenvalues of g relative to h, i.e. of h^{-1/2} g h^{-1/2}.
template <int Dim>
std::pair<double, double> relative_eigen_range(const Mat<Dim>& g, const Mat<Dim>& h) {
  Mat<Dim> l;
  if (!cholesky<Dim>(h, l)) return {0.0, 0.0};
  // a = L^{-1} g L^{-T}
  Mat<Dim> y{};
  for (int c = 0; c < Dim; ++c)
    for (int i = 0; i < Dim; ++i) {
      double s = g[i][c];
      for (int k = 0; k < i; ++k) s -= l[i][k] * y[k][c];
      y[i][c] = s / l[i][i];
    }
  Mat<Dim> a{};
  for (int r = 0; r < Dim; ++r)
    for (int i = 0; i < Dim; ++i) {
      double s = y[r][i];
      for (int k = 0; k < i; ++k) s -= l[i][k] * a[r][k];
      a[r][i] = s / l[i][i];
    }
  for (int i = 0; i < Dim; ++i)
    for (int j = i + 1; j < Dim; ++j) a[i][j] = a[j][i] = 0.5 * (a[i][j] + a[j][i]);
  const auto e = sym_eigenvalues<Dim>(a);
  return {e.front(), e.back()};
}

}  // namespace roughflow
