#pragma once

// Analytic scalar functions on the torus: trigonometric modes (used for
// conformal factors and oracles) and the fixed library of nonnegative test
// functions paired against scalar curvature.

#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "roughflow/error.hpp"
#include "roughflow/grid.hpp"

namespace roughflow {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// amplitude * prod_a cos(2 pi k_a x_a + phase_a)
template <int Dim>
struct TrigMode {
  double amplitude = 0.0;
  std::array<int, Dim> wavenumber{};
  std::array<double, Dim> phase{};

  static TrigMode sine(double amplitude, std::array<int, Dim> k) {
    TrigMode m{amplitude, k, {}};
    for (int a = 0; a < Dim; ++a) m.phase[a] = k[a] != 0 ? -std::numbers::pi / 2.0 : 0.0;
    return m;
  }
};

/// Sum of trig modes plus a constant, with exact derivatives up to order two.
template <int Dim>
class TrigSeries {
 public:
  TrigSeries() = default;
  explicit TrigSeries(std::vector<TrigMode<Dim>> modes, double offset = 0.0)
      : modes_(std::move(modes)), offset_(offset) {}

  const std::vector<TrigMode<Dim>>& modes() const { return modes_; }
  double offset() const { return offset_; }
  bool is_constant() const {
    for (const auto& m : modes_)
      if (m.amplitude != 0.0)
        for (int k : m.wavenumber)
          if (k != 0) return false;
    return true;
  }

  double value(const Vec<Dim>& x) const {
    double v = offset_;
    for (const auto& m : modes_) {
      double prod = m.amplitude;
      for (int a = 0; a < Dim; ++a) prod *= std::cos(arg(m, a, x));
      v += prod;
    }
    return v;
  }

  Vec<Dim> gradient(const Vec<Dim>& x) const {
    Vec<Dim> g{};
    for (const auto& m : modes_) {
      std::array<double, Dim> c{}, s{};
      for (int a = 0; a < Dim; ++a) {
        c[a] = std::cos(arg(m, a, x));
        s[a] = std::sin(arg(m, a, x));
      }
      for (int a = 0; a < Dim; ++a) {
        double prod = -m.amplitude * two_pi * m.wavenumber[a] * s[a];
        for (int b = 0; b < Dim; ++b)
          if (b != a) prod *= c[b];
        g[a] += prod;
      }
    }
    return g;
  }

  Mat<Dim> hessian(const Vec<Dim>& x) const {
    Mat<Dim> h{};
    for (const auto& m : modes_) {
      std::array<double, Dim> c{}, s{};
      for (int a = 0; a < Dim; ++a) {
        c[a] = std::cos(arg(m, a, x));
        s[a] = std::sin(arg(m, a, x));
      }
      for (int a = 0; a < Dim; ++a)
        for (int b = 0; b < Dim; ++b) {
          double prod = m.amplitude;
          for (int e = 0; e < Dim; ++e) {
            const double ke = two_pi * m.wavenumber[e];
            if (a == b && e == a) {
              prod *= -ke * ke * c[e];
            } else if (e == a || e == b) {
              prod *= -ke * s[e];
            } else {
              prod *= c[e];
            }
          }
          h[a][b] += prod;
        }
    }
    return h;
  }

  double laplacian(const Vec<Dim>& x) const {
    const auto h = hessian(x);
    double l = 0.0;
    for (int a = 0; a < Dim; ++a) l += h[a][a];
    return l;
  }

  Field<Dim> sample(const GridSpec<Dim>& grid) const {
    return sample_scalar(grid, [&](const Vec<Dim>& x) { return value(x); });
  }

 private:
  static double arg(const TrigMode<Dim>& m, int a, const Vec<Dim>& x) {
    return two_pi * m.wavenumber[a] * x[a] + m.phase[a];
  }

  std::vector<TrigMode<Dim>> modes_;
  double offset_ = 0.0;
};

/// Nonnegative smooth test function with analytic value and gradient.
template <int Dim>
class TestFunction {
 public:
  enum class Kind { one, sine_x1, sine_product, bump };

  TestFunction(Kind kind, std::string id, Vec<Dim> center = {}, double half_width = bump_half_width)
      : kind_(kind), id_(std::move(id)), center_(center), width_(half_width) {
    if (kind_ == Kind::bump) {
      for (int a = 0; a < Dim; ++a)
        if (center_[a] == 0.0) center_[a] = 0.5;
      require(width_ > 0.0 && width_ <= 0.5, ErrorCode::invalid_argument, "bump half-width must lie in (0, 1/2]");
    }
  }

  const std::string& id() const { return id_; }
  Kind kind() const { return kind_; }

  /// Default half-width of the bump support per axis (half a period).
  static constexpr double bump_half_width = 0.25;

  double half_width() const { return width_; }

  double value(const Vec<Dim>& x) const {
    switch (kind_) {
      case Kind::one: return 1.0;
      case Kind::sine_x1: return 0.5 * (1.0 + std::sin(two_pi * x[0]));
      case Kind::sine_product: return 0.25 * (1.0 + std::sin(two_pi * x[0])) * (1.0 + std::sin(two_pi * x[1]));
      case Kind::bump: {
        double v = 1.0;
        for (int a = 0; a < Dim; ++a) v *= bump_factor(x[a], center_[a], width_);
        return v;
      }
    }
    return 0.0;
  }

  Vec<Dim> gradient(const Vec<Dim>& x) const {
    Vec<Dim> g{};
    switch (kind_) {
      case Kind::one: break;
      case Kind::sine_x1: g[0] = std::numbers::pi * std::cos(two_pi * x[0]); break;
      case Kind::sine_product:
        g[0] = 0.5 * std::numbers::pi * std::cos(two_pi * x[0]) * (1.0 + std::sin(two_pi * x[1]));
        g[1] = 0.5 * std::numbers::pi * std::cos(two_pi * x[1]) * (1.0 + std::sin(two_pi * x[0]));
        break;
      case Kind::bump:
        for (int a = 0; a < Dim; ++a) {
          double v = bump_derivative(x[a], center_[a], width_);
          for (int b = 0; b < Dim; ++b)
            if (b != a) v *= bump_factor(x[b], center_[b], width_);
          g[a] = v;
        }
        break;
    }
    return g;
  }

  Field<Dim> sample(const GridSpec<Dim>& grid) const {
    return sample_scalar(grid, [&](const Vec<Dim>& x) { return value(x); });
  }

  /// ||u||_{L^q} + ||grad u||_{L^q} with q = n/(n-1). Closed form in 2D; in
  /// 3D a fine midpoint quadrature of the analytic integrands.
  double sobolev_norm() const {
    if constexpr (Dim == 2) {
      constexpr double pi2 = std::numbers::pi * std::numbers::pi;
      switch (kind_) {
        case Kind::one: return 1.0;
        case Kind::sine_x1: return std::sqrt(3.0 / 8.0) + std::sqrt(pi2 / 2.0);
        case Kind::sine_product: return 3.0 / 8.0 + std::sqrt(3.0 * pi2 / 8.0);
        case Kind::bump: {
          const double l2 = 35.0 * width_ / 64.0;       // int psi^2
          const double d2 = 5.0 * pi2 / (16.0 * width_);  // int psi'^2
          return l2 + std::sqrt(2.0 * d2 * l2);
        }
      }
      return 0.0;
    } else {
      return quadrature_norm();
    }
  }

  /// Independent evaluation of the same norm by midpoint quadrature.
  double quadrature_norm(int m = 0) const {
    const double q = static_cast<double>(Dim) / (Dim - 1);
    if (m == 0) m = Dim == 2 ? 1024 : 96;
    const double h = 1.0 / m;
    double su = 0.0, sg = 0.0;
    std::array<int, Dim> idx{};
    const long total = static_cast<long>(std::pow(m, Dim));
    for (long t = 0; t < total; ++t) {
      long r = t;
      for (int a = Dim - 1; a >= 0; --a) {
        idx[a] = static_cast<int>(r % m);
        r /= m;
      }
      Vec<Dim> x{};
      for (int a = 0; a < Dim; ++a) x[a] = (idx[a] + 0.5) * h;
      const auto g = gradient(x);
      double gn = 0.0;
      for (double v : g) gn += v * v;
      su += std::pow(std::abs(value(x)), q);
      sg += std::pow(std::sqrt(gn), q);
    }
    const double vol = std::pow(h, Dim);
    return std::pow(su * vol, 1.0 / q) + std::pow(sg * vol, 1.0 / q);
  }

 private:
  static double periodic_offset(double s, double c) {
    double d = s - c;
    d -= std::round(d);
    return d;
  }
  static double bump_factor(double s, double c, double w) {
    const double d = periodic_offset(s, c);
    if (std::abs(d) >= w) return 0.0;
    const double cs = std::cos(std::numbers::pi * d / (2.0 * w));
    return cs * cs * cs * cs;
  }
  static double bump_derivative(double s, double c, double w) {
    const double d = periodic_offset(s, c);
    if (std::abs(d) >= w) return 0.0;
    const double th = std::numbers::pi * d / (2.0 * w);
    const double cs = std::cos(th);
    return -4.0 * cs * cs * cs * std::sin(th) * std::numbers::pi / (2.0 * w);
  }

  Kind kind_;
  std::string id_;
  Vec<Dim> center_{};
  double width_ = bump_half_width;
};

/// The fixed library: 1, (1+sin 2 pi x1)/2, its product with the x2 factor,
/// and a bump supported in half a period.
template <int Dim>
std::vector<TestFunction<Dim>> test_function_library() {
  using K = typename TestFunction<Dim>::Kind;
  return {TestFunction<Dim>(K::one, "one"), TestFunction<Dim>(K::sine_x1, "sine_x1"),
          TestFunction<Dim>(K::sine_product, "sine_product"), TestFunction<Dim>(K::bump, "bump")};
}

}  // namespace roughflow
