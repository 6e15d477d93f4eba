#pragma once

// Periodic structured grid on the unit torus T^n = [0,1)^n, field containers,
// central-difference stencils, trapezoid quadrature and norms.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "roughflow/error.hpp"
#include "roughflow/parallel.hpp"
#include "roughflow/tensor.hpp"

namespace roughflow {

template <int Dim>
class GridSpec {
  static_assert(Dim == 2 || Dim == 3, "only 2D and 3D tori are supported");

 public:
  static constexpr int dimension = Dim;

  explicit GridSpec(int resolution, int derivative_order = 2)
      : n_(resolution), order_(derivative_order) {
    require(n_ >= 8, ErrorCode::invalid_grid, "resolution must be at least 8");
    require(n_ % 2 == 0, ErrorCode::invalid_grid, "resolution must be even");
    require(order_ == 2 || order_ == 4, ErrorCode::invalid_grid, "derivative order must be 2 or 4");
    dx_ = 1.0 / n_;
    require(dx_ * n_ == 1.0, ErrorCode::invalid_grid, "spacing times resolution is not exactly 1");
    points_ = 1;
    for (int a = Dim - 1; a >= 0; --a) {
      strides_[a] = points_;
      points_ *= static_cast<std::size_t>(n_);
    }
  }

  int resolution() const { return n_; }
  int derivative_order() const { return order_; }
  double spacing() const { return dx_; }
  double cell_volume() const { return std::pow(dx_, Dim); }
  std::size_t points() const { return points_; }
  /// Axis 0 varies slowest; axis Dim-1 is contiguous.
  std::size_t stride(int axis) const { return strides_[axis]; }

  std::array<int, Dim> index_of(std::size_t p) const {
    std::array<int, Dim> idx{};
    for (int a = 0; a < Dim; ++a) idx[a] = static_cast<int>((p / strides_[a]) % n_);
    return idx;
  }

  std::size_t point(std::array<int, Dim> idx) const {
    std::size_t p = 0;
    for (int a = 0; a < Dim; ++a) {
      int i = idx[a] % n_;
      if (i < 0) i += n_;
      p += static_cast<std::size_t>(i) * strides_[a];
    }
    return p;
  }

  std::array<double, Dim> coordinate(std::size_t p) const {
    std::array<double, Dim> x{};
    const auto idx = index_of(p);
    for (int a = 0; a < Dim; ++a) x[a] = idx[a] * dx_;
    return x;
  }

  GridSpec with_order(int order) const { return GridSpec(n_, order); }
  GridSpec refined(int factor = 2) const { return GridSpec(n_ * factor, order_); }

  bool operator==(const GridSpec& o) const { return n_ == o.n_ && order_ == o.order_; }
  bool same_points(const GridSpec& o) const { return n_ == o.n_; }

 private:
  int n_;
  int order_;
  double dx_ = 0.0;
  std::size_t points_ = 0;
  std::array<std::size_t, Dim> strides_{};
};

/// What the components of a field mean. Index conventions:
///  - sym2:        g_{ij} packed by sym_index(i, j)
///  - christoffel: Gamma^k_{ij} at k * S + sym_index(i, j)
///  - dsym2:       d_k g_{ij} at k * S + sym_index(i, j)
///  - tensor4:     R_{ijkl} at ((i * n + j) * n + k) * n + l
enum class Valence : int { scalar = 0, vector = 1, covector = 2, sym2 = 3, christoffel = 4, dsym2 = 5, tensor4 = 6 };

template <int Dim>
constexpr int component_count(Valence v) {
  switch (v) {
    case Valence::scalar: return 1;
    case Valence::vector:
    case Valence::covector: return Dim;
    case Valence::sym2: return sym_count<Dim>;
    case Valence::christoffel:
    case Valence::dsym2: return Dim * sym_count<Dim>;
    case Valence::tensor4: return Dim * Dim * Dim * Dim;
  }
  return 0;
}

inline std::string to_string(Valence v) {
  switch (v) {
    case Valence::scalar: return "scalar";
    case Valence::vector: return "vector";
    case Valence::covector: return "covector";
    case Valence::sym2: return "sym2";
    case Valence::christoffel: return "christoffel";
    case Valence::dsym2: return "dsym2";
    case Valence::tensor4: return "tensor4";
  }
  return "unknown";
}

/// Dense field over the grid. Storage is one contiguous plane per component.
template <int Dim>
class Field {
 public:
  Field(const GridSpec<Dim>& grid, Valence valence, double fill = 0.0)
      : grid_(grid),
        valence_(valence),
        components_(component_count<Dim>(valence)),
        data_(static_cast<std::size_t>(components_) * grid.points(), fill) {}

  const GridSpec<Dim>& grid() const { return grid_; }
  Valence valence() const { return valence_; }
  int components() const { return components_; }
  std::size_t points() const { return grid_.points(); }

  double& operator()(std::size_t p, int c = 0) { return data_[c * grid_.points() + p]; }
  double operator()(std::size_t p, int c = 0) const { return data_[c * grid_.points() + p]; }

  std::span<double> plane(int c) { return {data_.data() + c * grid_.points(), grid_.points()}; }
  std::span<const double> plane(int c) const { return {data_.data() + c * grid_.points(), grid_.points()}; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  double min_value() const { return *std::min_element(data_.begin(), data_.end()); }
  double max_value() const { return *std::max_element(data_.begin(), data_.end()); }

  Field& operator+=(const Field& o) {
    check_compatible(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    check_compatible(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Field& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  /// this += a * x
  Field& axpy(double a, const Field& x) {
    check_compatible(x);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
    return *this;
  }

  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }
  friend Field operator*(double s, Field a) { return a *= s; }

  bool operator==(const Field& o) const {
    return grid_ == o.grid_ && valence_ == o.valence_ && data_ == o.data_;
  }

 private:
  void check_compatible(const Field& o) const {
    require(grid_.same_points(o.grid_) && valence_ == o.valence_, ErrorCode::invalid_argument,
            "field shapes differ");
  }

  GridSpec<Dim> grid_;
  Valence valence_;
  int components_;
  std::vector<double> data_;
};

template <int Dim>
using ScalarField = Field<Dim>;

/// Samples f(x) -> double on every grid point.
template <int Dim, class F>
Field<Dim> sample_scalar(const GridSpec<Dim>& grid, F&& f) {
  Field<Dim> out(grid, Valence::scalar);
  parallel_for(static_cast<std::int64_t>(grid.points()), [&](std::int64_t p) {
    out(static_cast<std::size_t>(p), 0) = f(grid.coordinate(static_cast<std::size_t>(p)));
  });
  return out;
}

/// Samples a symmetric matrix valued f(x) -> Mat<Dim> on every grid point.
template <int Dim, class F>
Field<Dim> sample_sym2(const GridSpec<Dim>& grid, F&& f) {
  Field<Dim> out(grid, Valence::sym2);
  constexpr auto pairs = sym_pairs<Dim>();
  parallel_for(static_cast<std::int64_t>(grid.points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    const Mat<Dim> m = f(grid.coordinate(p));
    for (int s = 0; s < sym_count<Dim>; ++s) out(p, s) = m[pairs[s].first][pairs[s].second];
  });
  return out;
}

template <int Dim>
Mat<Dim> sym_at(const Field<Dim>& f, std::size_t p) {
  Mat<Dim> m;
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) m[i][j] = f(p, sym_index<Dim>(i, j));
  return m;
}

template <int Dim>
void set_sym(Field<Dim>& f, std::size_t p, const std::type_identity_t<Mat<Dim>>& m) {
  for (int i = 0; i < Dim; ++i)
    for (int j = i; j < Dim; ++j) f(p, sym_index<Dim>(i, j)) = 0.5 * (m[i][j] + m[j][i]);
}

namespace stencil {

/// Central first-derivative weights for offsets -r..r (unscaled by 1/dx).
inline std::vector<double> first(int order) {
  if (order == 4) return {1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0};
  return {-0.5, 0.0, 0.5};
}

/// Central second-derivative weights for offsets -r..r (unscaled by 1/dx^2).
inline std::vector<double> second(int order) {
  if (order == 4) return {-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0};
  return {1.0, -2.0, 1.0};
}

/// out = sum_m scale * w[m] * in(shifted by m along axis), periodic.
/// Antisymmetric weights are applied to differences f(k+m) - f(k-m) and
/// zero-sum symmetric weights to f(k+m) + f(k-m) - 2 f(k), so constants map
/// to exactly zero.
template <int Dim>
void apply(const GridSpec<Dim>& grid, std::span<const double> in, std::span<double> out, int axis,
           const std::vector<double>& weights, double scale) {
  const int n = grid.resolution();
  const int r = static_cast<int>(weights.size() / 2);
  const std::size_t s = grid.stride(axis);
  const std::size_t block = s * static_cast<std::size_t>(n);
  const std::size_t blocks = grid.points() / block;
  std::vector<double> w(weights.size());
  for (std::size_t m = 0; m < weights.size(); ++m) w[m] = weights[m] * scale;
  bool odd = true, even = true;
  double total = 0.0;
  for (int m = 0; m <= r; ++m) {
    odd = odd && weights[r + m] == -weights[r - m];
    even = even && weights[r + m] == weights[r - m];
  }
  for (double v : weights) total += v;
  const int mode = odd ? 1 : (even && total == 0.0 ? 2 : 0);
  auto wrap = [n](int k) { return ((k % n) + n) % n; };

  auto combine = [&](auto&& at, int k) {
    double acc = 0.0;
    if (mode == 1) {
      for (int m = 1; m <= r; ++m) acc += w[r + m] * (at(k + m) - at(k - m));
    } else if (mode == 2) {
      const double c = at(k);
      for (int m = 1; m <= r; ++m) acc += w[r + m] * ((at(k + m) - c) + (at(k - m) - c));
    } else {
      for (int m = -r; m <= r; ++m) acc += w[m + r] * at(k + m);
    }
    return acc;
  };

  if (s == 1) {
    parallel_for(static_cast<std::int64_t>(blocks), [&](std::int64_t b) {
      const double* src = in.data() + b * block;
      double* dst = out.data() + b * block;
      for (int k = 0; k < n; ++k) {
        if (k >= r && k < n - r) {
          dst[k] = combine([src](int i) { return src[i]; }, k);
        } else {
          dst[k] = combine([&](int i) { return src[wrap(i)]; }, k);
        }
      }
    });
    return;
  }
  parallel_for(static_cast<std::int64_t>(blocks * n), [&](std::int64_t bk) {
    const std::size_t b = static_cast<std::size_t>(bk) / n;
    const int k = static_cast<int>(bk % n);
    const double* base = in.data() + b * block;
    double* dst = out.data() + b * block + static_cast<std::size_t>(k) * s;
    const double* c = base + static_cast<std::size_t>(k) * s;
    for (std::size_t i = 0; i < s; ++i) dst[i] = 0.0;
    if (mode == 0) {
      for (int m = -r; m <= r; ++m) {
        const double wm = w[m + r];
        if (wm == 0.0) continue;
        const double* src = base + static_cast<std::size_t>(wrap(k + m)) * s;
        for (std::size_t i = 0; i < s; ++i) dst[i] += wm * src[i];
      }
      return;
    }
    for (int m = 1; m <= r; ++m) {
      const double wm = w[r + m];
      const double* hi = base + static_cast<std::size_t>(wrap(k + m)) * s;
      const double* lo = base + static_cast<std::size_t>(wrap(k - m)) * s;
      if (mode == 1) {
        for (std::size_t i = 0; i < s; ++i) dst[i] += wm * (hi[i] - lo[i]);
      } else {
        for (std::size_t i = 0; i < s; ++i) dst[i] += wm * ((hi[i] - c[i]) + (lo[i] - c[i]));
      }
    }
  });
}

}  // namespace stencil

/// Componentwise central difference along one axis, periodic wrap.
template <int Dim>
Field<Dim> partial_derivative(const Field<Dim>& f, int axis) {
  require(axis >= 0 && axis < Dim, ErrorCode::invalid_argument, "axis out of range");
  const auto& grid = f.grid();
  Field<Dim> out(grid, f.valence());
  const auto w = stencil::first(grid.derivative_order());
  for (int c = 0; c < f.components(); ++c)
    stencil::apply(grid, f.plane(c), out.plane(c), axis, w, 1.0 / grid.spacing());
  return out;
}

/// Second partial d_a d_b. Pure derivatives use the compact stencil, mixed
/// derivatives the tensor product of first-derivative stencils.
template <int Dim>
Field<Dim> second_partial(const Field<Dim>& f, int a, int b) {
  require(a >= 0 && a < Dim && b >= 0 && b < Dim, ErrorCode::invalid_argument, "axis out of range");
  const auto& grid = f.grid();
  const double h = grid.spacing();
  Field<Dim> out(grid, f.valence());
  if (a == b) {
    const auto w = stencil::second(grid.derivative_order());
    for (int c = 0; c < f.components(); ++c) stencil::apply(grid, f.plane(c), out.plane(c), a, w, 1.0 / (h * h));
    return out;
  }
  const auto w = stencil::first(grid.derivative_order());
  std::vector<double> tmp(grid.points());
  for (int c = 0; c < f.components(); ++c) {
    stencil::apply(grid, f.plane(c), std::span<double>(tmp), a, w, 1.0 / h);
    stencil::apply(grid, std::span<const double>(tmp), out.plane(c), b, w, 1.0 / h);
  }
  return out;
}

/// Periodic trapezoid rule: sum f * density * dx^n.
template <int Dim>
double integrate(const Field<Dim>& f, const Field<Dim>& density) {
  require(f.components() == 1 && density.components() == 1, ErrorCode::invalid_argument,
          "integrate expects scalar fields");
  const std::size_t n = f.points();
  double acc = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    require(density(p) > 0.0, ErrorCode::invalid_argument, "density must be positive");
    acc += f(p) * density(p);
  }
  return acc * f.grid().cell_volume();
}

template <int Dim>
double integrate(const Field<Dim>& f) {
  double acc = 0.0;
  for (std::size_t p = 0; p < f.points(); ++p) acc += f(p);
  return acc * f.grid().cell_volume();
}

/// Multiplicity of a packed component in the flat (Euclidean) tensor norm.
template <int Dim>
double flat_component_weight(Valence v, int c) {
  constexpr auto pairs = sym_pairs<Dim>();
  switch (v) {
    case Valence::sym2: return pairs[c].first == pairs[c].second ? 1.0 : 2.0;
    case Valence::christoffel:
    case Valence::dsym2: {
      const auto& pr = pairs[c % sym_count<Dim>];
      return pr.first == pr.second ? 1.0 : 2.0;
    }
    default: return 1.0;
  }
}

/// Pointwise norm in the flat metric of the chart.
template <int Dim>
Field<Dim> flat_pointwise_norm(const Field<Dim>& f) {
  Field<Dim> out(f.grid(), Valence::scalar);
  std::vector<double> w(f.components());
  for (int c = 0; c < f.components(); ++c) w[c] = flat_component_weight<Dim>(f.valence(), c);
  parallel_for(static_cast<std::int64_t>(f.points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    double s = 0.0;
    for (int c = 0; c < f.components(); ++c) s += w[c] * f(p, c) * f(p, c);
    out(p, 0) = std::sqrt(s);
  });
  return out;
}

/// (integral |f|^p density)^{1/p} of a pointwise magnitude field; p = inf gives the max.
template <int Dim>
double lp_norm_of_magnitude(const Field<Dim>& magnitude, double p, const Field<Dim>& density) {
  require(p >= 1.0, ErrorCode::invalid_argument, "p must be at least 1");
  if (std::isinf(p)) return magnitude.max_abs();
  double acc = 0.0;
  for (std::size_t i = 0; i < magnitude.points(); ++i) acc += std::pow(std::abs(magnitude(i)), p) * density(i);
  acc *= magnitude.grid().cell_volume();
  return std::pow(acc, 1.0 / p);
}

/// L^p norm with the pointwise norm taken in the flat chart metric (the
/// default background). Tensor norms against a general metric live in geometry.hpp.
template <int Dim>
double lp_norm(const Field<Dim>& f, double p, const Field<Dim>& density) {
  if (f.components() == 1) {
    Field<Dim> mag = f;
    for (double& v : mag.values()) v = std::abs(v);
    return lp_norm_of_magnitude(mag, p, density);
  }
  return lp_norm_of_magnitude(flat_pointwise_norm(f), p, density);
}

template <int Dim>
Field<Dim> constant_scalar(const GridSpec<Dim>& grid, double value) {
  return Field<Dim>(grid, Valence::scalar, value);
}

/// Tensor-product smooth bump exp(-1/(1-(s/delta)^2)) per axis, truncated at
/// |s| = delta and normalized so the discrete taps sum to one.
template <int Dim>
class MollifierKernel {
 public:
  static MollifierKernel make(const GridSpec<Dim>& grid, double delta) {
    require(delta > 0.0, ErrorCode::invalid_argument, "kernel radius must be positive");
    require(delta < 0.25, ErrorCode::kernel_too_wide, "kernel radius must be below 1/4");
    MollifierKernel k(grid, delta);
    const double h = grid.spacing();
    const int r = static_cast<int>(std::floor(delta / h));
    k.taps_.assign(2 * r + 1, 0.0);
    double sum = 0.0;
    for (int m = -r; m <= r; ++m) {
      const double s = m * h / delta;
      const double v = (std::abs(s) < 1.0) ? std::exp(-1.0 / (1.0 - s * s)) : 0.0;
      k.taps_[m + r] = v;
      sum += v;
    }
    for (double& v : k.taps_) v /= sum;
    return k;
  }

  double radius() const { return delta_; }
  int half_width() const { return static_cast<int>(taps_.size() / 2); }
  const std::vector<double>& taps() const { return taps_; }
  const GridSpec<Dim>& grid() const { return grid_; }

  /// The kernel as a density centred at the origin (wrapped), with
  /// sum(samples) * dx^n = 1.
  Field<Dim> samples() const {
    Field<Dim> out(grid_, Valence::scalar);
    const int r = half_width();
    const double inv_vol = 1.0 / grid_.cell_volume();
    for (std::size_t p = 0; p < grid_.points(); ++p) {
      const auto idx = grid_.index_of(p);
      double v = inv_vol;
      for (int a = 0; a < Dim; ++a) {
        int off = idx[a] > grid_.resolution() / 2 ? idx[a] - grid_.resolution() : idx[a];
        if (std::abs(off) > r) {
          v = 0.0;
          break;
        }
        v *= taps_[off + r];
      }
      out(p, 0) = v;
    }
    return out;
  }

 private:
  MollifierKernel(const GridSpec<Dim>& grid, double delta) : grid_(grid), delta_(delta) {}

  GridSpec<Dim> grid_;
  double delta_;
  std::vector<double> taps_;
};

/// Componentwise periodic convolution with a tensor-product kernel.
template <int Dim>
Field<Dim> convolve(const Field<Dim>& f, const MollifierKernel<Dim>& kernel) {
  require(kernel.radius() < 0.25, ErrorCode::kernel_too_wide, "kernel radius must be below 1/4");
  require(kernel.grid().same_points(f.grid()), ErrorCode::invalid_argument, "kernel built for another grid");
  const auto& grid = f.grid();
  Field<Dim> out = f;
  std::vector<double> tmp(grid.points());
  for (int c = 0; c < f.components(); ++c) {
    for (int a = 0; a < Dim; ++a) {
      stencil::apply(grid, std::span<const double>(out.plane(c)), std::span<double>(tmp), a, kernel.taps(), 1.0);
      std::copy(tmp.begin(), tmp.end(), out.plane(c).begin());
    }
  }
  return out;
}

}  // namespace roughflow
