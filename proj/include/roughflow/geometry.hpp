#pragma once

// Tensor calculus on the torus chart: background metrics, difference
// Christoffel symbols, the vector field V and scalar F whose combination
// div V + F is scalar curvature, the distributional pairing, and classical
// curvature of smooth metrics.

#include <array>
#include <cmath>
#include <sstream>
#include <iomanip>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "roughflow/analytic.hpp"
#include "roughflow/error.hpp"
#include "roughflow/grid.hpp"
#include "roughflow/parallel.hpp"
#include "roughflow/tensor.hpp"

namespace roughflow {

/// d[k][i][j]: one first-derivative-like quantity per direction k.
template <int Dim>
using Rank3 = std::array<Mat<Dim>, Dim>;

inline constexpr double inversion_condition_limit = 1e12;

namespace detail {

template <int Dim>
Mat<Dim> invert_or_throw(const Mat<Dim>& m) {
  Mat<Dim> inv;
  if (!invert_spd<Dim>(m, inv, inversion_condition_limit))
    fail(ErrorCode::singular_metric, "pointwise metric inversion failed");
  return inv;
}

template <int Dim>
Rank3<Dim> rank3_at(const Field<Dim>& f, std::size_t p) {
  constexpr int S = sym_count<Dim>;
  Rank3<Dim> r;
  for (int k = 0; k < Dim; ++k)
    for (int i = 0; i < Dim; ++i)
      for (int j = 0; j < Dim; ++j) r[k][i][j] = f(p, k * S + sym_index<Dim>(i, j));
  return r;
}

template <int Dim>
void set_rank3(Field<Dim>& f, std::size_t p, const std::type_identity_t<Rank3<Dim>>& r) {
  constexpr int S = sym_count<Dim>;
  for (int k = 0; k < Dim; ++k)
    for (int i = 0; i < Dim; ++i)
      for (int j = i; j < Dim; ++j) f(p, k * S + sym_index<Dim>(i, j)) = r[k][i][j];
}

/// Gamma^k_ij = 1/2 g^{kl} (D_i g_jl + D_j g_il - D_l g_ij) for any derivative D.
template <int Dim>
Rank3<Dim> christoffel_from(const Mat<Dim>& ginv, const Rank3<Dim>& d) {
  Rank3<Dim> out{};
  for (int i = 0; i < Dim; ++i)
    for (int j = i; j < Dim; ++j) {
      Vec<Dim> lower;
      for (int l = 0; l < Dim; ++l) lower[l] = 0.5 * (d[i][j][l] + d[j][i][l] - d[l][i][j]);
      for (int k = 0; k < Dim; ++k) {
        double s = 0.0;
        for (int l = 0; l < Dim; ++l) s += ginv[k][l] * lower[l];
        out[k][i][j] = out[k][j][i] = s;
      }
    }
  return out;
}

/// Covariant derivative of a symmetric 2-tensor from partials and background symbols.
template <int Dim>
Rank3<Dim> covariant_from(const Mat<Dim>& g, const Rank3<Dim>& dg, const Rank3<Dim>& gamma_bg) {
  Rank3<Dim> out = dg;
  for (int k = 0; k < Dim; ++k)
    for (int i = 0; i < Dim; ++i)
      for (int j = i; j < Dim; ++j) {
        double s = 0.0;
        for (int l = 0; l < Dim; ++l) s += gamma_bg[l][k][i] * g[l][j] + gamma_bg[l][k][j] * g[i][l];
        out[k][i][j] -= s;
        out[k][j][i] = out[k][i][j];
      }
  return out;
}

/// Lowered Riemann tensor of a metric in dimension <= 3 from its Ricci tensor
/// (sign convention: R_iklm = K (g_il g_km - g_im g_kl) for constant curvature K).
template <int Dim>
std::array<double, Dim * Dim * Dim * Dim> riemann_from_ricci(const Mat<Dim>& g, const Mat<Dim>& ric, double scalar) {
  std::array<double, Dim * Dim * Dim * Dim> r{};
  Mat<Dim> pm;
  for (int a = 0; a < Dim; ++a)
    for (int b = 0; b < Dim; ++b) pm[a][b] = Dim == 3 ? ric[a][b] - 0.25 * scalar * g[a][b] : 0.25 * scalar * g[a][b];
  for (int i = 0; i < Dim; ++i)
    for (int k = 0; k < Dim; ++k)
      for (int l = 0; l < Dim; ++l)
        for (int m = 0; m < Dim; ++m)
          r[((i * Dim + k) * Dim + l) * Dim + m] =
              g[i][l] * pm[k][m] + g[k][m] * pm[i][l] - g[i][m] * pm[k][l] - g[k][l] * pm[i][m];
  return r;
}

/// Lower-index contraction A^{..} with metric inverse: |T|^2 for a symmetric 2-tensor.
template <int Dim>
double sym2_norm_sq(const Mat<Dim>& minv, const Mat<Dim>& t) {
  double s = 0.0;
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) {
      double row = 0.0;
      for (int a = 0; a < Dim; ++a)
        for (int b = 0; b < Dim; ++b) row += minv[i][a] * minv[j][b] * t[a][b];
      s += row * t[i][j];
    }
  return s;
}

template <int Dim>
double trace_with(const Mat<Dim>& minv, const Mat<Dim>& t) {
  double s = 0.0;
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) s += minv[i][j] * t[i][j];
  return s;
}

}  // namespace detail

/// Smooth reference metric h with its Christoffel symbols, their first
/// derivatives and its Ricci tensor, all sampled from closed forms. Either
/// the flat metric or a conformally flat metric e^{2w} delta.
template <int Dim>
class BackgroundMetric {
 public:
  static BackgroundMetric flat(const GridSpec<Dim>& grid) {
    BackgroundMetric b(grid, "flat", TrigSeries<Dim>{}, true);
    b.build();
    return b;
  }

  static BackgroundMetric conformal(const GridSpec<Dim>& grid, TrigSeries<Dim> w, std::string id = "conformal") {
    BackgroundMetric b(grid, std::move(id), std::move(w), false);
    b.build();
    return b;
  }

  /// Same analytic background sampled on another grid.
  BackgroundMetric on(const GridSpec<Dim>& grid) const {
    BackgroundMetric b(grid, id_, w_, flat_);
    b.build();
    return b;
  }

  const std::string& id() const { return id_; }
  bool is_flat() const { return flat_; }
  const GridSpec<Dim>& grid() const { return grid_; }
  const TrigSeries<Dim>& conformal_factor() const { return w_; }
  const Field<Dim>& h() const { return h_; }
  const Field<Dim>& h_inverse() const { return h_inv_; }
  const Field<Dim>& sqrt_det() const { return sqrt_det_; }
  /// Christoffel symbols of the sampled h under the same difference stencil
  /// used for metrics, so that grad~ h vanishes to round-off.
  const Field<Dim>& christoffel() const { return gamma_; }
  /// Closed-form Christoffel symbols of h.
  const Field<Dim>& christoffel_analytic() const { return gamma_exact_; }
  /// d_a Gamma~^k_ij stored in component a * (Dim * S) + k * S + sym(i, j).
  const Field<Dim>& christoffel_derivative() const { return dgamma_; }
  const Field<Dim>& ricci() const { return ricci_; }
  const Field<Dim>& scalar() const { return scalar_; }
  /// k_j = sup |grad~^j Rm(h)| for j = 0..3. k_0 is evaluated from closed forms;
  /// k_1..k_3 are measured as sup of flat-chart norms of j-fold partials of Ric(h),
  /// which determines Rm(h) in dimension <= 3.
  const std::array<double, 4>& curvature_bounds() const { return bounds_; }
  std::pair<double, double> ellipticity() const { return ellipticity_; }

  Mat<Dim> h_at(std::size_t p) const { return sym_at(h_, p); }
  Mat<Dim> h_inv_at(std::size_t p) const { return sym_at(h_inv_, p); }
  Rank3<Dim> christoffel_at(std::size_t p) const { return detail::rank3_at(gamma_, p); }

 private:
  BackgroundMetric(const GridSpec<Dim>& grid, std::string id, TrigSeries<Dim> w, bool flat)
      : grid_(grid),
        id_(std::move(id)),
        w_(std::move(w)),
        flat_(flat),
        h_(grid, Valence::sym2),
        h_inv_(grid, Valence::sym2),
        sqrt_det_(grid, Valence::scalar),
        gamma_(grid, Valence::christoffel),
        gamma_exact_(grid, Valence::christoffel),
        dgamma_(grid, Valence::tensor4),
        ricci_(grid, Valence::sym2),
        scalar_(grid, Valence::scalar) {
    static_assert(Dim * Dim * Dim * Dim >= Dim * Dim * sym_count<Dim>);
  }

  void build() {
    constexpr int S = sym_count<Dim>;
    double lo = INFINITY, hi = 0.0, k0 = 0.0;
    for (std::size_t p = 0; p < grid_.points(); ++p) {
      const auto x = grid_.coordinate(p);
      const double w = flat_ ? 0.0 : w_.value(x);
      const Vec<Dim> dw = flat_ ? Vec<Dim>{} : w_.gradient(x);
      const Mat<Dim> hw = flat_ ? Mat<Dim>{} : w_.hessian(x);
      const double e = std::exp(2.0 * w);
      lo = std::min(lo, e);
      hi = std::max(hi, e);
      double grad2 = 0.0, lap = 0.0;
      for (int a = 0; a < Dim; ++a) {
        grad2 += dw[a] * dw[a];
        lap += hw[a][a];
      }
      Mat<Dim> h{}, hinv{}, ric{};
      for (int i = 0; i < Dim; ++i) {
        h[i][i] = e;
        hinv[i][i] = 1.0 / e;
      }
      for (int i = 0; i < Dim; ++i)
        for (int j = 0; j < Dim; ++j)
          ric[i][j] = -(Dim - 2) * (hw[i][j] - dw[i] * dw[j]) - (i == j ? lap + (Dim - 2) * grad2 : 0.0);
      set_sym(h_, p, h);
      set_sym(h_inv_, p, hinv);
      set_sym(ricci_, p, ric);
      sqrt_det_(p) = std::pow(e, 0.5 * Dim);
      const double r = detail::trace_with<Dim>(hinv, ric);
      scalar_(p) = r;
      k0 = std::max(k0, std::sqrt(std::max(0.0, 4.0 * detail::sym2_norm_sq<Dim>(hinv, ric) - r * r)));
      for (int k = 0; k < Dim; ++k)
        for (int i = 0; i < Dim; ++i)
          for (int j = i; j < Dim; ++j) {
            gamma_exact_(p, k * S + sym_index<Dim>(i, j)) =
                (k == i ? dw[j] : 0.0) + (k == j ? dw[i] : 0.0) - (i == j ? dw[k] : 0.0);
            for (int a = 0; a < Dim; ++a)
              dgamma_(p, a * Dim * S + k * S + sym_index<Dim>(i, j)) =
                  (k == i ? hw[j][a] : 0.0) + (k == j ? hw[i][a] : 0.0) - (i == j ? hw[k][a] : 0.0);
          }
    }
    ellipticity_ = {lo, hi};
    if (!flat_) {
      const auto dh = metric_partials_of(h_);
      for (std::size_t p = 0; p < grid_.points(); ++p)
        detail::set_rank3(gamma_, p, detail::christoffel_from<Dim>(sym_at(h_inv_, p), detail::rank3_at(dh, p)));
    }
    bounds_ = {k0, 0.0, 0.0, 0.0};
    if (!flat_) {
      std::vector<Field<Dim>> level{ricci_};
      for (int j = 1; j <= 3; ++j) {
        std::vector<Field<Dim>> next;
        double m = 0.0;
        for (const auto& f : level)
          for (int a = 0; a < Dim; ++a) {
            next.push_back(partial_derivative(f, a));
            m = std::max(m, next.back().max_abs());
          }
        bounds_[j] = m;
        level = std::move(next);
      }
    }
  }

  GridSpec<Dim> grid_;
  std::string id_;
  TrigSeries<Dim> w_;
  bool flat_;
  static Field<Dim> metric_partials_of(const Field<Dim>& g) {
    constexpr int S = sym_count<Dim>;
    Field<Dim> out(g.grid(), Valence::dsym2);
    const auto w = stencil::first(g.grid().derivative_order());
    for (int k = 0; k < Dim; ++k)
      for (int s = 0; s < S; ++s) stencil::apply(g.grid(), g.plane(s), out.plane(k * S + s), k, w, 1.0 / g.grid().spacing());
    return out;
  }

  Field<Dim> h_, h_inv_, sqrt_det_, gamma_, gamma_exact_, dgamma_, ricci_, scalar_;
  std::array<double, 4> bounds_{};
  std::pair<double, double> ellipticity_{1.0, 1.0};
};

/// A sampled symmetric positive-definite metric with measured ellipticity bounds.
template <int Dim>
class MetricField {
 public:
  explicit MetricField(Field<Dim> g) : g_(std::move(g)) {
    require(g_.valence() == Valence::sym2, ErrorCode::invalid_argument, "metric must be a sym2 field");
    require(g_.all_finite(), ErrorCode::singular_metric, "metric has non-finite entries");
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t p = 0; p < g_.points(); ++p) {
      const auto e = sym_eigenvalues<Dim>(sym_at(g_, p));
      lo = std::min(lo, e.front());
      hi = std::max(hi, e.back());
    }
    require(lo > 0.0, ErrorCode::singular_metric, "metric is not positive definite");
    lambda_ = {lo, hi};
  }

  template <class F>
  static MetricField sample(const GridSpec<Dim>& grid, F&& f) {
    return MetricField(sample_sym2(grid, std::forward<F>(f)));
  }

  /// e^{2u} delta for a scalar field u.
  static MetricField conformal(const Field<Dim>& u) {
    Field<Dim> g(u.grid(), Valence::sym2);
    for (std::size_t p = 0; p < u.points(); ++p) {
      const double e = std::exp(2.0 * u(p));
      for (int i = 0; i < Dim; ++i) g(p, sym_index<Dim>(i, i)) = e;
    }
    return MetricField(std::move(g));
  }

  static MetricField identity(const GridSpec<Dim>& grid, double scale = 1.0) {
    Field<Dim> g(grid, Valence::sym2);
    for (std::size_t p = 0; p < grid.points(); ++p)
      for (int i = 0; i < Dim; ++i) g(p, sym_index<Dim>(i, i)) = scale;
    return MetricField(std::move(g));
  }

  const Field<Dim>& field() const { return g_; }
  const GridSpec<Dim>& grid() const { return g_.grid(); }
  double lambda_min() const { return lambda_.first; }
  double lambda_max() const { return lambda_.second; }
  std::pair<double, double> ellipticity() const { return lambda_; }
  Mat<Dim> at(std::size_t p) const { return sym_at(g_, p); }

  /// Smallest eps with (1+eps)^{-1} h <= g <= (1+eps) h at every point.
  double fairness(const BackgroundMetric<Dim>& bg) const {
    double eps = 0.0;
    for (std::size_t p = 0; p < g_.points(); ++p) {
      const auto [lo, hi] = relative_eigen_range<Dim>(at(p), bg.h_at(p));
      require(lo > 0.0, ErrorCode::singular_metric, "metric is not positive definite relative to background");
      eps = std::max({eps, hi - 1.0, 1.0 / lo - 1.0});
    }
    return eps;
  }

 private:
  Field<Dim> g_;
  std::pair<double, double> lambda_;
};

/// d_k g_ij by central differences (dsym2 valence).
template <int Dim>
Field<Dim> metric_partials(const Field<Dim>& g) {
  constexpr int S = sym_count<Dim>;
  const auto& grid = g.grid();
  Field<Dim> out(grid, Valence::dsym2);
  const auto w = stencil::first(grid.derivative_order());
  for (int k = 0; k < Dim; ++k)
    for (int s = 0; s < S; ++s) stencil::apply(grid, g.plane(s), out.plane(k * S + s), k, w, 1.0 / grid.spacing());
  return out;
}

/// grad~_k g_ij = d_k g_ij - Gamma~^l_ki g_lj - Gamma~^l_kj g_il.
template <int Dim>
Field<Dim> covariant_derivative(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  Field<Dim> dg = metric_partials(g.field());
  if (bg.is_flat()) return dg;
  parallel_for(static_cast<std::int64_t>(g.grid().points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    detail::set_rank3(dg, p, detail::covariant_from<Dim>(g.at(p), detail::rank3_at(dg, p), bg.christoffel_at(p)));
  });
  return dg;
}

/// Gamma^k_ij = 1/2 g^{kl}(grad~_i g_jl + grad~_j g_il - grad~_l g_ij).
template <int Dim>
Field<Dim> difference_christoffel(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  const auto cov = covariant_derivative(g, bg);
  Field<Dim> out(g.grid(), Valence::christoffel);
  parallel_for(static_cast<std::int64_t>(g.grid().points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    const auto ginv = detail::invert_or_throw<Dim>(g.at(p));
    detail::set_rank3(out, p, detail::christoffel_from<Dim>(ginv, detail::rank3_at(cov, p)));
  });
  return out;
}

namespace detail {

/// Both expressions for V^k. First: g^{ij} G^k_ij - g^{ik} G^j_ji.
/// Second: g^{ij} g^{kl} (grad~_j g_il - grad~_l g_ij).
template <int Dim>
std::pair<Vec<Dim>, Vec<Dim>> pairing_vector_forms(const Mat<Dim>& ginv, const Rank3<Dim>& cov, const Rank3<Dim>& gam) {
  Vec<Dim> a{}, b{};
  Vec<Dim> trace{};
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) trace[i] += gam[j][j][i];
  for (int k = 0; k < Dim; ++k) {
    double s = 0.0, t = 0.0;
    for (int i = 0; i < Dim; ++i) {
      t += ginv[i][k] * trace[i];
      for (int j = 0; j < Dim; ++j) s += ginv[i][j] * gam[k][i][j];
    }
    a[k] = s - t;
  }
  for (int k = 0; k < Dim; ++k) {
    double s = 0.0;
    for (int l = 0; l < Dim; ++l) {
      double inner = 0.0;
      for (int i = 0; i < Dim; ++i)
        for (int j = 0; j < Dim; ++j) inner += ginv[i][j] * (cov[j][i][l] - cov[l][i][j]);
      s += ginv[k][l] * inner;
    }
    b[k] = s;
  }
  return {a, b};
}

template <int Dim>
double max_abs_entry(const Rank3<Dim>& r) {
  double m = 0.0;
  for (const auto& mat : r)
    for (const auto& row : mat)
      for (double v : row) m = std::max(m, std::abs(v));
  return m;
}

struct FTerms {
  double trace_ricci = 0.0;
  double grad_inverse_gamma = 0.0;
  double grad_inverse_trace = 0.0;
  double gamma_gamma = 0.0;
  double total() const { return trace_ricci + grad_inverse_gamma + grad_inverse_trace + gamma_gamma; }
};

/// F = tr_g Ric~ - (grad~_k g^{ij}) G^k_ij + (grad~_k g^{ik}) G^j_ji
///     + g^{ij} (G^k_kl G^l_ij - G^k_jl G^l_ik),
/// with grad~_k g^{ij} = -g^{ia} g^{jb} grad~_k g_ab.
template <int Dim>
FTerms f_terms(const Mat<Dim>& ginv, const Mat<Dim>& ric_bg, const Rank3<Dim>& cov, const Rank3<Dim>& gam) {
  FTerms t;
  t.trace_ricci = trace_with<Dim>(ginv, ric_bg);
  Rank3<Dim> dinv{};  // dinv[k][i][j] = grad~_k g^{ij}
  for (int k = 0; k < Dim; ++k)
    for (int i = 0; i < Dim; ++i)
      for (int j = i; j < Dim; ++j) {
        double s = 0.0;
        for (int a = 0; a < Dim; ++a)
          for (int b = 0; b < Dim; ++b) s += ginv[i][a] * ginv[j][b] * cov[k][a][b];
        dinv[k][i][j] = dinv[k][j][i] = -s;
      }
  Vec<Dim> trace{};  // G^j_ji
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) trace[i] += gam[j][j][i];
  double t2 = 0.0, t3 = 0.0, t4 = 0.0;
  for (int k = 0; k < Dim; ++k)
    for (int i = 0; i < Dim; ++i) {
      t3 += dinv[k][i][k] * trace[i];
      for (int j = 0; j < Dim; ++j) t2 += dinv[k][i][j] * gam[k][i][j];
    }
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) {
      double s = 0.0;
      for (int l = 0; l < Dim; ++l) {
        s += trace[l] * gam[l][i][j];
        for (int k = 0; k < Dim; ++k) s -= gam[k][j][l] * gam[l][i][k];
      }
      t4 += ginv[i][j] * s;
    }
  t.grad_inverse_gamma = -t2;
  t.grad_inverse_trace = t3;
  t.gamma_gamma = t4;
  return t;
}

}  // namespace detail

/// V^k evaluated by the contracted form, with the Christoffel form checked
/// against it at every point.
template <int Dim>
Field<Dim> pairing_vector_V(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  const auto cov = covariant_derivative(g, bg);
  Field<Dim> out(g.grid(), Valence::vector);
  parallel_for(static_cast<std::int64_t>(g.grid().points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    const auto ginv = detail::invert_or_throw<Dim>(g.at(p));
    const auto c = detail::rank3_at(cov, p);
    const auto gam = detail::christoffel_from<Dim>(ginv, c);
    const auto [a, b] = detail::pairing_vector_forms<Dim>(ginv, c, gam);
    double scale = 1e-300;
    for (const auto& row : ginv)
      for (double v : row) scale = std::max(scale, std::abs(v));
    scale = scale * scale * detail::max_abs_entry<Dim>(c);
    for (int k = 0; k < Dim; ++k) {
      if (std::abs(a[k] - b[k]) > 1e-10 * scale + 1e-300)
        throw std::logic_error("the two expressions for V disagree");
      out(p, k) = b[k];
    }
  });
  return out;
}

/// F with its four terms kept separately.
template <int Dim>
struct FBreakdown {
  Field<Dim> total, trace_ricci, grad_inverse_gamma, grad_inverse_trace, gamma_gamma;

  std::string to_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    for (int a = 0; a < Dim; ++a) out << 'x' << a << ',';
    out << "total,trace_ricci,grad_inverse_gamma,grad_inverse_trace,gamma_gamma\n";
    for (std::size_t p = 0; p < total.points(); ++p) {
      const auto x = total.grid().coordinate(p);
      for (int a = 0; a < Dim; ++a) out << x[a] << ',';
      out << total(p) << ',' << trace_ricci(p) << ',' << grad_inverse_gamma(p) << ',' << grad_inverse_trace(p) << ','
          << gamma_gamma(p) << '\n';
    }
    return out.str();
  }
};

template <int Dim>
FBreakdown<Dim> scalar_F_breakdown(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  const auto cov = covariant_derivative(g, bg);
  const auto& grid = g.grid();
  FBreakdown<Dim> out{Field<Dim>(grid, Valence::scalar), Field<Dim>(grid, Valence::scalar),
                      Field<Dim>(grid, Valence::scalar), Field<Dim>(grid, Valence::scalar),
                      Field<Dim>(grid, Valence::scalar)};
  parallel_for(static_cast<std::int64_t>(grid.points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    const auto ginv = detail::invert_or_throw<Dim>(g.at(p));
    const auto c = detail::rank3_at(cov, p);
    const auto gam = detail::christoffel_from<Dim>(ginv, c);
    const auto t = detail::f_terms<Dim>(ginv, sym_at(bg.ricci(), p), c, gam);
    out.total(p) = t.total();
    out.trace_ricci(p) = t.trace_ricci;
    out.grad_inverse_gamma(p) = t.grad_inverse_gamma;
    out.grad_inverse_trace(p) = t.grad_inverse_trace;
    out.gamma_gamma(p) = t.gamma_gamma;
  });
  return out;
}

template <int Dim>
Field<Dim> scalar_F(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  return scalar_F_breakdown(g, bg).total;
}

/// dmu_g / dmu_h = sqrt(det g / det h).
template <int Dim>
Field<Dim> density_ratio(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  Field<Dim> out(g.grid(), Valence::scalar);
  parallel_for(static_cast<std::int64_t>(g.grid().points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    out(p) = std::sqrt(determinant<Dim>(g.at(p)) / determinant<Dim>(bg.h_at(p)));
  });
  return out;
}

/// sqrt(det g) in the chart, the density of dmu_g against dx.
template <int Dim>
Field<Dim> volume_density(const Field<Dim>& g) {
  Field<Dim> out(g.grid(), Valence::scalar);
  parallel_for(static_cast<std::int64_t>(g.points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    out(p) = std::sqrt(determinant<Dim>(sym_at(g, p)));
  });
  return out;
}

template <int Dim>
Field<Dim> volume_density(const MetricField<Dim>& g) {
  return volume_density(g.field());
}

struct PairingReport {
  double value = 0.0;
  double v_part = 0.0;
  double f_part = 0.0;
  std::string test_function_id;
  std::string background_id;
  int dimension = 0;
  int resolution = 0;
  int derivative_order = 0;
};

inline void to_json(nlohmann::json& j, const PairingReport& r) {
  j = nlohmann::json{{"value", r.value},
                     {"v_part", r.v_part},
                     {"f_part", r.f_part},
                     {"test_function_id", r.test_function_id},
                     {"background_id", r.background_id},
                     {"grid", {{"dimension", r.dimension}, {"resolution", r.resolution}, {"derivative_order", r.derivative_order}}}};
}

/// <R_g, phi> = sum(-V^k D_k(phi rho) + F phi rho) dmu_h with rho = dmu_g/dmu_h.
/// D_k differences the product phi * rho directly.
template <int Dim>
PairingReport distributional_pairing(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg, const Field<Dim>& phi,
                                     std::string test_function_id = "custom") {
  require(bg.grid().same_points(g.grid()) && phi.grid().same_points(g.grid()), ErrorCode::invalid_argument,
          "metric, background and test function must share a grid");
  const auto v = pairing_vector_V(g, bg);
  const auto f = scalar_F(g, bg);
  const auto rho = density_ratio(g, bg);
  Field<Dim> q(g.grid(), Valence::scalar);
  for (std::size_t p = 0; p < q.points(); ++p) q(p) = phi(p) * rho(p);
  std::vector<Field<Dim>> dq;
  for (int k = 0; k < Dim; ++k) dq.push_back(partial_derivative(q, k));
  double vs = 0.0, fs = 0.0;
  const auto& sh = bg.sqrt_det();
  for (std::size_t p = 0; p < q.points(); ++p) {
    double dot = 0.0;
    for (int k = 0; k < Dim; ++k) dot += v(p, k) * dq[k](p);
    vs -= dot * sh(p);
    fs += f(p) * q(p) * sh(p);
  }
  const double vol = g.grid().cell_volume();
  PairingReport r;
  r.v_part = vs * vol;
  r.f_part = fs * vol;
  r.value = r.v_part + r.f_part;
  r.test_function_id = std::move(test_function_id);
  r.background_id = bg.id();
  r.dimension = Dim;
  r.resolution = g.grid().resolution();
  r.derivative_order = g.grid().derivative_order();
  return r;
}

/// Classical curvature of a smooth metric in the chart.
template <int Dim>
struct Curvature {
  Field<Dim> riemann;  // R_iklm, all indices down
  Field<Dim> ricci;
  Field<Dim> scalar;
};

namespace detail {

/// Second partials d_a d_b g_ij for a <= b, indexed [sym(a, b)][sym(i, j)] per point.
template <int Dim>
std::vector<Field<Dim>> metric_second_partials(const Field<Dim>& g) {
  std::vector<Field<Dim>> out;
  constexpr auto pairs = sym_pairs<Dim>();
  for (const auto& [a, b] : pairs) out.push_back(second_partial(g, a, b));
  return out;
}

/// R_iklm = 1/2 (g_im,kl + g_kl,im - g_il,km - g_km,il) + g_np (G^n_kl G^p_im - G^n_km G^p_il)
template <int Dim>
std::array<double, Dim * Dim * Dim * Dim> riemann_at(const Mat<Dim>& g, const Mat<Dim>& ginv, const Rank3<Dim>& dg,
                                                      const std::array<Mat<Dim>, sym_count<Dim>>& ddg) {
  // ddg[sym(a, b)][i][j] = d_a d_b g_ij
  const auto gam = christoffel_from<Dim>(ginv, dg);
  Rank3<Dim> first{};  // first[p][i][m] = g_pn G^n_im
  for (int q = 0; q < Dim; ++q)
    for (int i = 0; i < Dim; ++i)
      for (int m = 0; m < Dim; ++m) {
        double s = 0.0;
        for (int n = 0; n < Dim; ++n) s += g[q][n] * gam[n][i][m];
        first[q][i][m] = s;
      }
  auto dd = [&](int a, int b, int i, int j) { return ddg[sym_index<Dim>(a, b)][i][j]; };
  std::array<double, Dim * Dim * Dim * Dim> r{};
  for (int i = 0; i < Dim; ++i)
    for (int k = 0; k < Dim; ++k)
      for (int l = 0; l < Dim; ++l)
        for (int m = 0; m < Dim; ++m) {
          double v = 0.5 * (dd(k, l, i, m) + dd(i, m, k, l) - dd(k, m, i, l) - dd(i, l, k, m));
          for (int q = 0; q < Dim; ++q) v += first[q][k][l] * gam[q][i][m] - first[q][k][m] * gam[q][i][l];
          r[((i * Dim + k) * Dim + l) * Dim + m] = v;
        }
  return r;
}

template <int Dim>
std::array<Mat<Dim>, sym_count<Dim>> second_partials_at(const std::vector<Field<Dim>>& ddg, std::size_t p) {
  std::array<Mat<Dim>, sym_count<Dim>> out;
  for (int s = 0; s < sym_count<Dim>; ++s) out[s] = sym_at(ddg[s], p);
  return out;
}

}  // namespace detail

template <int Dim>
Curvature<Dim> classical_curvature(const MetricField<Dim>& g) {
  const auto& grid = g.grid();
  const auto dg = metric_partials(g.field());
  const auto ddg = detail::metric_second_partials(g.field());
  Curvature<Dim> out{Field<Dim>(grid, Valence::tensor4), Field<Dim>(grid, Valence::sym2),
                     Field<Dim>(grid, Valence::scalar)};
  constexpr int N4 = Dim * Dim * Dim * Dim;
  parallel_for(static_cast<std::int64_t>(grid.points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    const auto gm = g.at(p);
    const auto ginv = detail::invert_or_throw<Dim>(gm);
    const auto rm = detail::riemann_at<Dim>(gm, ginv, detail::rank3_at(dg, p), detail::second_partials_at(ddg, p));
    for (int c = 0; c < N4; ++c) out.riemann(p, c) = rm[c];
    Mat<Dim> ric{};
    for (int k = 0; k < Dim; ++k)
      for (int m = 0; m < Dim; ++m) {
        double s = 0.0;
        for (int i = 0; i < Dim; ++i)
          for (int l = 0; l < Dim; ++l) s += ginv[i][l] * rm[((i * Dim + k) * Dim + l) * Dim + m];
        ric[k][m] = s;
      }
    const double r = detail::trace_with<Dim>(ginv, ric);
    set_sym(out.ricci, p, ric);
    out.scalar(p) = r;
    if constexpr (Dim == 2) {
      double scale = std::abs(r) + 1e-300;
      for (int k = 0; k < 2; ++k)
        for (int m = 0; m < 2; ++m)
          if (std::abs(ric[k][m] - 0.5 * r * gm[k][m]) > 1e-8 * scale * (std::abs(gm[k][m]) + 1.0) + 1e-12)
            throw std::logic_error("two-dimensional Ricci is not (R/2) g");
    }
  });
  return out;
}

/// Pointwise norm of a tensor with every index raised or lowered by the
/// given metric (a sym2 field).
template <int Dim>
Field<Dim> tensor_norm(const Field<Dim>& t, const Field<Dim>& metric) {
  require(metric.valence() == Valence::sym2, ErrorCode::invalid_argument, "norm metric must be sym2");
  require(t.grid().same_points(metric.grid()), ErrorCode::invalid_argument, "grids differ");
  Field<Dim> out(t.grid(), Valence::scalar);
  const Valence v = t.valence();
  parallel_for(static_cast<std::int64_t>(t.points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    const auto m = sym_at(metric, p);
    const auto minv = detail::invert_or_throw<Dim>(m);
    double s = 0.0;
    switch (v) {
      case Valence::scalar: s = t(p) * t(p); break;
      case Valence::vector:
      case Valence::covector: {
        const auto& w = v == Valence::vector ? m : minv;
        for (int a = 0; a < Dim; ++a)
          for (int b = 0; b < Dim; ++b) s += w[a][b] * t(p, a) * t(p, b);
        break;
      }
      case Valence::sym2: s = detail::sym2_norm_sq<Dim>(minv, sym_at(t, p)); break;
      case Valence::dsym2:
      case Valence::christoffel: {
        const auto r = detail::rank3_at(t, p);
        const auto& w = v == Valence::dsym2 ? minv : m;
        for (int k = 0; k < Dim; ++k)
          for (int c = 0; c < Dim; ++c) {
            if (w[k][c] == 0.0) continue;
            double inner = 0.0;
            for (int i = 0; i < Dim; ++i)
              for (int j = 0; j < Dim; ++j) {
                double row = 0.0;
                for (int a = 0; a < Dim; ++a)
                  for (int b = 0; b < Dim; ++b) row += minv[i][a] * minv[j][b] * r[c][a][b];
                inner += row * r[k][i][j];
              }
            s += w[k][c] * inner;
          }
        break;
      }
      case Valence::tensor4: {
        constexpr int n = Dim;
        // raise all four indices one at a time
        std::array<double, n * n * n * n> a{}, b{};
        for (int c = 0; c < n * n * n * n; ++c) a[c] = t(p, c);
        b = a;
        for (int slot = 0; slot < 4; ++slot) {
          std::array<double, n * n * n * n> next{};
          int stride = 1;
          for (int q = 3; q > slot; --q) stride *= n;
          for (int c = 0; c < n * n * n * n; ++c) {
            const int idx = (c / stride) % n;
            const int base = c - idx * stride;
            double acc = 0.0;
            for (int e = 0; e < n; ++e) acc += minv[idx][e] * b[base + e * stride];
            next[c] = acc;
          }
          b = next;
        }
        for (int c = 0; c < n * n * n * n; ++c) s += a[c] * b[c];
        break;
      }
    }
    out(p) = std::sqrt(std::max(0.0, s));
  });
  return out;
}

template <int Dim>
Field<Dim> tensor_norm(const Field<Dim>& t, const MetricField<Dim>& metric) {
  return tensor_norm(t, metric.field());
}

template <int Dim>
Field<Dim> tensor_norm(const Field<Dim>& t, const BackgroundMetric<Dim>& bg) {
  return tensor_norm(t, bg.h());
}

/// (integral |T|^p dmu)^{1/p} with the pointwise norm taken in `metric` and
/// the volume form of `metric`.
template <int Dim>
double covariant_lp_norm(const Field<Dim>& t, double p, const Field<Dim>& metric) {
  return lp_norm_of_magnitude(tensor_norm(t, metric), p, volume_density(metric));
}

}  // namespace roughflow
