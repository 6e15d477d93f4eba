#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "roughflow/flow.hpp"

namespace roughflow {

/// Step control for the backward and forward scalar solves.
struct ConjugateConfig {
  double c_cfl = 0.4;        // ds = c_cfl * dx^2 * lambda_min / n
  double max_step = 0.0;     // optional cap on ds, ignored when <= 0
  double reaction_cfl = 0.25;  // ds * max|R| <= reaction_cfl
  double coarse_slack = 0.1;   // adjacent checkpoints may differ by this times lambda_min
  bool keep_snapshots = true;

  void validate() const {
    require(c_cfl > 0.0 && c_cfl <= 0.5, ErrorCode::config_invalid, "c_cfl must lie in (0, 0.5]");
    require(reaction_cfl > 0.0 && reaction_cfl <= 0.5, ErrorCode::config_invalid, "reaction_cfl must lie in (0, 0.5]");
    require(coarse_slack > 0.0, ErrorCode::config_invalid, "coarse_slack must be positive");
  }
};

/// Metric in time through the checkpoints of a trajectory: cubic Hermite
/// per component with the h-flow right-hand side as the slope at each
/// checkpoint, or linear for a frozen trajectory.
template <int Dim>
class TrajectoryInterpolant {
 public:
  TrajectoryInterpolant(const FlowTrajectory<Dim>& traj, const BackgroundMetric<Dim>& bg, double t_lo, double t_hi,
                        double slack = 0.1)
      : traj_(traj) {
    const auto& cps = traj.checkpoints;
    require(!cps.empty(), ErrorCode::invalid_argument, "trajectory has no checkpoints");
    require(t_lo < t_hi, ErrorCode::invalid_argument, "empty time window");
    require(traj.frozen || traj.background_id == bg.id(), ErrorCode::invalid_argument,
            "trajectory was computed against a different background");
    require(cps.front().metric.grid().same_points(bg.grid()), ErrorCode::invalid_argument,
            "trajectory and background grids differ");
    const double eps = 1e-12 * std::max(1.0, std::abs(cps.back().t));
    require(t_lo >= cps.front().t - eps && t_hi <= cps.back().t + eps, ErrorCode::invalid_argument,
            "time window outside the trajectory");
    slopes_.resize(cps.size());
    std::unique_ptr<HFlowOperator<Dim>> op;
    if (!traj.frozen) op = std::make_unique<HFlowOperator<Dim>>(bg);
    for (std::size_t k = 0; k + 1 < cps.size(); ++k) {
      if (cps[k + 1].t <= t_lo || cps[k].t >= t_hi) continue;
      const auto& a = cps[k].metric;
      const auto& b = cps[k + 1].metric;
      double d = 0.0;
      for (std::size_t i = 0; i < a.field().values().size(); ++i)
        d = std::max(d, std::abs(a.field().values()[i] - b.field().values()[i]));
      const double lam = std::min(a.lambda_min(), b.lambda_min());
      require(d <= slack * lam, ErrorCode::trajectory_too_coarse,
              "checkpoints at t = " + std::to_string(cps[k].t) + " and " + std::to_string(cps[k + 1].t) +
                  " differ by more than the interpolation allows");
      if (op)
        for (std::size_t j : {k, k + 1})
          if (!slopes_[j]) {
            slopes_[j] = std::make_unique<Field<Dim>>(bg.grid(), Valence::sym2);
            op->evaluate(cps[j].metric.field(), *slopes_[j]);
          }
    }
  }

  /// Checkpoint times strictly inside (t_lo, t_hi).
  std::vector<double> knots(double t_lo, double t_hi) const {
    std::vector<double> out;
    for (const auto& c : traj_.checkpoints)
      if (c.t > t_lo && c.t < t_hi) out.push_back(c.t);
    return out;
  }

  void metric_at(double t, Field<Dim>& out) const {
    const auto& cps = traj_.checkpoints;
    if (cps.size() == 1 || t <= cps.front().t) {
      copy(cps.front().metric.field(), out);
      return;
    }
    if (t >= cps.back().t) {
      copy(cps.back().metric.field(), out);
      return;
    }
    const auto it = std::upper_bound(cps.begin(), cps.end(), t, [](double v, const auto& c) { return v < c.t; });
    const std::size_t kb = static_cast<std::size_t>(it - cps.begin()), ka = kb - 1;
    const auto& a = cps[ka];
    const auto& b = cps[kb];
    const double span = b.t - a.t;
    const double th = span > 0.0 ? (t - a.t) / span : 0.0;
    const auto av = a.metric.field().values();
    const auto bv = b.metric.field().values();
    auto ov = out.values();
    if (!slopes_[ka] || !slopes_[kb]) {
      for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = (1.0 - th) * av[i] + th * bv[i];
      return;
    }
    const double t2 = th * th, t3 = t2 * th;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = (t3 - 2 * t2 + th) * span, h01 = -2 * t3 + 3 * t2,
                 h11 = (t3 - t2) * span;
    const auto da = slopes_[ka]->values();
    const auto db = slopes_[kb]->values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = h00 * av[i] + h10 * da[i] + h01 * bv[i] + h11 * db[i];
  }

 private:
  static void copy(const Field<Dim>& src, Field<Dim>& dst) {
    std::copy(src.values().begin(), src.values().end(), dst.values().begin());
  }

  const FlowTrajectory<Dim>& traj_;
  std::vector<std::unique_ptr<Field<Dim>>> slopes_;
};

/// Scalar operators of a frozen metric g: the divergence-form Laplacian
///   (1/sqrt g) d_i (sqrt g g^{ij} d_j .)
/// with half-point averaged coefficients on the diagonal and central
/// differences off it, which is symmetric in the sqrt g weighted inner
/// product, plus R(g) and the DeTurck vector W(g).
template <int Dim>
class HeatOperator {
 public:
  static constexpr int S = sym_count<Dim>;

  explicit HeatOperator(const BackgroundMetric<Dim>& bg)
      : bg_(&bg),
        grid_(bg.grid()),
        n_(bg.grid().points()),
        sqrt_det_(n_),
        R_(n_),
        A_(static_cast<std::size_t>(S) * n_),
        half_(static_cast<std::size_t>(Dim) * n_),
        W_(static_cast<std::size_t>(Dim) * n_),
        dg_(static_cast<std::size_t>(Dim * S) * n_),
        ddg_(static_cast<std::size_t>(S * S) * n_),
        d_(static_cast<std::size_t>(Dim) * n_),
        t1_(n_),
        t2_(n_),
        acc_(n_) {}

  const GridSpec<Dim>& grid() const { return grid_; }
  double lambda_min() const { return lambda_min_; }
  double max_abs_R() const { return max_abs_R_; }
  const std::vector<double>& R() const { return R_; }
  const std::vector<double>& sqrt_det() const { return sqrt_det_; }

  void set_metric(const Field<Dim>& g) {
    const double h = grid_.spacing();
    const auto w1 = stencil::first(grid_.derivative_order());
    const auto w2 = stencil::second(grid_.derivative_order());
    for (int c = 0; c < S; ++c)
      for (int a = 0; a < Dim; ++a) stencil::apply(grid_, g.plane(c), span(dg_, a * S + c), a, w1, 1.0 / h);
    for (int a = 0; a < Dim; ++a)
      for (int b = a; b < Dim; ++b)
        for (int c = 0; c < S; ++c) {
          auto dst = span(ddg_, sym_index<Dim>(a, b) * S + c);
          if (a == b)
            stencil::apply(grid_, g.plane(c), dst, a, w2, 1.0 / (h * h));
          else
            stencil::apply(grid_, std::span<const double>(span(dg_, a * S + c)), dst, b, w1, 1.0 / h);
        }
    const bool flat = bg_->is_flat();
    std::vector<double> lam(n_);
    bool ok = true;
    for (std::size_t q = 0; q < n_; ++q) {
      Mat<Dim> gm, gi;
      for (int i = 0; i < Dim; ++i)
        for (int j = i; j < Dim; ++j) gm[i][j] = gm[j][i] = g(q, sym_index<Dim>(i, j));
      if (!invert_spd<Dim>(gm, gi)) {
        ok = false;
        break;
      }
      lam[q] = sym_eigenvalues<Dim>(gm)[0];
      std::array<Mat<Dim>, Dim> dg;
      std::array<std::array<Mat<Dim>, Dim>, Dim> ddg;
      for (int i = 0; i < Dim; ++i)
        for (int j = i; j < Dim; ++j) {
          const int s = sym_index<Dim>(i, j);
          for (int a = 0; a < Dim; ++a) dg[a][i][j] = dg[a][j][i] = dg_[(a * S + s) * n_ + q];
          for (int a = 0; a < Dim; ++a)
            for (int b = a; b < Dim; ++b)
              ddg[a][b][i][j] = ddg[a][b][j][i] = ddg[b][a][i][j] = ddg[b][a][j][i] =
                  ddg_[(sym_index<Dim>(a, b) * S + s) * n_ + q];
        }
      double R, rm2;
      detail::curvature_core<Dim, double>(gi, dg, ddg, R, rm2);
      R_[q] = R;
      const double sd = std::sqrt(determinant<Dim>(gm));
      sqrt_det_[q] = sd;
      for (int i = 0; i < Dim; ++i)
        for (int j = i; j < Dim; ++j) A_[sym_index<Dim>(i, j) * n_ + q] = sd * gi[i][j];
      // W^k = g^{pq} (Gamma^k_pq - Gamma~^k_pq)
      Vec<Dim> contracted{};  // g^{pq} Gamma_{l,pq}
      for (int l = 0; l < Dim; ++l) {
        double s = 0.0;
        for (int p = 0; p < Dim; ++p)
          for (int r = 0; r < Dim; ++r) s += gi[p][r] * (dg[p][r][l] - 0.5 * dg[l][p][r]);
        contracted[l] = s;
      }
      for (int k = 0; k < Dim; ++k) {
        double s = 0.0;
        for (int l = 0; l < Dim; ++l) s += gi[k][l] * contracted[l];
        if (!flat) {
          const auto& gam = bg_->christoffel();
          for (int p = 0; p < Dim; ++p)
            for (int r = 0; r < Dim; ++r) s -= gi[p][r] * gam(q, k * S + sym_index<Dim>(p, r));
        }
        W_[k * n_ + q] = s;
      }
    }
    require(ok, ErrorCode::trajectory_too_coarse, "interpolated metric is not positive definite");
    lambda_min_ = *std::min_element(lam.begin(), lam.end());
    max_abs_R_ = 0.0;
    for (double r : R_) max_abs_R_ = std::max(max_abs_R_, std::abs(r));
    for (int i = 0; i < Dim; ++i) {
      const std::size_t st = grid_.stride(i);
      const int N = grid_.resolution();
      const double* a = A_.data() + sym_index<Dim>(i, i) * n_;
      double* hp = half_.data() + i * n_;
      for (std::size_t q = 0; q < n_; ++q) {
        const int idx = static_cast<int>((q / st) % N);
        const std::size_t nb = idx + 1 < N ? q + st : q - st * (N - 1);
        hp[q] = 0.5 * (a[q] + a[nb]);
      }
    }
  }

  /// out = Lap(phi) + c_R R phi + c_W W^k d_k phi.
  void apply(std::span<const double> phi, std::span<double> out, double c_R = 0.0, double c_W = 0.0) {
    const double h = grid_.spacing();
    static const std::vector<double> fwd{0.0, -1.0, 1.0}, bwd{-1.0, 1.0, 0.0};
    const auto w1 = stencil::first(2);
    std::fill(acc_.begin(), acc_.end(), 0.0);
    for (int i = 0; i < Dim; ++i) {
      stencil::apply(grid_, phi, std::span<double>(t1_), i, fwd, 1.0 / h);
      const double* hp = half_.data() + i * n_;
      for (std::size_t q = 0; q < n_; ++q) t1_[q] *= hp[q];
      stencil::apply(grid_, std::span<const double>(t1_), std::span<double>(t2_), i, bwd, 1.0 / h);
      for (std::size_t q = 0; q < n_; ++q) acc_[q] += t2_[q];
    }
    for (int j = 0; j < Dim; ++j) stencil::apply(grid_, phi, span(d_, j), j, w1, 1.0 / h);
    for (int i = 0; i < Dim; ++i)
      for (int j = 0; j < Dim; ++j) {
        if (i == j) continue;
        const double* a = A_.data() + sym_index<Dim>(i, j) * n_;
        const double* dj = d_.data() + j * n_;
        for (std::size_t q = 0; q < n_; ++q) t1_[q] = a[q] * dj[q];
        stencil::apply(grid_, std::span<const double>(t1_), std::span<double>(t2_), i, w1, 1.0 / h);
        for (std::size_t q = 0; q < n_; ++q) acc_[q] += t2_[q];
      }
    for (std::size_t q = 0; q < n_; ++q) {
      double v = acc_[q] / sqrt_det_[q] + c_R * R_[q] * phi[q];
      if (c_W != 0.0)
        for (int k = 0; k < Dim; ++k) v += c_W * W_[k * n_ + q] * d_[k * n_ + q];
      out[q] = v;
    }
  }

  /// int f dmu_g.
  double integrate(std::span<const double> f) const {
    double s = 0.0;
    for (std::size_t q = 0; q < n_; ++q) s += f[q] * sqrt_det_[q];
    return s * grid_.cell_volume();
  }

  /// int (R - a) phi dmu_g.
  double functional(std::span<const double> phi, double a) const {
    double s = 0.0;
    for (std::size_t q = 0; q < n_; ++q) s += (R_[q] - a) * phi[q] * sqrt_det_[q];
    return s * grid_.cell_volume();
  }

  /// int |grad phi|^2_g dmu_g in the discrete form -<Lap phi, phi>.
  double energy(std::span<const double> phi) {
    const double h = grid_.spacing();
    static const std::vector<double> fwd{0.0, -1.0, 1.0};
    const auto w1 = stencil::first(2);
    double s = 0.0;
    for (int i = 0; i < Dim; ++i) {
      stencil::apply(grid_, phi, std::span<double>(t1_), i, fwd, 1.0 / h);
      const double* hp = half_.data() + i * n_;
      for (std::size_t q = 0; q < n_; ++q) s += hp[q] * t1_[q] * t1_[q];
    }
    if (Dim > 1) {
      for (int j = 0; j < Dim; ++j) stencil::apply(grid_, phi, span(d_, j), j, w1, 1.0 / h);
      for (int i = 0; i < Dim; ++i)
        for (int j = 0; j < Dim; ++j) {
          if (i == j) continue;
          const double* a = A_.data() + sym_index<Dim>(i, j) * n_;
          for (std::size_t q = 0; q < n_; ++q) s += a[q] * d_[i * n_ + q] * d_[j * n_ + q];
        }
    }
    return s * grid_.cell_volume();
  }

  /// Relative size of int (Lap R phi - R Lap phi) dmu_g.
  double ibp_residual(std::span<const double> phi) {
    std::vector<double> lr(n_), lp(n_);
    apply(std::span<const double>(R_), std::span<double>(lr));
    apply(phi, std::span<double>(lp));
    double diff = 0.0, scale = 0.0;
    for (std::size_t q = 0; q < n_; ++q) {
      const double x = lr[q] * phi[q] * sqrt_det_[q], y = R_[q] * lp[q] * sqrt_det_[q];
      diff += x - y;
      scale += std::abs(x) + std::abs(y);
    }
    return scale > 0.0 ? std::abs(diff) / scale : 0.0;
  }

  double stable_step(const ConjugateConfig& cfg) const {
    const double h = grid_.spacing();
    double ds = cfg.c_cfl * h * h * lambda_min_ / Dim;
    if (max_abs_R_ > 0.0) ds = std::min(ds, cfg.reaction_cfl / max_abs_R_);
    if (cfg.max_step > 0.0) ds = std::min(ds, cfg.max_step);
    return ds;
  }

 private:
  std::span<double> span(std::vector<double>& v, int plane) { return {v.data() + plane * n_, n_}; }

  const BackgroundMetric<Dim>* bg_;
  GridSpec<Dim> grid_;
  std::size_t n_;
  std::vector<double> sqrt_det_, R_, A_, half_, W_, dg_, ddg_, d_, t1_, t2_, acc_;
  double lambda_min_ = 0.0, max_abs_R_ = 0.0;
};

struct ConjugateRow {
  double t, M, E, mass, min_phi, max_phi;
};

inline const char* conjugate_csv_header() { return "t,M,E,mass,min_phi,max_phi"; }

template <int Dim>
struct ConjugateSolution {
  double T = 0.0;
  double t_min = 0.0;
  double a = 0.0;
  Field<Dim> terminal;
  std::vector<double> snapshot_times;  // descending, T first
  std::vector<Field<Dim>> snapshots;
  std::vector<ConjugateRow> rows;  // one per step, descending in t
  double sup_ratio = 0.0;          // sup_t |phi_t|_inf / |phi~|_inf
  double ibp_residual = 0.0;       // largest relative residual over rows

  const Field<Dim>& initial() const { return snapshots.back(); }

  std::string to_csv() const {
    std::ostringstream out;
    out << std::setprecision(17) << "# roughflow conjugate heat v1\n" << conjugate_csv_header() << '\n';
    for (const auto& r : rows)
      out << r.t << ',' << r.M << ',' << r.E << ',' << r.mass << ',' << r.min_phi << ',' << r.max_phi << '\n';
    return out.str();
  }

  nlohmann::json summary() const {
    double mmax = 0.0, emax = 0.0, pmin = INFINITY;
    for (const auto& r : rows) {
      mmax = std::max(mmax, std::abs(r.M));
      emax = std::max(emax, r.E);
      pmin = std::min(pmin, r.min_phi);
    }
    return {{"T", T},          {"t_min", t_min},         {"a", a},
            {"steps", rows.empty() ? 0 : rows.size() - 1}, {"max_abs_M", mmax}, {"sup_E", emax},
            {"min_phi", pmin}, {"sup_ratio", sup_ratio}, {"ibp_residual", ibp_residual},
            {"M_initial", rows.empty() ? 0.0 : rows.back().M},
            {"M_terminal", rows.empty() ? 0.0 : rows.front().M}};
  }
};

/// Observer called after every step with the current time, the solution and
/// the operator of g(t).
template <int Dim>
using ScalarObserver = std::function<void(double, const std::vector<double>&, HeatOperator<Dim>&)>;

namespace detail {

/// Heun steps of d/dtau u = Lap u + c_R R u + c_W W.grad u from tau = 0 to
/// tau_end, with the metric at g(time(tau)). Lands exactly on each stop.
template <int Dim, class TimeOf, class OnStop, class OnStep>
void heun_scalar(const TrajectoryInterpolant<Dim>& interp, const BackgroundMetric<Dim>& bg, std::vector<double>& u,
                 double tau_end, const std::vector<double>& stops, double c_R, double c_W,
                 const ConjugateConfig& cfg, TimeOf&& time_of, OnStop&& on_stop, OnStep&& on_step) {
  const auto& grid = bg.grid();
  const std::size_t n = grid.points();
  HeatOperator<Dim> cur(bg), next(bg);
  Field<Dim> g(grid, Valence::sym2);
  interp.metric_at(time_of(0.0), g);
  cur.set_metric(g);
  on_step(0.0, u, cur);
  std::vector<double> k1(n), k2(n), mid(n);
  double tau = 0.0;
  std::size_t stop = 0;
  while (tau < tau_end) {
    const double target = stop < stops.size() ? stops[stop] : tau_end;
    double ds = cur.stable_step(cfg);
    bool land = false;
    if (tau + ds >= target * (1.0 - 1e-14)) {
      ds = target - tau;
      land = true;
    } else if (tau + 2.0 * ds > target) {
      ds = 0.5 * (target - tau);  // avoid a sliver before the stop
    }
    cur.apply(u, k1, c_R, c_W);
    for (std::size_t q = 0; q < n; ++q) mid[q] = u[q] + ds * k1[q];
    const double tau_next = land ? target : tau + ds;
    interp.metric_at(time_of(tau_next), g);
    next.set_metric(g);
    next.apply(mid, k2, c_R, c_W);
    for (std::size_t q = 0; q < n; ++q) u[q] += 0.5 * ds * (k1[q] + k2[q]);
    tau = tau_next;
    std::swap(cur, next);
    on_step(tau, u, cur);
    if (land) {
      if (stop < stops.size()) on_stop(tau, u);
      ++stop;
    }
    for (double v : u)
      require(std::isfinite(v), ErrorCode::trajectory_too_coarse, "scalar solve became non-finite");
  }
}

template <int Dim>
void check_scalar(const Field<Dim>& f, const GridSpec<Dim>& grid) {
  require(f.components() == 1, ErrorCode::invalid_argument, "expected a scalar field");
  require(f.grid().same_points(grid), ErrorCode::invalid_argument, "scalar field and trajectory grids differ");
}

}  // namespace detail

/// Backward conjugate heat equation d_t phi = -Lap phi + R phi + W.grad phi
/// along an h-flow trajectory, phi_T = terminal. The transport term is the
/// DeTurck gauge; it keeps int phi dmu_g conserved and int (R - a) phi dmu_g
/// nondecreasing along the h-flow exactly as along the Ricci flow.
template <int Dim>
ConjugateSolution<Dim> solve_conjugate(const FlowTrajectory<Dim>& traj, const BackgroundMetric<Dim>& bg,
                                       const Field<Dim>& terminal, double T, double t_min, double a,
                                       const ConjugateConfig& cfg = {},
                                       const std::type_identity_t<ScalarObserver<Dim>>& observer = {}) {
  cfg.validate();
  detail::check_scalar(terminal, bg.grid());
  require(terminal.all_finite(), ErrorCode::invalid_argument, "terminal data is not finite");
  require(terminal.min_value() >= 0.0, ErrorCode::negative_terminal_data, "terminal data must be nonnegative");
  require(t_min < T, ErrorCode::invalid_argument, "t_min must be below T");
  TrajectoryInterpolant<Dim> interp(traj, bg, t_min, T, cfg.coarse_slack);

  ConjugateSolution<Dim> sol{T, t_min, a, terminal, {}, {}, {}, 0.0, 0.0};
  const double norm = terminal.max_abs();
  auto knots = interp.knots(t_min, T);
  std::sort(knots.rbegin(), knots.rend());
  std::vector<double> stops;  // in s = T - t
  for (double t : knots) stops.push_back(T - t);
  std::size_t next_knot = 0;
  std::vector<double> u(terminal.values().begin(), terminal.values().end());
  const auto time_of = [T](double s) { return T - s; };
  const auto keep = [&](double s, const std::vector<double>& v) {
    if (!cfg.keep_snapshots) return;
    Field<Dim> f(bg.grid(), Valence::scalar);
    std::copy(v.begin(), v.end(), f.values().begin());
    sol.snapshot_times.push_back(s == 0.0 ? T : knots[next_knot++]);
    sol.snapshots.push_back(std::move(f));
  };
  keep(0.0, u);
  detail::heun_scalar<Dim>(
      interp, bg, u, T - t_min, stops, -1.0, -1.0, cfg, time_of, keep,
      [&](double s, const std::vector<double>& v, HeatOperator<Dim>& op) {
        const double t = s >= T - t_min ? t_min : T - s;
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        sol.rows.push_back({t, op.functional(v, a), op.energy(v), op.integrate(v), *lo, *hi});
        if (norm > 0.0) sol.sup_ratio = std::max(sol.sup_ratio, std::max(std::abs(*lo), std::abs(*hi)) / norm);
        sol.ibp_residual = std::max(sol.ibp_residual, op.ibp_residual(v));
        if (observer) observer(t, v, op);
      });
  if (!cfg.keep_snapshots || sol.snapshot_times.back() != t_min) {
    sol.snapshot_times.push_back(t_min);
    Field<Dim> f(bg.grid(), Valence::scalar);
    std::copy(u.begin(), u.end(), f.values().begin());
    sol.snapshots.push_back(std::move(f));
  }
  return sol;
}

/// Forward heat equation d_t u = Lap u + W.grad u from t0 to t1 along the
/// trajectory, the equation solved by the kernel in its later point.
template <int Dim>
Field<Dim> solve_heat_forward(const FlowTrajectory<Dim>& traj, const BackgroundMetric<Dim>& bg, const Field<Dim>& u0,
                              double t0, double t1, const ConjugateConfig& cfg = {}) {
  cfg.validate();
  detail::check_scalar(u0, bg.grid());
  require(t0 < t1, ErrorCode::invalid_argument, "t0 must be below t1");
  TrajectoryInterpolant<Dim> interp(traj, bg, t0, t1, cfg.coarse_slack);
  std::vector<double> u(u0.values().begin(), u0.values().end());
  detail::heun_scalar<Dim>(
      interp, bg, u, t1 - t0, {}, 0.0, 1.0, cfg, [t0](double s) { return t0 + s; },
      [](double, const std::vector<double>&) {}, [](double, const std::vector<double>&, HeatOperator<Dim>&) {});
  Field<Dim> out(bg.grid(), Valence::scalar);
  std::copy(u.begin(), u.end(), out.values().begin());
  return out;
}

/// Two-point trajectory with a frozen metric on [0, T].
template <int Dim>
FlowTrajectory<Dim> static_trajectory(const MetricField<Dim>& g, double T, std::string background_id = "flat") {
  FlowTrajectory<Dim> traj;
  traj.checkpoints.push_back({0.0, g});
  traj.checkpoints.push_back({T, g});
  traj.T0 = T;
  traj.background_id = std::move(background_id);
  traj.frozen = true;
  return traj;
}

/// Normalized Gaussian of width w (in grid units of dx) at grid point x,
/// unit mass in dmu_g for the supplied weights sqrt g.
template <int Dim>
Field<Dim> gaussian_data(const GridSpec<Dim>& grid, std::size_t x, double width_cells,
                         const std::vector<double>& sqrt_det) {
  require(x < grid.points(), ErrorCode::invalid_argument, "kernel center outside the grid");
  require(width_cells > 0.0, ErrorCode::invalid_argument, "kernel width must be positive");
  const auto c = grid.coordinate(x);
  const double w = width_cells * grid.spacing();
  Field<Dim> f(grid, Valence::scalar);
  double mass = 0.0;
  for (std::size_t p = 0; p < grid.points(); ++p) {
    const auto y = grid.coordinate(p);
    double r2 = 0.0;
    for (int a = 0; a < Dim; ++a) {
      double d = y[a] - c[a];
      d -= std::round(d);
      r2 += d * d;
    }
    f(p) = std::exp(-0.5 * r2 / (w * w));
    mass += f(p) * sqrt_det[p];
  }
  f *= 1.0 / (mass * grid.cell_volume());
  return f;
}

/// Kernel mass at a grid point x.
///   F(t) = int K(y, T; x, t) dmu_{g(T)}(y) = phi_t(x) for phi~ = 1,
/// the kernel integrated in its later point; bound C = sup F.
///   conjugate_mass(t) = int phi_t dmu_{g(t)} for Gaussian terminal data at x,
/// the kernel integrated in its earlier point, conserved by the equation.
///   forward_F = int u(T) dmu_{g(T)} for u the forward heat solution from the
/// Gaussian at (x, t_min); by the adjoint identity it equals smoothed_F, the
/// Gaussian average of F(t_min, .) around x.
template <int Dim>
struct KernelMass {
  std::vector<double> t;
  std::vector<double> F;
  std::vector<double> conjugate_mass;
  double C = 0.0;
  double limit_error = 0.0;  // |F - 1| on the first step below T
  double forward_F = 0.0;
  double smoothed_F = 0.0;
  double width_cells = 3.0;

  nlohmann::json to_json() const {
    const double last_mass = conjugate_mass.empty() ? 0.0 : conjugate_mass.back();
    return {{"C", C},
            {"limit_error", limit_error},
            {"F_initial", F.empty() ? 0.0 : F.back()},
            {"forward_F", forward_F},
            {"smoothed_F", smoothed_F},
            {"conjugate_mass_initial", last_mass},
            {"width_cells", width_cells},
            {"samples", t.size()}};
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << std::setprecision(17) << "# roughflow kernel mass v1\nt,F,conjugate_mass\n";
    for (std::size_t i = 0; i < t.size(); ++i) out << t[i] << ',' << F[i] << ',' << conjugate_mass[i] << '\n';
    return out.str();
  }
};

template <int Dim>
KernelMass<Dim> kernel_mass(const FlowTrajectory<Dim>& traj, const BackgroundMetric<Dim>& bg, std::size_t x, double T,
                            double t_min, const ConjugateConfig& cfg = {}, double width_cells = 3.0) {
  const auto& grid = bg.grid();
  require(x < grid.points(), ErrorCode::invalid_argument, "kernel center outside the grid");
  ConjugateConfig quiet = cfg;
  quiet.keep_snapshots = false;
  KernelMass<Dim> km;
  km.width_cells = width_cells;
  const Field<Dim> one(grid, Valence::scalar, 1.0);
  std::vector<double> F_field;
  solve_conjugate(traj, bg, one, T, t_min, 0.0, quiet, [&](double t, const std::vector<double>& v, HeatOperator<Dim>&) {
    km.t.push_back(t);
    km.F.push_back(v[x]);
    F_field = v;
  });
  // Gaussian terminal data normalized in dmu_{g(T)}
  const TrajectoryInterpolant<Dim> interp(traj, bg, t_min, T, cfg.coarse_slack);
  Field<Dim> gT(grid, Valence::sym2);
  interp.metric_at(T, gT);
  HeatOperator<Dim> opT(bg);
  opT.set_metric(gT);
  const auto gauss = gaussian_data(grid, x, width_cells, opT.sqrt_det());
  solve_conjugate(traj, bg, gauss, T, t_min, 0.0, quiet,
                  [&](double, const std::vector<double>& v, HeatOperator<Dim>& op) {
                    km.conjugate_mass.push_back(op.integrate(v));
                  });
  for (double f : km.F) km.C = std::max(km.C, f);
  if (km.F.size() > 1) km.limit_error = std::abs(km.F[1] - 1.0);
  // forward solve from the Gaussian at (x, t_min), normalized in dmu_{g(t_min)}
  Field<Dim> g0(grid, Valence::sym2);
  interp.metric_at(t_min, g0);
  HeatOperator<Dim> op0(bg);
  op0.set_metric(g0);
  const auto start = gaussian_data(grid, x, width_cells, op0.sqrt_det());
  const auto uT = solve_heat_forward(traj, bg, start, t_min, T, cfg);
  km.forward_F = opT.integrate(uT.values());
  for (std::size_t q = 0; q < F_field.size(); ++q) F_field[q] *= start(q);
  km.smoothed_F = op0.integrate(F_field);
  return km;
}

/// Per-step monotonicity of M(t) = int (R - a) phi_t dmu_{g(t)}.
struct MonotoneReport {
  std::size_t steps = 0;
  double max_abs_M = 0.0;
  double tolerance = 0.0;    // 1e-6 (1 + max|M|)
  double min_increment = 0.0;  // min over steps of M(t_{k+1}) - M(t_k), t increasing
  double ibp_residual = 0.0;
  bool pass = false;

  nlohmann::json to_json() const {
    return {{"steps", steps},
            {"max_abs_M", max_abs_M},
            {"tolerance", tolerance},
            {"min_increment", min_increment},
            {"ibp_residual", ibp_residual},
            {"pass", pass}};
  }
};

template <int Dim>
MonotoneReport monotone_functional_check(const ConjugateSolution<Dim>& sol) {
  MonotoneReport r;
  r.ibp_residual = sol.ibp_residual;
  for (const auto& row : sol.rows) r.max_abs_M = std::max(r.max_abs_M, std::abs(row.M));
  r.tolerance = 1e-6 * (1.0 + r.max_abs_M);
  r.min_increment = INFINITY;
  // rows run backward in t: rows[k] is later than rows[k + 1]
  for (std::size_t k = 0; k + 1 < sol.rows.size(); ++k) {
    r.min_increment = std::min(r.min_increment, sol.rows[k].M - sol.rows[k + 1].M);
    ++r.steps;
  }
  if (r.steps == 0) r.min_increment = 0.0;
  r.pass = r.min_increment >= -r.tolerance;
  return r;
}

/// Gradient energy bound: sup_t E(t) finite, and stable under step halving
/// when a refined solution is supplied.
struct EnergyReport {
  double sup_E = 0.0;
  double sup_E_refined = NAN;
  double relative_change = NAN;
  bool finite = false;
  bool pass = false;

  nlohmann::json to_json() const {
    return {{"sup_E", sup_E},
            {"sup_E_refined", std::isnan(sup_E_refined) ? nlohmann::json() : nlohmann::json(sup_E_refined)},
            {"relative_change", std::isnan(relative_change) ? nlohmann::json() : nlohmann::json(relative_change)},
            {"finite", finite},
            {"pass", pass}};
  }
};

template <int Dim>
EnergyReport energy_bound_check(const ConjugateSolution<Dim>& sol, const ConjugateSolution<Dim>* refined = nullptr) {
  EnergyReport r;
  r.finite = !sol.rows.empty();
  for (const auto& row : sol.rows) {
    r.finite = r.finite && std::isfinite(row.E);
    r.sup_E = std::max(r.sup_E, row.E);
  }
  r.pass = r.finite;
  if (refined) {
    r.sup_E_refined = 0.0;
    for (const auto& row : refined->rows) r.sup_E_refined = std::max(r.sup_E_refined, row.E);
    const double scale = std::max(r.sup_E, r.sup_E_refined);
    r.relative_change = scale > 0.0 ? std::abs(r.sup_E - r.sup_E_refined) / scale : 0.0;
    r.pass = r.pass && r.relative_change <= 0.2;
  }
  return r;
}

}  // namespace roughflow
