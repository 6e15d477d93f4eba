#pragma once

// h-flow (Ricci-DeTurck flow with background h): right-hand sides, explicit
// time integration with per-step diagnostics, and the checks run on the
// resulting trajectories (decay exponents, W^{1,p} barrier, space-time
// curvature integrals).

#include <algorithm>
#include <cmath>
#include <cstring>
#include <type_traits>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "roughflow/error.hpp"
#include "roughflow/fit.hpp"
#include "roughflow/geometry.hpp"
#include "roughflow/grid.hpp"
#include "roughflow/parallel.hpp"
#include "roughflow/tensor.hpp"

namespace roughflow {

enum class TimeScheme { explicit_rk2, explicit_rk4 };
enum class DtPolicy { fixed, cfl };
enum class FlowStatus { completed, aborted_fairness, aborted_cfl };

inline std::string to_string(TimeScheme s) { return s == TimeScheme::explicit_rk2 ? "explicit_rk2" : "explicit_rk4"; }
inline std::string to_string(DtPolicy p) { return p == DtPolicy::fixed ? "fixed" : "cfl"; }
inline std::string to_string(FlowStatus s) {
  switch (s) {
    case FlowStatus::completed: return "completed";
    case FlowStatus::aborted_fairness: return "aborted_fairness";
    case FlowStatus::aborted_cfl: return "aborted_cfl";
  }
  return "unknown";
}

inline TimeScheme time_scheme_from(const std::string& s) {
  if (s == "explicit_rk2") return TimeScheme::explicit_rk2;
  if (s == "explicit_rk4") return TimeScheme::explicit_rk4;
  fail(ErrorCode::config_invalid, "unknown time scheme '" + s + "'");
}

inline DtPolicy dt_policy_from(const std::string& s) {
  if (s == "fixed") return DtPolicy::fixed;
  if (s == "cfl") return DtPolicy::cfl;
  fail(ErrorCode::config_invalid, "unknown dt policy '" + s + "'");
}

struct FlowConfig {
  double T0 = 0.05;
  DtPolicy dt_policy = DtPolicy::cfl;
  double c_cfl = 0.4;
  double dt = 0.0;  // used by the fixed policy
  TimeScheme scheme = TimeScheme::explicit_rk2;
  std::vector<double> checkpoint_times;
  double fairness_eps = 0.25;
  double p = 3.0;
  double A = -1.0;  // negative: measured from the initial data
  /// A checkpoint is also stored whenever sup|g - g_last|_h exceeds this
  /// fraction of the lower ellipticity bound of g.
  double checkpoint_drift = 0.005;
  /// Store a checkpoint every this many steps (0 disables).
  int checkpoint_stride = 0;
  std::size_t max_steps = 50'000'000;

  void validate() const {
    require(T0 > 0.0 && T0 <= 1.0, ErrorCode::invalid_argument, "T0 must lie in (0, 1]");
    require(c_cfl > 0.0 && c_cfl <= 0.5, ErrorCode::invalid_argument, "c_cfl must lie in (0, 1/2]");
    require(fairness_eps > 0.0, ErrorCode::invalid_argument, "fairness_eps must be positive");
    require(dt_policy != DtPolicy::fixed || dt > 0.0, ErrorCode::invalid_argument, "fixed dt must be positive");
    require(p >= 1.0, ErrorCode::invalid_argument, "p must be at least 1");
    require(checkpoint_drift > 0.0, ErrorCode::invalid_argument, "checkpoint_drift must be positive");
    for (std::size_t i = 0; i < checkpoint_times.size(); ++i) {
      require(checkpoint_times[i] > 0.0 && checkpoint_times[i] <= T0, ErrorCode::invalid_argument,
              "checkpoint times must lie in (0, T0]");
      require(i == 0 || checkpoint_times[i] > checkpoint_times[i - 1], ErrorCode::invalid_argument,
              "checkpoint times must increase");
    }
  }
};

/// One row per accepted step, evaluated on g(t) at the start of the step.
struct FlowDiagnostics {
  std::size_t step = 0;
  double t = 0.0;
  double dt = 0.0;  // step taken from t (0 on the last row)
  double min_R = 0.0;
  double max_R = 0.0;
  double sup_rm = 0.0;         // sup |Rm|_g
  double sup_grad_g = 0.0;     // sup |grad~ g|_h
  double sup_grad2_g = 0.0;    // sup |grad~^2 g|_h
  double grad_lp = 0.0;        // ||grad~ g||_{L^p(dmu_h)}
  double grad_lp_power = 0.0;  // int |grad~ g|^p dmu_h
  double rm_l2_sq = 0.0;       // int |Rm|^2 dmu_g
  double cumulative_rm = 0.0;  // int_0^t int |Rm|^2 dmu_g
  double grad2_l2_sq = 0.0;    // int |grad~^2 g|^2 dmu_h
  double cumulative_grad2 = 0.0;
  double fairness = 0.0;  // smallest eps with h (1+eps)-fair to g(t)
  double c0_drift = 0.0;  // sup |g(t) - g(0)|_h
  double lambda_min = 0.0;  // smallest Euclidean eigenvalue of g(t)
};

inline const char* flow_csv_header() {
  return "step,t,dt,min_R,max_R,sup_rm,sup_grad_g,sup_grad2_g,grad_lp,grad_lp_power,rm_l2_sq,cumulative_rm,"
         "grad2_l2_sq,cumulative_grad2,fairness,c0_drift,lambda_min";
}

template <int Dim>
struct Checkpoint {
  double t;
  MetricField<Dim> metric;
};

template <int Dim>
struct FlowTrajectory {
  std::vector<Checkpoint<Dim>> checkpoints;
  std::vector<FlowDiagnostics> diagnostics;
  FlowStatus status = FlowStatus::completed;
  double abort_time = std::numeric_limits<double>::quiet_NaN();
  double A = 0.0;
  double p = 0.0;
  double T0 = 0.0;
  std::string background_id;
  bool frozen = false;  // metric held fixed in time, not a flow

  const MetricField<Dim>& final_metric() const { return checkpoints.back().metric; }
  bool completed() const { return status == FlowStatus::completed; }

  std::string diagnostics_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "# roughflow flow diagnostics v1\n" << flow_csv_header() << '\n';
    for (const auto& d : diagnostics)
      out << d.step << ',' << d.t << ',' << d.dt << ',' << d.min_R << ',' << d.max_R << ',' << d.sup_rm << ','
          << d.sup_grad_g << ',' << d.sup_grad2_g << ',' << d.grad_lp << ',' << d.grad_lp_power << ',' << d.rm_l2_sq
          << ',' << d.cumulative_rm << ',' << d.grad2_l2_sq << ',' << d.cumulative_grad2 << ',' << d.fairness << ','
          << d.c0_drift << ',' << d.lambda_min << '\n';
    return out.str();
  }
};

namespace detail {

template <int Dim>
using Jet2 = std::array<Mat<Dim>, sym_count<Dim>>;  // [sym(a, b)] -> d_a d_b g_ij

template <int Dim>
using Rank4 = std::array<double, Dim * Dim * Dim * Dim>;

/// Background quantities at one point.
template <int Dim>
struct BackgroundPoint {
  Mat<Dim> h, h_inv;
  Rank3<Dim> gamma;                  // Gamma~^k_ij
  std::array<Rank3<Dim>, Dim> dgamma;  // [a] -> d_a Gamma~^k_ij
  Rank4<Dim> riemann;                // R~_iklm
  double sqrt_det = 1.0;
};

/// grad~_a grad~_b g_ij for all ordered (a, b) from partials and background data.
template <int Dim>
std::array<std::array<Mat<Dim>, Dim>, Dim> background_hessian(const Mat<Dim>& g, const Rank3<Dim>& dg,
                                                              const Jet2<Dim>& ddg, const Rank3<Dim>& cov,
                                                              const BackgroundPoint<Dim>& bp) {
  std::array<std::array<Mat<Dim>, Dim>, Dim> H;
  const auto& G = bp.gamma;
  for (int a = 0; a < Dim; ++a)
    for (int b = 0; b < Dim; ++b) {
      const auto& dG = bp.dgamma[a];
      const auto& dd = ddg[sym_index<Dim>(a, b)];
      for (int i = 0; i < Dim; ++i)
        for (int j = i; j < Dim; ++j) {
          double v = dd[i][j];
          for (int c = 0; c < Dim; ++c) {
            // d_a of grad~_b g_ij
            v -= dG[c][b][i] * g[c][j] + G[c][b][i] * dg[a][c][j] + dG[c][b][j] * g[i][c] + G[c][b][j] * dg[a][i][c];
            v -= G[c][a][b] * cov[c][i][j] + G[c][a][i] * cov[b][c][j] + G[c][a][j] * cov[b][i][c];
          }
          H[a][b][i][j] = H[a][b][j][i] = v;
        }
    }
  return H;
}

template <int Dim, class T>
using MatOf = std::array<std::array<T, Dim>, Dim>;

/// Cofactor inverse for scalar or vector-extension lanes (no definiteness check).
template <int Dim, class T>
[[gnu::always_inline]] inline MatOf<Dim, T> cofactor_inverse(const MatOf<Dim, T>& m, T& det) {
  MatOf<Dim, T> inv;
  if constexpr (Dim == 2) {
    det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    const T s = 1.0 / det;
    inv[0][0] = m[1][1] * s;
    inv[1][1] = m[0][0] * s;
    inv[0][1] = inv[1][0] = -m[0][1] * s;
  } else {
    const T c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    const T c01 = m[0][2] * m[2][1] - m[0][1] * m[2][2];
    const T c02 = m[0][1] * m[1][2] - m[0][2] * m[1][1];
    det = m[0][0] * c00 + m[1][0] * c01 + m[2][0] * c02;
    const T s = 1.0 / det;
    inv[0][0] = c00 * s;
    inv[0][1] = inv[1][0] = c01 * s;
    inv[0][2] = inv[2][0] = c02 * s;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * s;
    inv[1][2] = inv[2][1] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * s;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * s;
  }
  return inv;
}

/// Background-free part of the quasilinear right-hand side, generic over the
/// lane type so the flat path can evaluate several points at once:
///   g^{ab} H_abij + 1/2 g^{ab} g^{pq} (C_ipa C_jqb + 2 C_ajp C_qib - 2 C_ajp C_biq - 2 C_jpa C_biq - 2 C_ipa C_bjq)
/// with C = grad~ g and H = grad~ grad~ g.
template <int Dim, class T>
[[gnu::always_inline]] inline MatOf<Dim, T> quasilinear_core(
    const MatOf<Dim, T>& gi, const std::array<MatOf<Dim, T>, Dim>& C,
    const std::array<std::array<MatOf<Dim, T>, Dim>, Dim>& H) {
  using M = MatOf<Dim, T>;
  M out;
  for (int i = 0; i < Dim; ++i)
    for (int j = i; j < Dim; ++j) {
      T s = gi[0][0] * H[0][0][i][j];
      for (int a = 0; a < Dim; ++a)
        for (int b = 0; b < Dim; ++b)
          if (a + b > 0) s += gi[a][b] * H[a][b][i][j];
      out[i][j] = s;
    }
  // raise13[x][i][y] = g^{xq} g^{yb} C_qib ; raise23[j] = g^{-1} C_j g^{-1}
  std::array<M, Dim> half, raise13, raise23;
  for (int q = 0; q < Dim; ++q)
    for (int i = 0; i < Dim; ++i)
      for (int y = 0; y < Dim; ++y) {
        T s = C[q][i][0] * gi[0][y];
        for (int b = 1; b < Dim; ++b) s += C[q][i][b] * gi[b][y];
        half[q][i][y] = s;
      }
  for (int x = 0; x < Dim; ++x)
    for (int i = 0; i < Dim; ++i)
      for (int y = 0; y < Dim; ++y) {
        T s = gi[x][0] * half[0][i][y];
        for (int q = 1; q < Dim; ++q) s += gi[x][q] * half[q][i][y];
        raise13[x][i][y] = s;
      }
  for (int j = 0; j < Dim; ++j)
    for (int p = 0; p < Dim; ++p)
      for (int a = 0; a < Dim; ++a) {
        T s = gi[p][0] * half[j][0][a];
        for (int q = 1; q < Dim; ++q) s += gi[p][q] * half[j][q][a];
        raise23[j][p][a] = s;
      }
  for (int i = 0; i < Dim; ++i)
    for (int j = i; j < Dim; ++j) {
      T acc = out[i][j];
      for (int a = 0; a < Dim; ++a)
        for (int p = 0; p < Dim; ++p)
          acc += 0.5 * C[i][p][a] * raise23[j][p][a] + C[a][j][p] * raise13[p][i][a] -
                 C[a][j][p] * raise13[a][i][p] - C[j][p][a] * raise13[a][i][p] - C[i][p][a] * raise13[a][j][p];
      out[i][j] = acc;
    }
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < i; ++j) out[i][j] = out[j][i];
  return out;
}

/// Scalar curvature and |Rm|^2 of g from its first and second partials,
/// contracting R_iklm (as in riemann_at) directly to Ricci.
template <int Dim, class T>
[[gnu::always_inline]] inline void curvature_core(const MatOf<Dim, T>& gi, const std::array<MatOf<Dim, T>, Dim>& dg,
                                                  const std::array<std::array<MatOf<Dim, T>, Dim>, Dim>& ddg, T& R,
                                                  T& rm2) {
  using M = MatOf<Dim, T>;
  std::array<M, Dim> first, second;  // Gamma_{q,kl} and Gamma^p_kl
  for (int q = 0; q < Dim; ++q)
    for (int k = 0; k < Dim; ++k)
      for (int l = k; l < Dim; ++l) first[q][k][l] = first[q][l][k] = 0.5 * (dg[k][l][q] + dg[l][k][q] - dg[q][k][l]);
  for (int p = 0; p < Dim; ++p)
    for (int k = 0; k < Dim; ++k)
      for (int l = k; l < Dim; ++l) {
        T s = gi[p][0] * first[0][k][l];
        for (int q = 1; q < Dim; ++q) s += gi[p][q] * first[q][k][l];
        second[p][k][l] = second[p][l][k] = s;
      }
  M ric;
  for (int k = 0; k < Dim; ++k)
    for (int m = k; m < Dim; ++m) {
      T s = gi[0][0] * 0.0;
      for (int i = 0; i < Dim; ++i)
        for (int l = 0; l < Dim; ++l) {
          T v = 0.5 * (ddg[k][l][i][m] + ddg[i][m][k][l] - ddg[k][m][i][l] - ddg[i][l][k][m]);
          for (int q = 0; q < Dim; ++q) v += first[q][k][l] * second[q][i][m] - first[q][k][m] * second[q][i][l];
          s += gi[i][l] * v;
        }
      ric[k][m] = ric[m][k] = s;
    }
  R = gi[0][0] * ric[0][0];
  for (int a = 0; a < Dim; ++a)
    for (int b = 0; b < Dim; ++b)
      if (a + b > 0) R += gi[a][b] * ric[a][b];
  T norm = R * 0.0;
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) {
      T row = R * 0.0;
      for (int a = 0; a < Dim; ++a)
        for (int b = 0; b < Dim; ++b) row += gi[i][a] * gi[j][b] * ric[a][b];
      norm += row * ric[i][j];
    }
  rm2 = 4.0 * norm - R * R;
}

/// Quasilinear h-flow right-hand side at a point: the core plus
///   g^{ab} g_ip h^{pq} R~_jaqb + g^{ab} g_jp h^{pq} R~_iaqb.
/// The curvature terms are written for the opposite sign convention; with
/// R~_iklm as in riemann_at (Ric = g^{il} R_iklm) they enter with a minus
/// sign, giving -2 Ric(h) at g = h.
template <int Dim>
Mat<Dim> quasilinear_rhs(const Mat<Dim>& g, const Mat<Dim>& gi, const Rank3<Dim>& C,
                         const std::array<std::array<Mat<Dim>, Dim>, Dim>& H, const BackgroundPoint<Dim>* bp) {
  Mat<Dim> out = quasilinear_core<Dim, double>(gi, C, H);
  if (bp) {
    Mat<Dim> m{};  // m[i][q] = g_ip h^{pq}
    for (int i = 0; i < Dim; ++i)
      for (int q = 0; q < Dim; ++q) {
        double s = 0.0;
        for (int p = 0; p < Dim; ++p) s += g[i][p] * bp->h_inv[p][q];
        m[i][q] = s;
      }
    const auto& R = bp->riemann;
    auto rm = [&](int i, int k, int l, int mm) { return R[((i * Dim + k) * Dim + l) * Dim + mm]; };
    for (int i = 0; i < Dim; ++i)
      for (int j = i; j < Dim; ++j) {
        double s = 0.0;
        for (int a = 0; a < Dim; ++a)
          for (int b = 0; b < Dim; ++b) {
            if (gi[a][b] == 0.0) continue;
            double inner = 0.0;
            for (int q = 0; q < Dim; ++q) inner += m[i][q] * rm(j, a, q, b) + m[j][q] * rm(i, a, q, b);
            s += gi[a][b] * inner;
          }
        out[i][j] -= s;
      }
  }
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < i; ++j) out[i][j] = out[j][i];
  return out;
}

}  // namespace detail

/// Pointwise diagnostics accumulated by the flow operator on its first stage.
struct FlowPointwise {
  double min_R, max_R, sup_rm, sup_grad, sup_grad2, grad_power, rm_sq, grad2_sq, fairness, drift, lambda_min;
};

/// The quasilinear h-flow operator with a preallocated workspace. Derivatives
/// are taken with the grid's stencils; mixed second partials compose first
/// differences.
template <int Dim>
class HFlowOperator {
 public:
  static constexpr int S = sym_count<Dim>;

  explicit HFlowOperator(const BackgroundMetric<Dim>& bg)
      : bg_(bg),
        grid_(bg.grid()),
        dg_(static_cast<std::size_t>(Dim * S) * bg.grid().points()),
        ddg_(static_cast<std::size_t>(S * S) * bg.grid().points()),
        scratch_(static_cast<std::size_t>(scratch_planes) * bg.grid().points()) {
    if (!bg.is_flat()) {
      points_.resize(grid_.points());
      parallel_for(static_cast<std::int64_t>(grid_.points()), [&](std::int64_t ip) {
        const auto p = static_cast<std::size_t>(ip);
        auto& b = points_[p];
        b.h = bg.h_at(p);
        b.h_inv = bg.h_inv_at(p);
        b.gamma = bg.christoffel_at(p);
        for (int a = 0; a < Dim; ++a)
          for (int k = 0; k < Dim; ++k)
            for (int i = 0; i < Dim; ++i)
              for (int j = 0; j < Dim; ++j)
                b.dgamma[a][k][i][j] = bg.christoffel_derivative()(p, a * Dim * S + k * S + sym_index<Dim>(i, j));
        b.riemann = detail::riemann_from_ricci<Dim>(b.h, sym_at(bg.ricci(), p), bg.scalar()(p));
        b.sqrt_det = bg.sqrt_det()(p);
      });
    }
  }

  const GridSpec<Dim>& grid() const { return grid_; }
  const BackgroundMetric<Dim>& background() const { return bg_; }

  /// out = rhs(g). With diag set, also evaluates the diagnostics of g,
  /// measuring the W^{1,p} integral with exponent p and the drift against g0.
  void evaluate(const Field<Dim>& g, Field<Dim>& out, FlowPointwise* diag = nullptr, double p = 2.0,
                const Field<Dim>* g0 = nullptr) {
    const std::size_t n = grid_.points();
    const double h = grid_.spacing();
    const auto w1 = stencil::first(grid_.derivative_order());
    const auto w2 = stencil::second(grid_.derivative_order());
    for (int c = 0; c < S; ++c)
      for (int a = 0; a < Dim; ++a) stencil::apply(grid_, g.plane(c), plane(dg_, a * S + c), a, w1, 1.0 / h);
    for (int a = 0; a < Dim; ++a)
      for (int b = a; b < Dim; ++b)
        for (int c = 0; c < S; ++c) {
          auto dst = plane(ddg_, sym_index<Dim>(a, b) * S + c);
          if (a == b)
            stencil::apply(grid_, g.plane(c), dst, a, w2, 1.0 / (h * h));
          else
            stencil::apply(grid_, std::span<const double>(plane(dg_, a * S + c)), dst, b, w1, 1.0 / h);
        }
    const bool flat = bg_.is_flat();
    const bool with_diag = diag != nullptr;
    if (flat) {
      flat_rhs(g, out, with_diag, p, g0);
      if (with_diag) reduce(*diag);
      return;
    }
    parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t ip) {
      const auto q = static_cast<std::size_t>(ip);
      Mat<Dim> gm;
      for (int i = 0; i < Dim; ++i)
        for (int j = i; j < Dim; ++j) gm[i][j] = gm[j][i] = g(q, sym_index<Dim>(i, j));
      Mat<Dim> gi;
      if (!invert_spd<Dim>(gm, gi)) {
        for (int c = 0; c < S; ++c) out(q, c) = std::numeric_limits<double>::quiet_NaN();
        if (with_diag) mark_bad(q);
        return;
      }
      Rank3<Dim> dg;
      detail::Jet2<Dim> ddg;
      for (int a = 0; a < Dim; ++a)
        for (int i = 0; i < Dim; ++i)
          for (int j = i; j < Dim; ++j) {
            dg[a][i][j] = dg[a][j][i] = dg_[(a * S + sym_index<Dim>(i, j)) * n + q];
          }
      for (int s = 0; s < S; ++s)
        for (int i = 0; i < Dim; ++i)
          for (int j = i; j < Dim; ++j) ddg[s][i][j] = ddg[s][j][i] = ddg_[(s * S + sym_index<Dim>(i, j)) * n + q];
      const auto* bp = &points_[q];
      const auto C = detail::covariant_from<Dim>(gm, dg, bp->gamma);
      const auto H = detail::background_hessian<Dim>(gm, dg, ddg, C, *bp);
      const auto r = detail::quasilinear_rhs<Dim>(gm, gi, C, H, bp);
      for (int i = 0; i < Dim; ++i)
        for (int j = i; j < Dim; ++j) out(q, sym_index<Dim>(i, j)) = r[i][j];
      if (with_diag) pointwise_diagnostics(q, gm, gi, dg, ddg, C, H, bp, p, g0);
    });
    if (with_diag) reduce(*diag);
  }

 private:
  /// Flat-background right-hand side, one grid row per task and lanes of
  /// eight points within a row, so that results do not depend on the thread
  /// count.
  void flat_rhs(const Field<Dim>& g, Field<Dim>& out, bool with_diag, double p, const Field<Dim>* g0) {
    const std::size_t n = grid_.points();
    const std::size_t row = static_cast<std::size_t>(grid_.resolution());
    const double* gp = g.values().data();
    const double* g0p = g0 ? g0->values().data() : nullptr;
    double* op = out.values().data();
    parallel_for(
        static_cast<std::int64_t>(n / row),
        [&](std::int64_t r) {
          const std::size_t base = static_cast<std::size_t>(r) * row;
          std::size_t k = 0;
          if (with_diag) {
            for (; k + lanes <= row; k += lanes) flat_point<Lane, true>(gp, op, base + k, p, g0p);
            for (; k < row; ++k) flat_point<double, true>(gp, op, base + k, p, g0p);
          } else {
            for (; k + lanes <= row; k += lanes) flat_point<Lane, false>(gp, op, base + k, p, g0p);
            for (; k < row; ++k) flat_point<double, false>(gp, op, base + k, p, g0p);
          }
        },
        0);
  }

  static constexpr int lanes = 8;
  typedef double Lane __attribute__((vector_size(lanes * sizeof(double))));

  template <class T>
  [[gnu::always_inline]] static T load(const double* p) {
    if constexpr (std::is_same_v<T, double>) {
      return *p;
    } else {
      T v;
      std::memcpy(&v, p, sizeof(T));
      return v;
    }
  }

  template <class T>
  [[gnu::always_inline]] static void store(double* p, const T& v) {
    std::memcpy(p, &v, sizeof(T));
  }

  template <class T, bool Diag>
  void flat_point(const double* gp, double* op, std::size_t q, double p, const double* g0p) {
    const std::size_t n = grid_.points();
    const double* dgp = dg_.data();
    const double* ddp = ddg_.data();
    detail::MatOf<Dim, T> gm;
    std::array<detail::MatOf<Dim, T>, Dim> C;
    std::array<std::array<detail::MatOf<Dim, T>, Dim>, Dim> H;
    for (int i = 0; i < Dim; ++i)
      for (int j = i; j < Dim; ++j) {
        const int s = sym_index<Dim>(i, j);
        gm[i][j] = gm[j][i] = load<T>(gp + s * n + q);
        for (int a = 0; a < Dim; ++a) C[a][i][j] = C[a][j][i] = load<T>(dgp + (a * S + s) * n + q);
        for (int a = 0; a < Dim; ++a)
          for (int b = a; b < Dim; ++b)
            H[a][b][i][j] = H[a][b][j][i] = H[b][a][i][j] = H[b][a][j][i] =
                load<T>(ddp + (sym_index<Dim>(a, b) * S + s) * n + q);
      }
    T det;
    const auto gi = detail::cofactor_inverse<Dim, T>(gm, det);
    const auto v = detail::quasilinear_core<Dim, T>(gi, C, H);
    for (int i = 0; i < Dim; ++i)
      for (int j = i; j < Dim; ++j) store<T>(op + sym_index<Dim>(i, j) * n + q, v[i][j]);
    // lanes whose metric is not positive definite are poisoned
    double g00[sizeof(T) / sizeof(double)], dets[sizeof(T) / sizeof(double)];
    store<T>(g00, gm[0][0]);
    store<T>(dets, det);
    for (std::size_t l = 0; l < sizeof(T) / sizeof(double); ++l)
      if (!(g00[l] > 0.0 && dets[l] > 0.0) || (Dim == 3 && !leading_minor_positive(gp, q + l)))
        for (int c = 0; c < S; ++c) op[c * n + q + l] = std::numeric_limits<double>::quiet_NaN();
    if constexpr (Diag) {
      T R, rm2, c2 = det * 0.0, h2 = det * 0.0;
      detail::curvature_core<Dim, T>(gi, C, H, R, rm2);
      for (int a = 0; a < Dim; ++a)
        for (int i = 0; i < Dim; ++i)
          for (int j = 0; j < Dim; ++j) {
            c2 += C[a][i][j] * C[a][i][j];
            for (int b = 0; b < Dim; ++b) h2 += H[a][b][i][j] * H[a][b][i][j];
          }
      store<T>(&scratch(s_R, q), R);
      store<T>(&scratch(s_rm, q), rm2);
      store<T>(&scratch(s_grad, q), c2);
      store<T>(&scratch(s_grad2, q), h2);
      for (std::size_t l = 0; l < sizeof(T) / sizeof(double); ++l) {
        const std::size_t x = q + l;
        if (!(g00[l] > 0.0 && dets[l] > 0.0)) {
          mark_bad(x);
          continue;
        }
        Mat<Dim> m;
        double drift = 0.0;
        for (int i = 0; i < Dim; ++i)
          for (int j = i; j < Dim; ++j) {
            const int c = sym_index<Dim>(i, j);
            m[i][j] = m[j][i] = gp[c * n + x];
            if (g0p) drift += (i == j ? 1.0 : 2.0) * std::pow(gp[c * n + x] - g0p[c * n + x], 2);
          }
        const auto e = sym_eigenvalues<Dim>(m);
        const double r2 = scratch(s_rm, x), cc = scratch(s_grad, x), hh = scratch(s_grad2, x);
        const double cn = std::sqrt(cc);
        scratch(s_rm, x) = std::sqrt(std::max(0.0, r2));
        scratch(s_grad, x) = cn;
        scratch(s_grad2, x) = std::sqrt(hh);
        scratch(s_gradp, x) = power(cn, p);
        scratch(s_rm_dmu, x) = std::max(0.0, r2) * std::sqrt(dets[l]);
        scratch(s_grad2_dmu, x) = hh;
        scratch(s_fair, x) = std::max(e.back() - 1.0, 1.0 / e.front() - 1.0);
        scratch(s_drift, x) = std::sqrt(drift);
        scratch(s_lmin, x) = e.front();
      }
    }
  }

  /// x^p with repeated multiplication for integer exponents.
  static double power(double x, double p) {
    if (p == std::floor(p) && p <= 16.0) {
      double r = 1.0;
      for (int k = 0; k < static_cast<int>(p); ++k) r *= x;
      return r;
    }
    return std::pow(x, p);
  }

  bool leading_minor_positive(const double* gp, std::size_t q) const {
    const std::size_t n = grid_.points();
    return gp[q] * gp[sym_index<Dim>(1, 1) * n + q] - gp[n + q] * gp[n + q] > 0.0;
  }

  enum Scratch { s_R, s_rm, s_grad, s_grad2, s_gradp, s_rm_dmu, s_grad2_dmu, s_fair, s_drift, s_lmin, scratch_planes };

  std::span<double> plane(std::vector<double>& v, int c) {
    return {v.data() + static_cast<std::size_t>(c) * grid_.points(), grid_.points()};
  }
  double& scratch(int which, std::size_t q) { return scratch_[static_cast<std::size_t>(which) * grid_.points() + q]; }

  void mark_bad(std::size_t q) {
    for (int s = 0; s < scratch_planes; ++s) scratch(s, q) = std::numeric_limits<double>::quiet_NaN();
  }

  void pointwise_diagnostics(std::size_t q, const Mat<Dim>& gm, const Mat<Dim>& gi, const Rank3<Dim>& dg,
                             const detail::Jet2<Dim>& ddg, const Rank3<Dim>& C,
                             const std::array<std::array<Mat<Dim>, Dim>, Dim>& H,
                             const detail::BackgroundPoint<Dim>* bp, double p, const Field<Dim>* g0) {
    const auto rm = detail::riemann_at<Dim>(gm, gi, dg, ddg);
    Mat<Dim> ric{};
    for (int k = 0; k < Dim; ++k)
      for (int m = 0; m < Dim; ++m) {
        double s = 0.0;
        for (int i = 0; i < Dim; ++i)
          for (int l = 0; l < Dim; ++l) s += gi[i][l] * rm[((i * Dim + k) * Dim + l) * Dim + m];
        ric[k][m] = s;
      }
    const double R = detail::trace_with<Dim>(gi, ric);
    const double rm2 = std::max(0.0, 4.0 * detail::sym2_norm_sq<Dim>(gi, ric) - R * R);
    double c2 = 0.0, h2 = 0.0;
    double sqrt_h = 1.0;
    if (!bp) {
      for (int a = 0; a < Dim; ++a)
        for (int i = 0; i < Dim; ++i)
          for (int j = 0; j < Dim; ++j) {
            c2 += C[a][i][j] * C[a][i][j];
            for (int b = 0; b < Dim; ++b) h2 += H[a][b][i][j] * H[a][b][i][j];
          }
    } else {
      const auto& hi = bp->h_inv;
      sqrt_h = bp->sqrt_det;
      for (int a = 0; a < Dim; ++a)
        for (int e = 0; e < Dim; ++e) {
          if (hi[a][e] == 0.0) continue;
          c2 += hi[a][e] * pair_sq(C[a], C[e], hi);
          for (int b = 0; b < Dim; ++b)
            for (int f = 0; f < Dim; ++f)
              if (hi[b][f] != 0.0) h2 += hi[a][e] * hi[b][f] * pair_sq(H[a][b], H[e][f], hi);
        }
    }
    const double sqrt_g = std::sqrt(determinant<Dim>(gm));
    double fair, lmin;
    const auto eg = sym_eigenvalues<Dim>(gm);
    lmin = eg.front();
    if (!bp) {
      fair = std::max(eg.back() - 1.0, 1.0 / eg.front() - 1.0);
    } else {
      const auto [lo, hi] = relative_eigen_range<Dim>(gm, bp->h);
      fair = std::max(hi - 1.0, 1.0 / lo - 1.0);
    }
    double drift = 0.0;
    if (g0) {
      Mat<Dim> d;
      for (int i = 0; i < Dim; ++i)
        for (int j = i; j < Dim; ++j) d[i][j] = d[j][i] = gm[i][j] - (*g0)(q, sym_index<Dim>(i, j));
      if (!bp) {
        for (int i = 0; i < Dim; ++i)
          for (int j = 0; j < Dim; ++j) drift += d[i][j] * d[i][j];
      } else {
        drift = detail::sym2_norm_sq<Dim>(bp->h_inv, d);
      }
      drift = std::sqrt(drift);
    }
    const double cn = std::sqrt(c2);
    scratch(s_R, q) = R;
    scratch(s_rm, q) = std::sqrt(rm2);
    scratch(s_grad, q) = cn;
    scratch(s_grad2, q) = std::sqrt(h2);
    scratch(s_gradp, q) = power(cn, p) * sqrt_h;
    scratch(s_rm_dmu, q) = rm2 * sqrt_g;
    scratch(s_grad2_dmu, q) = h2 * sqrt_h;
    scratch(s_fair, q) = fair;
    scratch(s_drift, q) = drift;
    scratch(s_lmin, q) = lmin;
  }

  /// <A, B> of two symmetric matrices with both indices raised by hi.
  static double pair_sq(const Mat<Dim>& a, const Mat<Dim>& b, const Mat<Dim>& hi) {
    double s = 0.0;
    for (int i = 0; i < Dim; ++i)
      for (int j = 0; j < Dim; ++j) {
        double row = 0.0;
        for (int k = 0; k < Dim; ++k)
          for (int l = 0; l < Dim; ++l) row += hi[i][k] * hi[j][l] * b[k][l];
        s += row * a[i][j];
      }
    return s;
  }

  void reduce(FlowPointwise& d) {
    const std::size_t n = grid_.points();
    const double vol = grid_.cell_volume();
    d = FlowPointwise{INFINITY, -INFINITY, 0, 0, 0, 0, 0, 0, 0, 0, INFINITY};
    bool bad = false;
    for (std::size_t q = 0; q < n; ++q) {
      const double R = scratch(s_R, q);
      if (!std::isfinite(R)) bad = true;
      d.min_R = std::min(d.min_R, R);
      d.max_R = std::max(d.max_R, R);
      d.sup_rm = std::max(d.sup_rm, scratch(s_rm, q));
      d.sup_grad = std::max(d.sup_grad, scratch(s_grad, q));
      d.sup_grad2 = std::max(d.sup_grad2, scratch(s_grad2, q));
      d.grad_power += scratch(s_gradp, q);
      d.rm_sq += scratch(s_rm_dmu, q);
      d.grad2_sq += scratch(s_grad2_dmu, q);
      d.fairness = std::max(d.fairness, scratch(s_fair, q));
      d.drift = std::max(d.drift, scratch(s_drift, q));
      d.lambda_min = std::min(d.lambda_min, scratch(s_lmin, q));
    }
    d.grad_power *= vol;
    d.rm_sq *= vol;
    d.grad2_sq *= vol;
    if (bad) d.min_R = d.max_R = d.lambda_min = std::numeric_limits<double>::quiet_NaN();
  }

  const BackgroundMetric<Dim>& bg_;
  GridSpec<Dim> grid_;
  std::vector<detail::BackgroundPoint<Dim>> points_;
  std::vector<double> dg_, ddg_, scratch_;
};

/// Quasilinear form of the h-flow right-hand side.
template <int Dim>
Field<Dim> hflow_rhs(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  require(bg.grid().same_points(g.grid()), ErrorCode::invalid_argument, "metric and background grids differ");
  HFlowOperator<Dim> op(bg);
  Field<Dim> out(g.grid(), Valence::sym2);
  op.evaluate(g.field(), out);
  require(out.all_finite(), ErrorCode::singular_metric, "metric inversion failed in h-flow right-hand side");
  return out;
}

/// DeTurck vector W^k = g^{pq} (Gamma^k_pq - Gamma~^k_pq) (vector valence).
template <int Dim>
Field<Dim> deturck_field_W(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  const auto diff = difference_christoffel(g, bg);
  constexpr int S = sym_count<Dim>;
  Field<Dim> w(g.grid(), Valence::vector);
  parallel_for(static_cast<std::int64_t>(g.grid().points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    const auto gi = detail::invert_or_throw<Dim>(g.at(p));
    for (int k = 0; k < Dim; ++k) {
      double s = 0.0;
      for (int a = 0; a < Dim; ++a)
        for (int b = 0; b < Dim; ++b) s += gi[a][b] * diff(p, k * S + sym_index<Dim>(a, b));
      w(p, k) = s;
    }
  });
  return w;
}

/// Literal form -2 Ric(g) + grad_i W_j + grad_j W_i with W_j = g_jk W^k and
/// grad_i W_j = d_i W_j - Gamma(g)^k_ij W_k; d_i W_j by differencing the W_j field.
template <int Dim>
Field<Dim> hflow_rhs_literal(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  const auto& grid = g.grid();
  const auto W = deturck_field_W(g, bg);
  Field<Dim> Wl(grid, Valence::covector);
  for (std::size_t p = 0; p < grid.points(); ++p) {
    const auto gm = g.at(p);
    for (int j = 0; j < Dim; ++j) {
      double s = 0.0;
      for (int k = 0; k < Dim; ++k) s += gm[j][k] * W(p, k);
      Wl(p, j) = s;
    }
  }
  std::vector<Field<Dim>> dW;
  for (int i = 0; i < Dim; ++i) dW.push_back(partial_derivative(Wl, i));
  const auto curv = classical_curvature(g);
  const auto dg = metric_partials(g.field());
  Field<Dim> out(grid, Valence::sym2);
  parallel_for(static_cast<std::int64_t>(grid.points()), [&](std::int64_t ip) {
    const auto p = static_cast<std::size_t>(ip);
    const auto gi = detail::invert_or_throw<Dim>(g.at(p));
    const auto gam = detail::christoffel_from<Dim>(gi, detail::rank3_at(dg, p));
    for (int i = 0; i < Dim; ++i)
      for (int j = i; j < Dim; ++j) {
        double v = -2.0 * curv.ricci(p, sym_index<Dim>(i, j)) + dW[i](p, j) + dW[j](p, i);
        for (int k = 0; k < Dim; ++k) v -= 2.0 * gam[k][i][j] * Wl(p, k);
        out(p, sym_index<Dim>(i, j)) = v;
      }
  });
  return out;
}

struct RhsCrossCheck {
  double max_difference = 0.0;  // sup over points and components
  double scale = 0.0;           // sup of |quasilinear form|
};

/// Compares the two assemblies of the right-hand side.
template <int Dim>
RhsCrossCheck hflow_rhs_crosscheck(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg) {
  const auto a = hflow_rhs(g, bg);
  const auto b = hflow_rhs_literal(g, bg);
  RhsCrossCheck r;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    r.max_difference = std::max(r.max_difference, std::abs(a.values()[i] - b.values()[i]));
    r.scale = std::max(r.scale, std::abs(a.values()[i]));
  }
  return r;
}

namespace detail {

inline FlowDiagnostics diagnostics_row(std::size_t step, double t, const FlowPointwise& d, double p) {
  FlowDiagnostics r;
  r.step = step;
  r.t = t;
  r.min_R = d.min_R;
  r.max_R = d.max_R;
  r.sup_rm = d.sup_rm;
  r.sup_grad_g = d.sup_grad;
  r.sup_grad2_g = d.sup_grad2;
  r.grad_lp_power = d.grad_power;
  r.grad_lp = std::pow(d.grad_power, 1.0 / p);
  r.rm_l2_sq = d.rm_sq;
  r.grad2_l2_sq = d.grad2_sq;
  r.fairness = d.fairness;
  r.c0_drift = d.drift;
  r.lambda_min = d.lambda_min;
  return r;
}

template <int Dim>
double sup_h_distance(const Field<Dim>& a, const Field<Dim>& b, const BackgroundMetric<Dim>& bg) {
  double m = 0.0;
  for (std::size_t p = 0; p < a.points(); ++p) {
    Mat<Dim> d;
    for (int i = 0; i < Dim; ++i)
      for (int j = i; j < Dim; ++j) d[i][j] = d[j][i] = a(p, sym_index<Dim>(i, j)) - b(p, sym_index<Dim>(i, j));
    m = std::max(m, sym2_norm_sq<Dim>(bg.is_flat() ? identity_matrix<Dim>() : bg.h_inv_at(p), d));
  }
  return std::sqrt(m);
}

}  // namespace detail

/// Integrates the h-flow from g0 to T0 with per-step diagnostics.
template <int Dim>
FlowTrajectory<Dim> run_flow(const MetricField<Dim>& g0, const BackgroundMetric<Dim>& bg, const FlowConfig& cfg) {
  cfg.validate();
  require(bg.grid().same_points(g0.grid()), ErrorCode::invalid_argument, "metric and background grids differ");
  const double initial_fairness = g0.fairness(bg);
  require(initial_fairness <= 0.5 * cfg.fairness_eps, ErrorCode::not_fair,
          "background is not (1 + eps/2)-fair to the initial metric");
  const auto& grid = g0.grid();
  HFlowOperator<Dim> op(bg);
  FlowTrajectory<Dim> traj;
  traj.p = cfg.p;
  traj.T0 = cfg.T0;
  traj.background_id = bg.id();
  traj.checkpoints.push_back({0.0, g0});

  Field<Dim> g = g0.field(), k1(grid, Valence::sym2), k2(grid, Valence::sym2), k3(grid, Valence::sym2),
             k4(grid, Valence::sym2), stage(grid, Valence::sym2);
  Field<Dim> last_cp = g;
  const double dx2 = grid.spacing() * grid.spacing();
  auto targets = cfg.checkpoint_times;
  if (targets.empty() || targets.back() < cfg.T0) targets.push_back(cfg.T0);
  std::size_t next_target = 0;
  double t = 0.0;
  double dt_first = 0.0;
  FlowPointwise pw{};
  auto finite = [](const Field<Dim>& f) { return f.all_finite(); };
  auto axpy = [](Field<Dim>& dst, const Field<Dim>& x, double a, const Field<Dim>& y) {
    auto d = dst.values();
    const auto xs = x.values();
    const auto ys = y.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = xs[i] + a * ys[i];
  };

  for (std::size_t step = 0;; ++step) {
    op.evaluate(g, k1, &pw, cfg.p, &g0.field());
    auto row = detail::diagnostics_row(step, t, pw, cfg.p);
    if (step == 0) traj.A = cfg.A >= 0.0 ? cfg.A : row.grad_lp_power;
    if (!traj.diagnostics.empty()) {
      const auto& prev = traj.diagnostics.back();
      const double span = t - prev.t;
      row.cumulative_rm = prev.cumulative_rm + 0.5 * span * (prev.rm_l2_sq + row.rm_l2_sq);
      row.cumulative_grad2 = prev.cumulative_grad2 + 0.5 * span * (prev.grad2_l2_sq + row.grad2_l2_sq);
    }
    const bool healthy = std::isfinite(row.min_R) && finite(k1) && row.lambda_min > 0.0;
    traj.diagnostics.push_back(row);
    if (!healthy) {
      traj.status = FlowStatus::aborted_cfl;
      traj.abort_time = t;
      break;
    }
    if (row.fairness > cfg.fairness_eps) {
      traj.status = FlowStatus::aborted_fairness;
      traj.abort_time = t;
      break;
    }
    if (next_target >= targets.size()) break;
    if (step >= cfg.max_steps) {
      traj.status = FlowStatus::aborted_cfl;
      traj.abort_time = t;
      break;
    }
    const double stable = 0.5 * dx2 * row.lambda_min / Dim;
    double dt = cfg.dt_policy == DtPolicy::cfl ? cfg.c_cfl * dx2 * row.lambda_min / Dim : cfg.dt;
    if (step == 0) dt_first = dt;
    if (cfg.dt_policy == DtPolicy::fixed && dt > stable * (1.0 + 1e-12)) {
      traj.status = FlowStatus::aborted_cfl;
      traj.abort_time = t;
      break;
    }
    if (cfg.dt_policy == DtPolicy::cfl && dt < 1e-3 * dt_first) {
      traj.status = FlowStatus::aborted_cfl;
      traj.abort_time = t;
      break;
    }
    const double target = targets[next_target];
    bool land = false;
    if (t + dt >= target * (1.0 - 1e-12) || target - (t + dt) < 1e-3 * dt) {
      dt = target - t;
      land = true;
    }
    traj.diagnostics.back().dt = dt;
    if (cfg.scheme == TimeScheme::explicit_rk2) {
      axpy(stage, g, dt, k1);
      op.evaluate(stage, k2);
      auto gv = g.values();
      const auto a = k1.values();
      const auto b = k2.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += 0.5 * dt * (a[i] + b[i]);
    } else {
      axpy(stage, g, 0.5 * dt, k1);
      op.evaluate(stage, k2);
      axpy(stage, g, 0.5 * dt, k2);
      op.evaluate(stage, k3);
      axpy(stage, g, dt, k3);
      op.evaluate(stage, k4);
      auto gv = g.values();
      const auto a = k1.values();
      const auto b = k2.values();
      const auto c = k3.values();
      const auto d = k4.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
    }
    t = land ? target : t + dt;
    if (!finite(g)) continue;  // the next evaluation records the failure
    bool store = land;
    if (land) ++next_target;
    if (cfg.checkpoint_stride > 0 && (step + 1) % static_cast<std::size_t>(cfg.checkpoint_stride) == 0) store = true;
    if (!store && detail::sup_h_distance(g, last_cp, bg) > cfg.checkpoint_drift * row.lambda_min) store = true;
    if (store) {
      try {
        traj.checkpoints.push_back({t, MetricField<Dim>(g)});
        last_cp = g;
      } catch (const Error&) {
        // lost definiteness; the next evaluation aborts the run
      }
    }
  }
  return traj;
}

/// Quantities with a decay bound.
enum class DecayQuantity { grad_g, grad2_g, rm };

inline std::string to_string(DecayQuantity q) {
  switch (q) {
    case DecayQuantity::grad_g: return "grad_g";
    case DecayQuantity::grad2_g: return "grad2_g";
    case DecayQuantity::rm: return "rm";
  }
  return "unknown";
}

/// Exponent of the decay bound t^{-e}: n/(2p) for grad_g, n/(4p) + 3/4 otherwise.
inline double decay_exponent(DecayQuantity q, int n, double p) {
  return q == DecayQuantity::grad_g ? n / (2.0 * p) : n / (4.0 * p) + 0.75;
}

struct DecayFit {
  std::string quantity;
  double t1 = 0.0, t2 = 0.0;
  double slope = 0.0;
  double exponent = 0.0;  // theoretical e in C / t^e
  double bound = 0.0;     // -e - 0.1
  int samples = 0;
  bool skipped = false;   // quantity identically zero
  bool pass = false;
};

inline void to_json(nlohmann::json& j, const DecayFit& f) {
  j = nlohmann::json{{"quantity", f.quantity}, {"t1", f.t1},       {"t2", f.t2},         {"slope", f.slope},
                     {"exponent", f.exponent}, {"bound", f.bound}, {"samples", f.samples}, {"skipped", f.skipped},
                     {"pass", f.pass}};
}

/// Least-squares slope of log sup-norm against log t over diagnostics rows in
/// [t1, t2], thinned to at most 64 rows spread evenly in log t.
template <int Dim>
DecayFit decay_fit(const FlowTrajectory<Dim>& traj, DecayQuantity q, double t1, double t2) {
  require(t1 > 0.0 && t2 > t1 && t2 <= traj.T0 * (1.0 + 1e-12), ErrorCode::invalid_argument,
          "decay window must lie in (0, T0]");
  auto value = [q](const FlowDiagnostics& d) {
    return q == DecayQuantity::grad_g ? d.sup_grad_g : (q == DecayQuantity::grad2_g ? d.sup_grad2_g : d.sup_rm);
  };
  std::vector<const FlowDiagnostics*> rows;
  for (const auto& d : traj.diagnostics)
    if (d.t >= t1 * (1.0 - 1e-12) && d.t <= t2 * (1.0 + 1e-12)) rows.push_back(&d);
  DecayFit f;
  f.quantity = to_string(q);
  f.t1 = t1;
  f.t2 = t2;
  f.exponent = decay_exponent(q, Dim, traj.p);
  f.bound = -f.exponent - 0.1;
  require(rows.size() >= 8, ErrorCode::insufficient_samples, "decay window holds fewer than 8 samples");
  double peak = 0.0;
  for (const auto* r : rows) peak = std::max(peak, std::abs(value(*r)));
  if (peak <= 1e-12) {
    f.skipped = true;
    f.pass = true;
    f.samples = static_cast<int>(rows.size());
    return f;
  }
  std::vector<double> x, y;
  const std::size_t target = 64;
  const double l1 = std::log(rows.front()->t), l2 = std::log(rows.back()->t);
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < target && cursor < rows.size(); ++k) {
    const double lt = l1 + (l2 - l1) * static_cast<double>(k) / (target - 1);
    while (cursor + 1 < rows.size() && std::log(rows[cursor]->t) < lt) ++cursor;
    if (!x.empty() && rows[cursor]->t == std::exp(x.back())) continue;
    x.push_back(std::log(rows[cursor]->t));
    y.push_back(std::log(value(*rows[cursor])));
  }
  require(x.size() >= 8, ErrorCode::insufficient_samples, "decay window holds fewer than 8 distinct times");
  const auto fit = least_squares(x, y);
  f.slope = fit.slope;
  f.samples = fit.samples;
  f.pass = f.slope >= f.bound;
  return f;
}

struct BarrierReport {
  bool applicable = true;
  double A = 0.0;
  double max_value = 0.0;  // max_t int |grad~ g(t)|^p dmu_h
  double ratio = 0.0;      // max_value / A
  bool pass = true;
};

inline void to_json(nlohmann::json& j, const BarrierReport& b) {
  j = nlohmann::json{{"applicable", b.applicable}, {"A", b.A}, {"max_value", b.max_value}, {"ratio", b.ratio},
                     {"pass", b.pass}};
}

/// int |grad~ g(t)|^p dmu_h <= 10 A at every recorded time; not applicable to aborted runs.
template <int Dim>
BarrierReport barrier_check(const FlowTrajectory<Dim>& traj, double A) {
  BarrierReport b;
  b.A = A;
  if (!traj.completed()) {
    b.applicable = false;
    return b;
  }
  for (const auto& d : traj.diagnostics) b.max_value = std::max(b.max_value, d.grad_lp_power);
  b.ratio = A > 0.0 ? b.max_value / A : (b.max_value > 0.0 ? INFINITY : 0.0);
  b.pass = b.max_value <= 10.0 * A;
  return b;
}

struct SpaceTimeIntegrals {
  double rm = 0.0;     // int_0^T int |Rm|^2 dmu_g dt
  double grad2 = 0.0;  // int_0^T int |grad~^2 g|^2 dmu_h dt
};

template <int Dim>
SpaceTimeIntegrals integral_rm_check(const FlowTrajectory<Dim>& traj) {
  require(!traj.diagnostics.empty(), ErrorCode::invalid_argument, "empty trajectory");
  return {traj.diagnostics.back().cumulative_rm, traj.diagnostics.back().cumulative_grad2};
}

}  // namespace roughflow
