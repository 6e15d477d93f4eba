#include <gtest/gtest.h>

#include <cmath>

#include "roughflow/analytic.hpp"
#include "roughflow/fit.hpp"
#include "roughflow/flow.hpp"

using namespace roughflow;

namespace {

TrigSeries<2> factor2() {
  return TrigSeries<2>({TrigMode<2>::sine(0.08, {1, 1}), {0.05, {0, 2}, {0.0, 0.3}}, {0.04, {1, 0}, {0.7, 0.0}}});
}

TrigSeries<3> factor3() {
  return TrigSeries<3>({TrigMode<3>::sine(0.08, {1, 0, 1}), {0.05, {0, 1, 1}, {0.0, 0.3, 0.0}}});
}

TrigSeries<2> background_factor() { return TrigSeries<2>({TrigMode<2>::sine(0.1, {0, 1}), {0.06, {1, 1}, {0.2, 0.0}}}); }

template <int Dim>
MetricField<Dim> conformal(const GridSpec<Dim>& grid, const TrigSeries<Dim>& w) {
  return MetricField<Dim>::conformal(w.sample(grid));
}

MetricField<2> anisotropic(const GridSpec<2>& grid) {
  return MetricField<2>::sample(grid, [](const Vec<2>& x) {
    const double s = std::sin(two_pi * x[0]), c = std::cos(two_pi * x[1]);
    return Mat<2>{{{1.0 + 0.1 * s, 0.05 * c}, {0.05 * c, 1.0 - 0.08 * c}}};
  });
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

FlowConfig short_run(double T0) {
  FlowConfig c;
  c.T0 = T0;
  c.fairness_eps = 1.0;
  return c;
}

}  // namespace

TEST(HFlowRhs, FlatMetricIsFixedPoint) {
  const GridSpec<2> grid(32, 2);
  const auto r = hflow_rhs(MetricField<2>::identity(grid), BackgroundMetric<2>::flat(grid));
  EXPECT_LT(r.max_abs(), 1e-10);
  const GridSpec<3> g3(12, 2);
  EXPECT_LT(hflow_rhs(MetricField<3>::identity(g3, 2.0), BackgroundMetric<3>::flat(g3)).max_abs(), 1e-10);
}

TEST(HFlowRhs, BackgroundEvolvesByMinusTwiceItsRicci) {
  // grad~ h = 0, so at g = h only the curvature terms survive: rhs = -2 Ric(h)
  // up to the truncation error of the discrete second derivatives of h.
  std::vector<double> hs, errs;
  for (int n : {32, 64, 128}) {
    const GridSpec<2> grid(n, 2);
    const auto bg = BackgroundMetric<2>::conformal(grid, background_factor());
    auto r = hflow_rhs(MetricField<2>(bg.h()), bg);
    EXPECT_GT(r.max_abs(), 1.0);
    r.axpy(2.0, bg.ricci());
    hs.push_back(grid.spacing());
    errs.push_back(r.max_abs());
  }
  EXPECT_LT(errs.back(), 1e-2);
  EXPECT_GE(convergence_order(hs, errs), 1.8);
}

TEST(HFlowRhs, TwoDimensionalConformalOracle) {
  // g = e^{2u} delta on a flat background: rhs = 2 lap u delta.
  std::vector<double> hs, errs;
  const auto w = factor2();
  for (int n : {32, 64, 128}) {
    const GridSpec<2> grid(n, 4);
    const auto r = hflow_rhs(conformal(grid, w), BackgroundMetric<2>::flat(grid));
    double err = 0.0;
    for (std::size_t p = 0; p < grid.points(); ++p) {
      const double lap = w.laplacian(grid.coordinate(p));
      err = std::max({err, std::abs(r(p, 0) - 2 * lap), std::abs(r(p, 1)), std::abs(r(p, 2) - 2 * lap)});
    }
    hs.push_back(grid.spacing());
    errs.push_back(err);
  }
  EXPECT_LT(errs.back(), 1e-4);
  EXPECT_GE(convergence_order(hs, errs), 3.5);
}

TEST(HFlowRhs, ThreeDimensionalConformalOracle) {
  // rhs = 2 lap u delta_ij + 2 u_i u_j
  const auto w = factor3();
  std::vector<double> hs, errs;
  for (int n : {16, 32}) {
    const GridSpec<3> grid(n, 4);
    const auto r = hflow_rhs(conformal(grid, w), BackgroundMetric<3>::flat(grid));
    double err = 0.0;
    for (std::size_t p = 0; p < grid.points(); ++p) {
      const auto x = grid.coordinate(p);
      const auto du = w.gradient(x);
      const double lap = w.laplacian(x);
      for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
          const double expect = (i == j ? 2 * lap : 0.0) + 2 * du[i] * du[j];
          err = std::max(err, std::abs(r(p, sym_index<3>(i, j)) - expect));
        }
    }
    hs.push_back(grid.spacing());
    errs.push_back(err);
  }
  EXPECT_LT(errs.back(), 2e-3);
  EXPECT_GE(convergence_order(hs, errs), 3.0);
}

TEST(HFlowRhs, QuasilinearAndLiteralFormsAgree) {
  std::vector<double> hs, diffs;
  for (int n : {32, 64, 128}) {
    const GridSpec<2> grid(n, 2);
    const auto bg = BackgroundMetric<2>::conformal(grid, background_factor());
    const auto c = hflow_rhs_crosscheck(anisotropic(grid), bg);
    EXPECT_GT(c.scale, 0.1);
    hs.push_back(grid.spacing());
    diffs.push_back(c.max_difference);
  }
  EXPECT_LT(diffs.back(), 1e-2);
  EXPECT_GE(convergence_order(hs, diffs), 1.8);
}

TEST(HFlowRhs, FormsAgreeInThreeDimensions) {
  const GridSpec<3> grid(24, 4);
  const auto c = hflow_rhs_crosscheck(conformal(grid, factor3()), BackgroundMetric<3>::flat(grid));
  EXPECT_LT(c.max_difference, 1e-3 * c.scale);
}

TEST(HFlowRhs, DeTurckFieldVanishesForTwoDimensionalConformal) {
  const GridSpec<2> grid(64, 4);
  EXPECT_LT(deturck_field_W(conformal(grid, factor2()), BackgroundMetric<2>::flat(grid)).max_abs(), 1e-12);
}

TEST(RunFlow, FlatMetricStaysFixed) {
  const GridSpec<2> grid(16, 2);
  const auto bg = BackgroundMetric<2>::flat(grid);
  const auto t = run_flow(MetricField<2>::identity(grid), bg, short_run(0.01));
  ASSERT_TRUE(t.completed());
  EXPECT_EQ(t.diagnostics.back().t, 0.01);
  EXPECT_LT(t.diagnostics.back().c0_drift, 1e-12);
  EXPECT_EQ(t.A, 0.0);
}

TEST(RunFlow, MinimumScalarCurvatureIsNondecreasing) {
  const GridSpec<2> grid(32, 2);
  const auto t = run_flow(conformal(grid, factor2()), BackgroundMetric<2>::flat(grid), short_run(0.02));
  ASSERT_TRUE(t.completed());
  for (std::size_t k = 1; k < t.diagnostics.size(); ++k)
    EXPECT_GE(t.diagnostics[k].min_R, t.diagnostics[k - 1].min_R - 1e-9) << k;
  EXPECT_GT(t.diagnostics.back().min_R, t.diagnostics.front().min_R);
  // gradients relax
  EXPECT_LT(t.diagnostics.back().sup_grad_g, t.diagnostics.front().sup_grad_g);
}

TEST(RunFlow, HalvingTheStepChangesTheResultAtSecondOrder) {
  const GridSpec<2> grid(24, 2);
  const auto bg = BackgroundMetric<2>::conformal(grid, background_factor());
  const auto g0 = anisotropic(grid);
  std::vector<Field<2>> finals;
  for (double dt : {3e-4, 1.5e-4, 7.5e-5}) {
    auto c = short_run(0.02);
    c.dt_policy = DtPolicy::fixed;
    c.dt = dt;
    const auto t = run_flow(g0, bg, c);
    ASSERT_TRUE(t.completed());
    finals.push_back(t.final_metric().field());
  }
  const double d1 = (finals[0] - finals[1]).max_abs();
  const double d2 = (finals[1] - finals[2]).max_abs();
  EXPECT_GT(d1, 0.0);
  EXPECT_NEAR(std::log2(d1 / d2), 2.0, 0.3);
}

TEST(RunFlow, FourthOrderSchemeAgreesWithSecondOrder) {
  const GridSpec<2> grid(24, 2);
  const auto bg = BackgroundMetric<2>::flat(grid);
  const auto g0 = conformal(grid, factor2());
  auto c = short_run(0.01);
  const auto a = run_flow(g0, bg, c);
  c.scheme = TimeScheme::explicit_rk4;
  const auto b = run_flow(g0, bg, c);
  EXPECT_LT((a.final_metric().field() - b.final_metric().field()).max_abs(), 5e-5);
}

TEST(RunFlow, CheckpointsLandOnRequestedTimes) {
  const GridSpec<2> grid(16, 2);
  auto c = short_run(0.01);
  c.checkpoint_times = {0.001, 0.0025, 0.005};
  const auto t = run_flow(conformal(grid, factor2()), BackgroundMetric<2>::flat(grid), c);
  std::vector<double> times;
  for (const auto& cp : t.checkpoints) times.push_back(cp.t);
  for (double want : {0.0, 0.001, 0.0025, 0.005, 0.01})
    EXPECT_NE(std::find(times.begin(), times.end(), want), times.end()) << want;
  EXPECT_TRUE(std::is_sorted(times.begin(), times.end()));
  EXPECT_EQ(t.diagnostics.back().t, 0.01);
}

TEST(RunFlow, RejectsUnfairBackgroundAndBadConfig) {
  const GridSpec<2> grid(16, 2);
  const auto bg = BackgroundMetric<2>::flat(grid);
  auto c = short_run(0.01);
  c.fairness_eps = 0.25;
  EXPECT_EQ(code_of([&] { run_flow(MetricField<2>::identity(grid, 1.2), bg, c); }), ErrorCode::not_fair);
  c.c_cfl = 0.7;
  EXPECT_EQ(code_of([&] { run_flow(MetricField<2>::identity(grid), bg, c); }), ErrorCode::invalid_argument);
  c = short_run(0.01);
  c.checkpoint_times = {0.005, 0.002};
  EXPECT_EQ(code_of([&] { run_flow(MetricField<2>::identity(grid), bg, c); }), ErrorCode::invalid_argument);
}

TEST(RunFlow, UnstableFixedStepAborts) {
  const GridSpec<2> grid(16, 2);
  auto c = short_run(0.01);
  c.dt_policy = DtPolicy::fixed;
  c.dt = 1e-3;
  const auto t = run_flow(conformal(grid, factor2()), BackgroundMetric<2>::flat(grid), c);
  EXPECT_EQ(t.status, FlowStatus::aborted_cfl);
  EXPECT_EQ(t.abort_time, 0.0);
  EXPECT_FALSE(barrier_check(t, 1.0).applicable);
}

TEST(RunFlow, DiagnosticsMatchStandaloneMeasurements) {
  const GridSpec<2> grid(32, 2);
  const auto bg = BackgroundMetric<2>::conformal(grid, background_factor());
  const auto g = anisotropic(grid);
  auto c = short_run(0.001);
  c.p = 3.0;
  const auto t = run_flow(g, bg, c);
  const auto& d = t.diagnostics.front();
  const auto curv = classical_curvature(g);
  EXPECT_NEAR(d.min_R, curv.scalar.min_value(), 1e-10);
  EXPECT_NEAR(d.max_R, curv.scalar.max_value(), 1e-10);
  const auto grad = tensor_norm(covariant_derivative(g, bg), bg);
  EXPECT_NEAR(d.sup_grad_g, grad.max_value(), 1e-10);
  EXPECT_NEAR(d.grad_lp, lp_norm_of_magnitude(grad, 3.0, bg.sqrt_det()), 1e-10);
  EXPECT_NEAR(t.A, d.grad_lp_power, 1e-14);
  EXPECT_NEAR(d.fairness, g.fairness(bg), 1e-12);
  // 2D: |Rm|^2 = R^2
  double rm = 0.0;
  for (std::size_t p = 0; p < grid.points(); ++p) rm = std::max(rm, std::abs(curv.scalar(p)));
  EXPECT_NEAR(d.sup_rm, rm, 1e-8 * rm);
}

TEST(RunFlow, FlatBackgroundDiagnosticsMatchStandaloneMeasurements) {
  // 36 is not a multiple of the lane width, so both kernels are exercised.
  for (int n : {32, 36}) {
    const GridSpec<2> grid(n, 4);
    const auto bg = BackgroundMetric<2>::flat(grid);
    const auto g = anisotropic(grid);
    auto c = short_run(0.001);
    c.p = 2.5;
    const auto t = run_flow(g, bg, c);
    const auto& d = t.diagnostics.front();
    const auto curv = classical_curvature(g);
    EXPECT_NEAR(d.min_R, curv.scalar.min_value(), 1e-9);
    EXPECT_NEAR(d.max_R, curv.scalar.max_value(), 1e-9);
    const auto grad = tensor_norm(covariant_derivative(g, bg), bg);
    EXPECT_NEAR(d.sup_grad_g, grad.max_value(), 1e-12);
    EXPECT_NEAR(d.grad_lp, lp_norm_of_magnitude(grad, 2.5, bg.sqrt_det()), 1e-12);
    EXPECT_NEAR(d.fairness, g.fairness(bg), 1e-12);
    EXPECT_NEAR(d.lambda_min, g.lambda_min(), 1e-14);
    double rm = 0.0, rm_int = 0.0;
    const auto dmu = volume_density(g);
    for (std::size_t p = 0; p < grid.points(); ++p) {
      rm = std::max(rm, std::abs(curv.scalar(p)));
      rm_int += curv.scalar(p) * curv.scalar(p) * dmu(p) * grid.cell_volume();
    }
    EXPECT_NEAR(d.sup_rm, rm, 1e-8 * rm);
    EXPECT_NEAR(d.rm_l2_sq, rm_int, 1e-8 * rm_int);
    // the flat right-hand side agrees with the background-aware assembly
    const auto conf = BackgroundMetric<2>::conformal(grid, TrigSeries<2>({}, 0.0));
    const auto a = hflow_rhs(g, bg), b = hflow_rhs(g, conf);
    EXPECT_LT((a - b).max_abs(), 1e-10 * a.max_abs());
  }
}

TEST(RunFlow, SpaceTimeIntegralIsTrapezoidSum) {
  const GridSpec<2> grid(16, 2);
  const auto t = run_flow(conformal(grid, factor2()), BackgroundMetric<2>::flat(grid), short_run(0.005));
  double s = 0.0;
  for (std::size_t k = 1; k < t.diagnostics.size(); ++k) {
    const auto &a = t.diagnostics[k - 1], &b = t.diagnostics[k];
    s += 0.5 * (b.t - a.t) * (a.rm_l2_sq + b.rm_l2_sq);
  }
  EXPECT_NEAR(integral_rm_check(t).rm, s, 1e-14 * (1 + s));
  EXPECT_GT(s, 0.0);
}

TEST(DecayFit, RequiresSamplesAndSkipsFlat) {
  const GridSpec<2> grid(16, 2);
  const auto bg = BackgroundMetric<2>::flat(grid);
  const auto flat = run_flow(MetricField<2>::identity(grid), bg, short_run(0.01));
  const auto f = decay_fit(flat, DecayQuantity::rm, 0.001, 0.01);
  EXPECT_TRUE(f.skipped);
  EXPECT_TRUE(f.pass);
  auto c = short_run(0.01);
  c.dt_policy = DtPolicy::fixed;
  c.dt = 0.002;
  c.c_cfl = 0.5;
  const auto coarse = run_flow(MetricField<2>::identity(grid), bg, c);
  EXPECT_EQ(code_of([&] { decay_fit(coarse, DecayQuantity::rm, 0.001, 0.01); }), ErrorCode::insufficient_samples);
}

TEST(DecayFit, SmoothFlowSatisfiesBounds) {
  // Smooth data relaxes exponentially, so the window stays short of the
  // e^{-8 pi^2 t} regime where no power-law bound holds in slope form.
  const GridSpec<2> grid(48, 2);
  const auto t = run_flow(conformal(grid, factor2()), BackgroundMetric<2>::flat(grid), short_run(0.002));
  for (auto q : {DecayQuantity::grad_g, DecayQuantity::grad2_g, DecayQuantity::rm}) {
    const auto f = decay_fit(t, q, 0.0002, 0.002);
    EXPECT_TRUE(f.pass) << f.quantity << ' ' << f.slope;
    EXPECT_GE(f.samples, 8);
  }
  EXPECT_DOUBLE_EQ(decay_exponent(DecayQuantity::grad_g, 2, 4.0), 0.25);
  EXPECT_DOUBLE_EQ(decay_exponent(DecayQuantity::rm, 3, 6.0), 0.125 + 0.75);
}

TEST(Barrier, HoldsForSmoothFlow) {
  const GridSpec<2> grid(32, 2);
  const auto t = run_flow(conformal(grid, factor2()), BackgroundMetric<2>::flat(grid), short_run(0.01));
  const auto b = barrier_check(t, t.A);
  EXPECT_TRUE(b.applicable);
  EXPECT_TRUE(b.pass);
  EXPECT_NEAR(b.ratio, 1.0, 1e-12);  // gradients only decrease
  EXPECT_FALSE(barrier_check(t, 0.05 * t.A).pass);
}

TEST(FlowTrajectory, CsvShape) {
  const GridSpec<2> grid(16, 2);
  const auto t = run_flow(conformal(grid, factor2()), BackgroundMetric<2>::flat(grid), short_run(0.002));
  const auto csv = t.diagnostics_csv();
  EXPECT_EQ(csv.rfind(std::string("# roughflow flow diagnostics v1\n") + flow_csv_header() + "\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), t.diagnostics.size() + 2);
}
