#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "roughflow/geometry.hpp"

using namespace roughflow;

namespace {

constexpr double pi = std::numbers::pi;

TrigSeries<2> sine_sine(double amp) { return TrigSeries<2>({TrigMode<2>::sine(amp, {1, 1})}); }

TrigSeries<2> mixed_factor() {
  return TrigSeries<2>({TrigMode<2>::sine(0.1, {1, 1}), TrigMode<2>{0.05, {0, 2}, {0.0, 0.3}},
                        TrigMode<2>{0.04, {1, 0}, {0.7, 0.0}}});
}

template <int Dim>
MetricField<Dim> conformal_metric(const GridSpec<Dim>& g, const TrigSeries<Dim>& u) {
  return MetricField<Dim>::conformal(u.sample(g));
}

TrigSeries<2> perturbed_background() { return TrigSeries<2>({TrigMode<2>{0.08, {1, 0}, {0.2, 0.0}}, TrigMode<2>::sine(0.05, {0, 1})}); }

/// Exact R of e^{2u} delta on T^2.
double conformal_scalar_2d(const TrigSeries<2>& u, const Vec<2>& x) {
  return -2.0 * std::exp(-2.0 * u.value(x)) * u.laplacian(x);
}

double conformal_scalar_3d(const TrigSeries<3>& u, const Vec<3>& x) {
  const auto d = u.gradient(x);
  return -std::exp(-2.0 * u.value(x)) * (4.0 * u.laplacian(x) + 2.0 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]));
}

/// Exact integral of R phi dmu_g by fine quadrature of the analytic integrand.
double exact_curvature_integral(const TrigSeries<2>& u, const TestFunction<2>& phi) {
  GridSpec<2> fine(512);
  double s = 0.0;
  for (std::size_t p = 0; p < fine.points(); ++p) {
    const auto x = fine.coordinate(p);
    s += conformal_scalar_2d(u, x) * phi.value(x) * std::exp(2.0 * u.value(x));
  }
  return s * fine.cell_volume();
}

double fitted_order(double coarse, double fine) { return std::log2(coarse / fine); }

}  // namespace

TEST(Background, FlatHasZeroSymbols) {
  GridSpec<2> g(16);
  auto bg = BackgroundMetric<2>::flat(g);
  EXPECT_TRUE(bg.is_flat());
  EXPECT_EQ(bg.christoffel().max_abs(), 0.0);
  EXPECT_EQ(bg.ricci().max_abs(), 0.0);
  EXPECT_EQ(bg.curvature_bounds()[0], 0.0);
}

TEST(Background, ConformalSymbolsMatchClosedForm) {
  double prev = 0.0;
  for (int n : {32, 64}) {
    auto bg = BackgroundMetric<2>::conformal(GridSpec<2>(n), perturbed_background());
    auto diff = bg.christoffel();
    diff -= bg.christoffel_analytic();
    if (prev > 0.0) {
      EXPECT_GE(fitted_order(prev, diff.max_abs()), 1.8);
    }
    prev = diff.max_abs();
  }
  auto bg = BackgroundMetric<2>::conformal(GridSpec<2>(32), perturbed_background());
  // 2D: Ric(h) = (R/2) h with R = -2 e^{-2w} lap w.
  const auto w = perturbed_background();
  for (std::size_t p = 0; p < 32 * 32; ++p) {
    const auto x = bg.grid().coordinate(p);
    const double r = -2.0 * std::exp(-2.0 * w.value(x)) * w.laplacian(x);
    ASSERT_NEAR(bg.scalar()(p), r, 1e-12);
    ASSERT_NEAR(bg.ricci()(p, 0), 0.5 * r * std::exp(2.0 * w.value(x)), 1e-12);
  }
  EXPECT_GT(bg.curvature_bounds()[0], 0.0);
  EXPECT_GT(bg.curvature_bounds()[1], 0.0);
}

TEST(MetricFieldTest, RejectsIndefinite) {
  GridSpec<2> g(8);
  Field<2> f(g, Valence::sym2);
  f(3, 0) = 1.0;
  EXPECT_THROW(MetricField<2>{f}, Error);
  try {
    MetricField<2>{f};
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::singular_metric);
  }
}

TEST(MetricFieldTest, EllipticityAndFairness) {
  GridSpec<2> g(16);
  auto m = MetricField<2>::identity(g, 1.2);
  EXPECT_DOUBLE_EQ(m.lambda_min(), 1.2);
  EXPECT_NEAR(m.fairness(BackgroundMetric<2>::flat(g)), 0.2, 1e-14);
  auto s = MetricField<2>::identity(g, 0.8);
  EXPECT_NEAR(s.fairness(BackgroundMetric<2>::flat(g)), 0.25, 1e-14);
}

TEST(DifferenceChristoffel, VanishesOnBackground) {
  GridSpec<2> grid(32, 4);
  auto bg = BackgroundMetric<2>::conformal(grid, perturbed_background());
  EXPECT_LT(difference_christoffel(MetricField<2>(bg.h()), bg).max_abs(), 1e-12);
  Field<2> scaled = bg.h();
  scaled *= 2.5;
  EXPECT_LT(difference_christoffel(MetricField<2>(scaled), bg).max_abs(), 1e-12);
}

TEST(DifferenceChristoffel, ConformalOracle) {
  const auto u = TrigSeries<2>({TrigMode<2>::sine(0.1, {1, 0})});
  double prev = 0.0;
  for (int n : {32, 64}) {
    GridSpec<2> grid(n);
    const auto gam = difference_christoffel(conformal_metric(grid, u), BackgroundMetric<2>::flat(grid));
    double err = 0.0;
    for (std::size_t p = 0; p < grid.points(); ++p) {
      const auto d = u.gradient(grid.coordinate(p));
      for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
          for (int j = i; j < 2; ++j) {
            const double exact = (k == i ? d[j] : 0.0) + (k == j ? d[i] : 0.0) - (i == j ? d[k] : 0.0);
            err = std::max(err, std::abs(gam(p, k * 3 + sym_index<2>(i, j)) - exact));
          }
    }
    if (prev > 0.0) {
      EXPECT_GE(fitted_order(prev, err), 1.8);
    }
    prev = err;
  }
}

TEST(PairingVector, ConstantMultipleIsZero) {
  GridSpec<3> grid(8);
  auto bg = BackgroundMetric<3>::flat(grid);
  EXPECT_EQ(pairing_vector_V(MetricField<3>::identity(grid, 3.0), bg).max_abs(), 0.0);
}

TEST(PairingVector, OneVariableDiagonalMetric) {
  // g = diag(a(x2), 1): V^1 = 0, V^2 = -g^22 g^11 d_2 g_11.
  auto a = [](double y) { return 1.0 + 0.3 * std::sin(2 * pi * y); };
  auto da = [](double y) { return 0.6 * pi * std::cos(2 * pi * y); };
  GridSpec<2> grid(128, 4);
  auto g = MetricField<2>::sample(grid, [&](const Vec<2>& x) { return Mat<2>{{{a(x[1]), 0.0}, {0.0, 1.0}}}; });
  const auto v = pairing_vector_V(g, BackgroundMetric<2>::flat(grid));
  for (std::size_t p = 0; p < grid.points(); ++p) {
    const double y = grid.coordinate(p)[1];
    ASSERT_NEAR(v(p, 0), 0.0, 1e-14);
    ASSERT_NEAR(v(p, 1), -da(y) / a(y), 1e-6);
  }
}

TEST(PairingVector, ConformalOracle) {
  const auto u = sine_sine(0.1);
  GridSpec<2> grid(64, 4);
  const auto v = pairing_vector_V(conformal_metric(grid, u), BackgroundMetric<2>::flat(grid));
  for (std::size_t p = 0; p < grid.points(); ++p) {
    const auto x = grid.coordinate(p);
    const auto d = u.gradient(x);
    for (int k = 0; k < 2; ++k) ASSERT_NEAR(v(p, k), -2.0 * std::exp(-2.0 * u.value(x)) * d[k], 2e-5);
  }
}

TEST(ScalarF, FlatAndConstantMetrics) {
  GridSpec<2> grid(16);
  auto bg = BackgroundMetric<2>::flat(grid);
  EXPECT_EQ(scalar_F(MetricField<2>::identity(grid), bg).max_abs(), 0.0);
  EXPECT_EQ(scalar_F(MetricField<2>::identity(grid, 0.3), bg).max_abs(), 0.0);
}

TEST(ScalarF, BreakdownSumsToTotal) {
  GridSpec<2> grid(32);
  auto bg = BackgroundMetric<2>::conformal(grid, perturbed_background());
  const auto b = scalar_F_breakdown(conformal_metric(grid, mixed_factor()), bg);
  for (std::size_t p = 0; p < grid.points(); ++p)
    ASSERT_DOUBLE_EQ(b.total(p), b.trace_ricci(p) + b.grad_inverse_gamma(p) + b.grad_inverse_trace(p) + b.gamma_gamma(p));
  const auto csv = b.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "x0,x1,total,trace_ricci,grad_inverse_gamma,grad_inverse_trace,gamma_gamma");
}

TEST(ScalarF, DivergencePlusFIsScalarCurvature) {
  // Pointwise identity R = div V + F with a non-conformal metric and a curved background.
  GridSpec<2> grid(128, 4);
  auto bg = BackgroundMetric<2>::conformal(grid, perturbed_background());
  auto g = MetricField<2>::sample(grid, [](const Vec<2>& x) {
    const double s = std::sin(2 * pi * x[0]), c = std::cos(2 * pi * x[1]);
    return Mat<2>{{{1.0 + 0.2 * s * c, 0.1 * std::sin(2 * pi * (x[0] + x[1]))}, {0.1 * std::sin(2 * pi * (x[0] + x[1])), 1.1 - 0.15 * c}}};
  });
  const auto v = pairing_vector_V(g, bg);
  const auto f = scalar_F(g, bg);
  const auto r = classical_curvature(g).scalar;
  // div_h V = (1/sqrt h) d_k (sqrt h V^k)
  Field<2> div(grid, Valence::scalar);
  for (int k = 0; k < 2; ++k) {
    Field<2> flux(grid, Valence::scalar);
    for (std::size_t p = 0; p < grid.points(); ++p) flux(p) = bg.sqrt_det()(p) * v(p, k);
    div += partial_derivative(flux, k);
  }
  double err = 0.0;
  for (std::size_t p = 0; p < grid.points(); ++p)
    err = std::max(err, std::abs(div(p) / bg.sqrt_det()(p) + f(p) - r(p)));
  EXPECT_LT(err, 1e-4 * r.max_abs());
}

TEST(ClassicalCurvature, FlatIsZero) {
  GridSpec<3> grid(8);
  const auto c = classical_curvature(MetricField<3>::identity(grid, 2.0));
  EXPECT_EQ(c.riemann.max_abs(), 0.0);
  EXPECT_EQ(c.scalar.max_abs(), 0.0);
}

TEST(ClassicalCurvature, ConformalTwoDimensional) {
  const auto u = sine_sine(0.1);
  double prev = 0.0;
  for (int n : {32, 64}) {
    GridSpec<2> grid(n);
    const auto c = classical_curvature(conformal_metric(grid, u));
    double err = 0.0;
    for (std::size_t p = 0; p < grid.points(); ++p)
      err = std::max(err, std::abs(c.scalar(p) - conformal_scalar_2d(u, grid.coordinate(p))));
    if (prev > 0.0) {
      EXPECT_GE(fitted_order(prev, err), 1.8);
    }
    prev = err;
  }
}

TEST(ClassicalCurvature, ConformalThreeDimensional) {
  const auto u = TrigSeries<3>({TrigMode<3>::sine(0.1, {1, 1, 0}), TrigMode<3>{0.05, {0, 1, 1}, {0.0, 0.0, 0.4}}});
  double prev = 0.0;
  for (int n : {16, 32}) {
    GridSpec<3> grid(n);
    const auto c = classical_curvature(conformal_metric(grid, u));
    double err = 0.0;
    for (std::size_t p = 0; p < grid.points(); ++p)
      err = std::max(err, std::abs(c.scalar(p) - conformal_scalar_3d(u, grid.coordinate(p))));
    if (prev > 0.0) {
      EXPECT_GE(fitted_order(prev, err), 1.8);
    }
    prev = err;
  }
}

TEST(ClassicalCurvature, ProductMetric) {
  // g = diag(a(y), b(x)): K = -1/(2 sqrt(ab)) [d_x(b_x / sqrt(ab)) + d_y(a_y / sqrt(ab))], R = 2K.
  auto a = [](double y) { return 1.0 + 0.2 * std::sin(2 * pi * y); };
  auto da = [](double y) { return 0.4 * pi * std::cos(2 * pi * y); };
  auto dda = [](double y) { return -0.8 * pi * pi * std::sin(2 * pi * y); };
  auto b = [](double x) { return 1.0 + 0.3 * std::cos(4 * pi * x); };
  auto db = [](double x) { return -1.2 * pi * std::sin(4 * pi * x); };
  auto ddb = [](double x) { return -4.8 * pi * pi * std::cos(4 * pi * x); };
  auto exact = [&](const Vec<2>& x) {
    const double A = a(x[1]), B = b(x[0]), s = std::sqrt(A * B);
    const double tx = ddb(x[0]) / s - A * db(x[0]) * db(x[0]) / (2.0 * s * s * s);
    const double ty = dda(x[1]) / s - B * da(x[1]) * da(x[1]) / (2.0 * s * s * s);
    return 2.0 * (-1.0 / (2.0 * s)) * (tx + ty);
  };
  double prev = 0.0;
  for (int n : {64, 128}) {
    GridSpec<2> grid(n, 4);
    auto g = MetricField<2>::sample(grid, [&](const Vec<2>& x) { return Mat<2>{{{a(x[1]), 0.0}, {0.0, b(x[0])}}}; });
    const auto c = classical_curvature(g);
    double err = 0.0;
    for (std::size_t p = 0; p < grid.points(); ++p) err = std::max(err, std::abs(c.scalar(p) - exact(grid.coordinate(p))));
    EXPECT_LT(err, 1e-4 * (n == 64 ? 16.0 : 1.0) * 1.5);
    if (prev > 0.0) {
      EXPECT_GE(fitted_order(prev, err), 3.8);
    }
    prev = err;
  }
}

TEST(ClassicalCurvature, NormIdentityInThreeDimensions) {
  GridSpec<3> grid(16);
  auto g = MetricField<3>::sample(grid, [](const Vec<3>& x) {
    Mat<3> m = identity_matrix<3>();
    m[0][0] += 0.2 * std::sin(2 * pi * x[1]);
    m[1][2] = m[2][1] = 0.1 * std::cos(2 * pi * x[0]);
    m[2][2] += 0.1 * std::sin(2 * pi * (x[0] + x[2]));
    return m;
  });
  const auto c = classical_curvature(g);
  const auto rm = tensor_norm(c.riemann, g);
  const auto ric = tensor_norm(c.ricci, g);
  for (std::size_t p = 0; p < grid.points(); ++p) {
    const double lhs = rm(p) * rm(p);
    const double rhs = 4.0 * ric(p) * ric(p) - c.scalar(p) * c.scalar(p);
    ASSERT_NEAR(lhs, rhs, 1e-9 * (1.0 + lhs));
  }
}

TEST(TensorNorm, Basics) {
  GridSpec<3> grid(8);
  auto g = MetricField<3>::sample(grid, [](const Vec<3>& x) {
    Mat<3> m = identity_matrix<3>();
    m[0][1] = m[1][0] = 0.2 * std::sin(2 * pi * x[2]);
    m[1][1] = 1.5;
    return m;
  });
  EXPECT_EQ(tensor_norm(Field<3>(grid, Valence::dsym2), g).max_abs(), 0.0);
  const auto n = tensor_norm(g.field(), g);
  for (double v : n.values()) EXPECT_NEAR(v, std::sqrt(3.0), 1e-13);
}

TEST(TensorNorm, GradientOfConformalMetric) {
  // |d g|_delta = 2 sqrt(n) e^{2u} |grad u| for g = e^{2u} delta.
  const auto u = sine_sine(0.1);
  GridSpec<2> grid(64, 4);
  auto bg = BackgroundMetric<2>::flat(grid);
  const auto norm = tensor_norm(covariant_derivative(conformal_metric(grid, u), bg), bg);
  for (std::size_t p = 0; p < grid.points(); ++p) {
    const auto x = grid.coordinate(p);
    const auto d = u.gradient(x);
    ASSERT_NEAR(norm(p), 2.0 * std::sqrt(2.0) * std::exp(2.0 * u.value(x)) * std::hypot(d[0], d[1]), 3e-5);
  }
}

TEST(Pairing, FlatIsZero) {
  GridSpec<2> grid(32);
  auto bg = BackgroundMetric<2>::flat(grid);
  for (const auto& phi : test_function_library<2>()) {
    const auto r = distributional_pairing(MetricField<2>::identity(grid), bg, phi.sample(grid), phi.id());
    EXPECT_EQ(r.value, 0.0);
    EXPECT_EQ(r.value, r.v_part + r.f_part);
  }
}

TEST(Pairing, MatchesCurvatureIntegral) {
  const auto u = mixed_factor();
  for (const auto& phi : test_function_library<2>()) {
    const double exact = exact_curvature_integral(u, phi);
    double prev = 0.0;
    for (int n : {64, 128}) {
      GridSpec<2> grid(n);
      const auto r = distributional_pairing(conformal_metric(grid, u), BackgroundMetric<2>::flat(grid), phi.sample(grid), phi.id());
      const double err = std::abs(r.value - exact);
      if (prev > 0.0 && phi.id() != "one") {
        EXPECT_GE(fitted_order(prev, err), 1.8) << phi.id();
      }
      prev = err;
    }
  }
}

TEST(Pairing, GaussBonnet) {
  GridSpec<2> grid(128, 4);
  const auto r = distributional_pairing(conformal_metric(grid, mixed_factor()), BackgroundMetric<2>::flat(grid),
                                        constant_scalar(grid, 1.0), "one");
  EXPECT_LT(std::abs(r.value), 1e-10);
}

TEST(Pairing, IsLinear) {
  GridSpec<2> grid(32);
  auto g = conformal_metric(grid, mixed_factor());
  auto bg = BackgroundMetric<2>::conformal(grid, perturbed_background());
  const auto lib = test_function_library<2>();
  const auto a = lib[1].sample(grid), b = lib[3].sample(grid);
  Field<2> combo = 2.0 * a;
  combo.axpy(-0.7, b);
  const double lhs = distributional_pairing(g, bg, combo).value;
  const double rhs = 2.0 * distributional_pairing(g, bg, a).value - 0.7 * distributional_pairing(g, bg, b).value;
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Pairing, BackgroundIndependenceConverges) {
  const auto u = mixed_factor();
  for (const auto& phi : test_function_library<2>()) {
    double prev = 0.0;
    for (int n : {32, 64, 128}) {
      GridSpec<2> grid(n);
      auto g = conformal_metric(grid, u);
      const double a = distributional_pairing(g, BackgroundMetric<2>::flat(grid), phi.sample(grid)).value;
      const double b = distributional_pairing(g, BackgroundMetric<2>::conformal(grid, perturbed_background()), phi.sample(grid)).value;
      const double d = std::abs(a - b);
      if (prev > 1e-12) {
        EXPECT_GE(fitted_order(prev, d), 1.8) << phi.id() << " N=" << n;
      }
      prev = d;
    }
  }
}

TEST(Pairing, ThreeDimensionalMatchesCurvatureIntegral) {
  const auto u = TrigSeries<3>({TrigMode<3>::sine(0.1, {1, 1, 0}), TrigMode<3>{0.05, {0, 1, 1}, {0.0, 0.0, 0.4}}});
  const auto phi = test_function_library<3>()[2];
  GridSpec<3> fine(96);
  double exact = 0.0;
  for (std::size_t p = 0; p < fine.points(); ++p) {
    const auto x = fine.coordinate(p);
    exact += conformal_scalar_3d(u, x) * phi.value(x) * std::exp(3.0 * u.value(x));
  }
  exact *= fine.cell_volume();
  GridSpec<3> grid(32, 4);
  const auto r = distributional_pairing(conformal_metric(grid, u), BackgroundMetric<3>::flat(grid), phi.sample(grid));
  EXPECT_NEAR(r.value, exact, 1e-4 * std::abs(exact) + 1e-6);
}

TEST(Pairing, ReportJson) {
  PairingReport r{1.5, 1.0, 0.5, "bump", "flat", 2, 64, 2};
  nlohmann::json j = r;
  EXPECT_EQ(j["value"], 1.5);
  EXPECT_EQ(j["test_function_id"], "bump");
  EXPECT_EQ(j["grid"]["resolution"], 64);
}
