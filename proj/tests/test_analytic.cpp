#include <gtest/gtest.h>

#include <cmath>

#include "roughflow/analytic.hpp"
#include "roughflow/fit.hpp"

using namespace roughflow;

namespace {

TrigSeries<2> sample_series() {
  return TrigSeries<2>({TrigMode<2>::sine(0.3, {1, 2}), {0.2, {2, 0}, {0.4, 0.0}}, {-0.1, {1, 1}, {0.3, 1.1}}}, 0.25);
}

}  // namespace

TEST(TrigSeries, GradientMatchesFiniteDifference) {
  const auto s = sample_series();
  const Vec<2> x{0.31, 0.77};
  const double h = 1e-6;
  const auto g = s.gradient(x);
  for (int a = 0; a < 2; ++a) {
    auto xp = x, xm = x;
    xp[a] += h;
    xm[a] -= h;
    EXPECT_NEAR(g[a], (s.value(xp) - s.value(xm)) / (2 * h), 1e-7);
  }
}

TEST(TrigSeries, HessianAndLaplacianMatchFiniteDifference) {
  const auto s = sample_series();
  const Vec<2> x{0.12, 0.58};
  const double h = 1e-5;
  const auto H = s.hessian(x);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      auto xp = x, xm = x;
      xp[b] += h;
      xm[b] -= h;
      EXPECT_NEAR(H[a][b], (s.gradient(xp)[a] - s.gradient(xm)[a]) / (2 * h), 1e-5);
    }
  EXPECT_NEAR(s.laplacian(x), H[0][0] + H[1][1], 1e-12);
}

TEST(TrigSeries, ConstantDetection) {
  EXPECT_TRUE(TrigSeries<2>({}, 1.0).is_constant());
  EXPECT_TRUE(TrigSeries<2>({{0.5, {0, 0}, {0, 0}}}, 0.0).is_constant());
  EXPECT_FALSE(sample_series().is_constant());
}

TEST(TestFunctions, LibraryIdsAndNonnegativity) {
  const auto lib = test_function_library<2>();
  ASSERT_EQ(lib.size(), 4u);
  EXPECT_EQ(lib[0].id(), "one");
  const GridSpec<2> grid(64, 2);
  for (const auto& u : lib) EXPECT_GE(u.sample(grid).min_value(), 0.0) << u.id();
}

TEST(TestFunctions, GradientsMatchFiniteDifference) {
  const double h = 1e-6;
  for (const auto& u : test_function_library<3>()) {
    const Vec<3> x{0.41, 0.63, 0.47};
    const auto g = u.gradient(x);
    for (int a = 0; a < 3; ++a) {
      auto xp = x, xm = x;
      xp[a] += h;
      xm[a] -= h;
      EXPECT_NEAR(g[a], (u.value(xp) - u.value(xm)) / (2 * h), 1e-6) << u.id();
    }
  }
}

TEST(TestFunctions, ClosedFormSobolevNormsMatchQuadrature) {
  for (const auto& u : test_function_library<2>())
    EXPECT_NEAR(u.sobolev_norm(), u.quadrature_norm(2048), 1e-6 * u.sobolev_norm()) << u.id();
}

TEST(TestFunctions, ThreeDimensionalNormOfOneIsTwoTermSum) {
  const TestFunction<3> one(TestFunction<3>::Kind::one, "one");
  EXPECT_NEAR(one.sobolev_norm(), 1.0, 1e-12);
}

TEST(Fit, ExactLineRecovered) {
  const auto f = least_squares({0, 1, 2, 3}, {1, 3, 5, 7});
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_EQ(f.samples, 4);
}

TEST(Fit, PowerLawExponent) {
  std::vector<double> x, y;
  for (int k = 0; k < 6; ++k) {
    x.push_back(std::pow(2.0, -k));
    y.push_back(3.0 * std::pow(x.back(), 1.5));
  }
  EXPECT_NEAR(log_log_fit(x, y).slope, 1.5, 1e-12);
  EXPECT_NEAR(convergence_order({1.0 / 32, 1.0 / 64}, {4e-4, 1e-4}), 2.0, 1e-12);
}

TEST(Fit, TooFewSamplesThrow) {
  try {
    least_squares({1.0}, {2.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_samples);
  }
  EXPECT_THROW(least_squares({1.0, 1.0}, {2.0, 3.0}), Error);
}

TEST(TestFunctions, NarrowBumpNormMatchesQuadrature) {
  const TestFunction<2> u(TestFunction<2>::Kind::bump, "narrow", {0.3, 0.6}, 0.08);
  EXPECT_NEAR(u.sobolev_norm(), u.quadrature_norm(4096), 1e-6 * u.sobolev_norm());
  EXPECT_EQ(u.value({0.3 + 0.08, 0.6}), 0.0);
  EXPECT_THROW(TestFunction<2>(TestFunction<2>::Kind::bump, "wide", {0.5, 0.5}, 0.6), Error);
}
