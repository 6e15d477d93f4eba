#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "roughflow/grid.hpp"

using namespace roughflow;

namespace {

constexpr double pi = std::numbers::pi;

Field<2> sine_x1(const GridSpec<2>& g) {
  return sample_scalar(g, [](const Vec<2>& x) { return std::sin(2 * pi * x[0]); });
}

double derivative_error(int n, int order) {
  GridSpec<2> g(n, order);
  const auto d = partial_derivative(sine_x1(g), 0);
  double err = 0.0;
  for (std::size_t p = 0; p < g.points(); ++p)
    err = std::max(err, std::abs(d(p) - 2 * pi * std::cos(2 * pi * g.coordinate(p)[0])));
  return err;
}

}  // namespace

TEST(GridSpec, RejectsBadResolution) {
  EXPECT_THROW(GridSpec<2>(6), Error);
  EXPECT_THROW(GridSpec<2>(33), Error);
  EXPECT_THROW(GridSpec<2>(32, 3), Error);
  try {
    GridSpec<3>(7);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_grid);
  }
}

TEST(GridSpec, SpacingAndWrap) {
  GridSpec<3> g(16);
  EXPECT_EQ(g.spacing() * 16, 1.0);
  EXPECT_EQ(g.points(), 16u * 16u * 16u);
  EXPECT_EQ(g.point({-1, 0, 16}), g.point({15, 0, 0}));
  EXPECT_EQ(g.stride(2), 1u);
}

TEST(PartialDerivative, ConstantGivesZero) {
  GridSpec<2> g(16, 4);
  const auto d = partial_derivative(constant_scalar(g, 3.5), 1);
  EXPECT_EQ(d.max_abs(), 0.0);
}

TEST(PartialDerivative, SineFourthOrder) {
  // Leading truncation term of the five-point stencil: (2 pi)^5 h^4 / 30.
  const double h = 1.0 / 64;
  const double leading = std::pow(2 * pi, 5) * std::pow(h, 4) / 30.0;
  EXPECT_LE(derivative_error(64, 4), 1.01 * leading);
  EXPECT_LE(derivative_error(80, 4), 1e-5);
}

TEST(PartialDerivative, NoDependenceGivesZero) {
  GridSpec<2> g(32);
  EXPECT_LT(partial_derivative(sine_x1(g), 1).max_abs(), 1e-12);
}

TEST(PartialDerivative, ConvergenceOrder) {
  for (int order : {2, 4}) {
    const double e1 = derivative_error(32, order);
    const double e2 = derivative_error(64, order);
    EXPECT_GE(std::log2(e1 / e2), order - 0.2) << "order " << order;
  }
}

TEST(PartialDerivative, CommutesWithTranslation) {
  GridSpec<3> g(16, 4);
  auto f = sample_scalar(g, [](const Vec<3>& x) { return std::exp(std::sin(2 * pi * x[0]) * std::cos(2 * pi * x[2])); });
  Field<3> shifted(g, Valence::scalar);
  for (std::size_t p = 0; p < g.points(); ++p) {
    auto idx = g.index_of(p);
    idx[2] += 3;
    shifted(p) = f(g.point(idx));
  }
  for (int axis = 0; axis < 3; ++axis) {
    const auto a = partial_derivative(f, axis);
    const auto b = partial_derivative(shifted, axis);
    for (std::size_t p = 0; p < g.points(); ++p) {
      auto idx = g.index_of(p);
      idx[2] += 3;
      ASSERT_EQ(b(p), a(g.point(idx)));
    }
  }
}

TEST(PartialDerivative, DiscreteDivergenceTheorem) {
  GridSpec<3> g(16, 2);
  auto f = sample_scalar(g, [](const Vec<3>& x) { return std::exp(std::sin(2 * pi * x[1]) + x[0] * (1 - x[0])); });
  for (int axis = 0; axis < 3; ++axis) EXPECT_LT(std::abs(integrate(partial_derivative(f, axis))), 1e-13);
}

TEST(SecondPartial, MatchesAnalytic) {
  GridSpec<2> g(64, 4);
  auto f = sample_scalar(g, [](const Vec<2>& x) { return std::sin(2 * pi * x[0]) * std::cos(2 * pi * x[1]); });
  const auto dxx = second_partial(f, 0, 0);
  const auto dxy = second_partial(f, 0, 1);
  double exx = 0.0, exy = 0.0;
  for (std::size_t p = 0; p < g.points(); ++p) {
    const auto x = g.coordinate(p);
    exx = std::max(exx, std::abs(dxx(p) + 4 * pi * pi * std::sin(2 * pi * x[0]) * std::cos(2 * pi * x[1])));
    exy = std::max(exy, std::abs(dxy(p) + 4 * pi * pi * std::cos(2 * pi * x[0]) * std::sin(2 * pi * x[1])));
  }
  EXPECT_LT(exx, 1e-3);
  EXPECT_LT(exy, 1e-3);
}

TEST(Integrate, UnitVolume) {
  GridSpec<2> g(16);
  EXPECT_DOUBLE_EQ(integrate(constant_scalar(g, 1.0), constant_scalar(g, 1.0)), 1.0);
}

TEST(Integrate, MeanZeroMode) {
  GridSpec<2> g(32);
  EXPECT_LT(std::abs(integrate(sine_x1(g), constant_scalar(g, 1.0))), 1e-12);
}

TEST(Integrate, SineSquared) {
  GridSpec<2> g(32);
  auto f = sample_scalar(g, [](const Vec<2>& x) { return std::pow(std::sin(2 * pi * x[0]), 2); });
  EXPECT_NEAR(integrate(f, constant_scalar(g, 1.0)), 0.5, 1e-10);
}

TEST(Integrate, RejectsNonPositiveDensity) {
  GridSpec<2> g(8);
  EXPECT_THROW(integrate(constant_scalar(g, 1.0), constant_scalar(g, 0.0)), Error);
}

TEST(LpNorm, Basics) {
  GridSpec<2> g(32);
  const auto one = constant_scalar(g, 1.0);
  EXPECT_EQ(lp_norm(Field<2>(g, Valence::sym2), 2.0, one), 0.0);
  for (double p : {1.0, 2.0, 3.5, std::numeric_limits<double>::infinity()}) EXPECT_NEAR(lp_norm(one, p, one), 1.0, 1e-14);
  EXPECT_NEAR(lp_norm(sine_x1(g), 2.0, one), std::sqrt(0.5), 1e-10);
  EXPECT_NEAR(lp_norm(sine_x1(g), std::numeric_limits<double>::infinity(), one), 1.0, 1e-12);
}

TEST(Convolve, PreservesConstants) {
  GridSpec<2> g(64);
  const auto k = MollifierKernel<2>::make(g, 0.1);
  const auto out = convolve(constant_scalar(g, 2.75), k);
  for (double v : out.values()) EXPECT_NEAR(v, 2.75, 1e-14);
}

TEST(Convolve, KernelProperties) {
  GridSpec<2> g(64);
  const auto k = MollifierKernel<2>::make(g, 0.1);
  EXPECT_EQ(k.half_width(), 6);
  EXPECT_NEAR(integrate(k.samples()), 1.0, 1e-14);
  for (double v : k.taps()) EXPECT_GE(v, 0.0);
  EXPECT_THROW(MollifierKernel<2>::make(g, 0.25), Error);
  try {
    MollifierKernel<2>::make(g, 0.3);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kernel_too_wide);
  }
}

TEST(Convolve, PreservesNonnegativityAndYoung) {
  GridSpec<2> g(64);
  auto f = sample_scalar(g, [](const Vec<2>& x) { return std::max(0.0, std::sin(6 * pi * x[0]) * std::cos(2 * pi * x[1])); });
  const auto one = constant_scalar(g, 1.0);
  const auto k = MollifierKernel<2>::make(g, 0.07);
  const auto out = convolve(f, k);
  EXPECT_GE(out.min_value(), 0.0);
  for (double p : {1.0, 2.0, 4.0, std::numeric_limits<double>::infinity()}) EXPECT_LE(lp_norm(out, p, one), lp_norm(f, p, one) + 1e-12);
}

TEST(Convolve, MatchesDirectSum) {
  GridSpec<2> g(16);
  auto f = sample_scalar(g, [](const Vec<2>& x) { return std::cos(2 * pi * x[0]) + x[1] * x[1]; });
  const auto k = MollifierKernel<2>::make(g, 0.2);
  const auto out = convolve(f, k);
  const int r = k.half_width();
  for (std::size_t p = 0; p < g.points(); ++p) {
    const auto idx = g.index_of(p);
    double s = 0.0;
    for (int a = -r; a <= r; ++a)
      for (int b = -r; b <= r; ++b) s += k.taps()[a + r] * k.taps()[b + r] * f(g.point({idx[0] + a, idx[1] + b}));
    ASSERT_NEAR(out(p), s, 1e-13);
  }
}

TEST(Convolve, ConeProfileConverges) {
  GridSpec<2> g(256);
  auto f = sample_scalar(g, [](const Vec<2>& x) {
    const double r = std::hypot(x[0] - 0.5, x[1] - 0.5);
    return std::sqrt(std::min(r, 0.3));
  });
  double prev = std::numeric_limits<double>::infinity();
  for (double delta : {0.125, 0.0625, 0.03125, 0.015625}) {
    auto diff = convolve(f, MollifierKernel<2>::make(g, delta));
    diff -= f;
    const double e = diff.max_abs();
    EXPECT_LT(e, prev) << delta;
    prev = e;
  }
}
