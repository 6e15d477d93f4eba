#pragma once

// Metric mollification by periodic convolution and the report of how fast the
// mollified metrics approach the rough one in C0, W^{1,p} and in the
// distributional pairing.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "roughflow/analytic.hpp"
#include "roughflow/error.hpp"
#include "roughflow/geometry.hpp"
#include "roughflow/grid.hpp"

namespace roughflow {

/// Smallest admissible kernel radius in grid cells.
inline constexpr double min_kernel_cells = 4.0;

/// Componentwise convolution of g with the bump of radius delta.
template <int Dim>
MetricField<Dim> mollify_metric(const MetricField<Dim>& g, double delta) {
  const auto& grid = g.grid();
  require(delta >= min_kernel_cells * grid.spacing() * (1.0 - 1e-12), ErrorCode::kernel_unresolved,
          "kernel radius must span at least 4 grid cells");
  const auto kernel = MollifierKernel<Dim>::make(grid, delta);
  auto out = convolve(g.field(), kernel);
  for (std::size_t p = 0; p < grid.points(); ++p) {
    const auto e = sym_eigenvalues<Dim>(sym_at(out, p));
    require(e.front() > 0.0 && std::isfinite(e.back()), ErrorCode::lost_ellipticity,
            "mollified metric is not positive definite");
  }
  return MetricField<Dim>(std::move(out));
}

/// int R_g u dmu_g from the classical curvature of a smooth sampled metric.
template <int Dim>
double classical_pairing(const MetricField<Dim>& g, const Field<Dim>& u) {
  const auto curv = classical_curvature(g);
  const auto dmu = volume_density(g);
  Field<Dim> ru(g.grid(), Valence::scalar);
  for (std::size_t p = 0; p < ru.points(); ++p) ru(p) = curv.scalar(p) * u(p);
  return integrate(ru, dmu);
}

struct MollificationReport {
  int dimension = 0;
  int resolution = 0;
  double p = 0.0;
  double epsilon = 0.0;  // threshold behind delta0_estimate
  std::vector<double> delta_sequence;
  std::vector<double> c0_errors;
  std::vector<double> w1p_errors;
  std::vector<double> pairing_errors;  // sup over the library, normalized
  std::vector<std::string> test_function_ids;
  std::vector<bool> constant_function;
  std::vector<std::vector<double>> per_function;  // [delta][u], normalized
  std::vector<double> reference_pairings;         // <R_g, u> per u
  double delta0_estimate = 0.0;                   // 0 when no delta qualifies

  /// max/min over non-constant u of the per-u error bound max_delta err(delta, u).
  double uniformity_ratio() const {
    double lo = INFINITY, hi = 0.0;
    for (std::size_t u = 0; u < test_function_ids.size(); ++u) {
      if (constant_function[u]) continue;
      double m = 0.0;
      for (const auto& row : per_function) m = std::max(m, row[u]);
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    if (!(lo > 0.0)) return hi > 0.0 ? INFINITY : 1.0;
    return hi / lo;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "# roughflow mollification v1\n";
    out << "delta,c0_error,w1p_error,pairing_error";
    for (const auto& id : test_function_ids) out << ",pairing_error_" << id;
    out << '\n';
    for (std::size_t i = 0; i < delta_sequence.size(); ++i) {
      out << delta_sequence[i] << ',' << c0_errors[i] << ',' << w1p_errors[i] << ',' << pairing_errors[i];
      for (double v : per_function[i]) out << ',' << v;
      out << '\n';
    }
    return out.str();
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"dimension", dimension},
                          {"resolution", resolution},
                          {"p", p},
                          {"epsilon", epsilon},
                          {"delta_sequence", delta_sequence},
                          {"c0_errors", c0_errors},
                          {"w1p_errors", w1p_errors},
                          {"pairing_errors", pairing_errors},
                          {"test_function_ids", test_function_ids},
                          {"per_function", per_function},
                          {"reference_pairings", reference_pairings},
                          {"delta0_estimate", delta0_estimate},
                          {"uniformity_ratio", uniformity_ratio()}};
  }
};

/// Mollifies g at each delta and measures the three error sequences against
/// the test-function library. Pairing errors divide by the analytic
/// W^{1,n/(n-1)} norm of each test function.
template <int Dim>
MollificationReport mollification_report(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg,
                                         const std::vector<double>& delta_sequence, double p, double epsilon = 1e-2,
                                         const std::vector<TestFunction<Dim>>& library = test_function_library<Dim>()) {
  require(!delta_sequence.empty(), ErrorCode::invalid_argument, "empty delta sequence");
  require(std::is_sorted(delta_sequence.rbegin(), delta_sequence.rend()) &&
              std::adjacent_find(delta_sequence.begin(), delta_sequence.end()) == delta_sequence.end(),
          ErrorCode::invalid_argument, "delta sequence must be strictly decreasing");
  require(p > Dim, ErrorCode::invalid_argument, "p must exceed the dimension");
  const auto& grid = g.grid();
  MollificationReport r;
  r.dimension = Dim;
  r.resolution = grid.resolution();
  r.p = p;
  r.epsilon = epsilon;
  r.delta_sequence = delta_sequence;

  std::vector<Field<Dim>> samples;
  std::vector<double> norms;
  for (const auto& u : library) {
    r.test_function_ids.push_back(u.id());
    r.constant_function.push_back(u.kind() == TestFunction<Dim>::Kind::one);
    samples.push_back(u.sample(grid));
    norms.push_back(u.sobolev_norm());
    r.reference_pairings.push_back(distributional_pairing(g, bg, samples.back(), u.id()).value);
  }
  const auto dg = covariant_derivative(g, bg);
  const auto dmu_h = bg.sqrt_det();

  for (double delta : delta_sequence) {
    const auto gd = mollify_metric(g, delta);
    Field<Dim> diff = gd.field();
    for (std::size_t i = 0; i < diff.values().size(); ++i) diff.values()[i] -= g.field().values()[i];
    r.c0_errors.push_back(tensor_norm(diff, bg).max_value());
    Field<Dim> ddiff = covariant_derivative(gd, bg);
    for (std::size_t i = 0; i < ddiff.values().size(); ++i) ddiff.values()[i] -= dg.values()[i];
    r.w1p_errors.push_back(lp_norm_of_magnitude(tensor_norm(ddiff, bg), p, dmu_h));

    const auto curv = classical_curvature(gd);
    const auto dmu = volume_density(gd);
    std::vector<double> row;
    double worst = 0.0;
    for (std::size_t u = 0; u < samples.size(); ++u) {
      Field<Dim> ru(grid, Valence::scalar);
      for (std::size_t q = 0; q < ru.points(); ++q) ru(q) = curv.scalar(q) * samples[u](q);
      const double e = std::abs(integrate(ru, dmu) - r.reference_pairings[u]) / norms[u];
      row.push_back(e);
      worst = std::max(worst, e);
    }
    r.per_function.push_back(std::move(row));
    r.pairing_errors.push_back(worst);
  }
  // largest delta below which every listed error stays under epsilon
  for (std::size_t i = delta_sequence.size(); i-- > 0;) {
    if (r.pairing_errors[i] > epsilon) break;
    r.delta0_estimate = delta_sequence[i];
  }
  return r;
}

}  // namespace roughflow
