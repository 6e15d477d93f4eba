#pragma once

// Rough conformal metrics singular along a point, a circle or a codimension-one
// stripe, the cut-off family around the singular set, and the check that a
// pointwise curvature floor away from the set holds distributionally.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "roughflow/analytic.hpp"
#include "roughflow/error.hpp"
#include "roughflow/geometry.hpp"
#include "roughflow/grid.hpp"

namespace roughflow {

enum class SingularKind { cone_point, cone_circle, interface_stripe };

inline std::string to_string(SingularKind k) {
  switch (k) {
    case SingularKind::cone_point: return "cone_point";
    case SingularKind::cone_circle: return "cone_circle";
    case SingularKind::interface_stripe: return "interface_stripe";
  }
  return "unknown";
}

inline SingularKind singular_kind_from(const std::string& s) {
  if (s == "cone_point") return SingularKind::cone_point;
  if (s == "cone_circle") return SingularKind::cone_circle;
  if (s == "interface_stripe") return SingularKind::interface_stripe;
  fail(ErrorCode::config_invalid, "unknown singular kind '" + s + "'");
}

/// C-infinity step: 0 for t <= 0, 1 for t >= 1.
inline double smooth_step(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
  return a / (a + b);
}

inline double smooth_step_derivative(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
  const double da = a / (t * t), db = -b / ((1.0 - t) * (1.0 - t));
  return (da * (a + b) - a * (da + db)) / ((a + b) * (a + b));
}

inline double periodic_offset(double x, double c) {
  double d = x - c;
  return d - std::round(d);
}

/// Singular set: a point, a circle in the (x0, x1) plane, or the hyperplane x_axis = c.
template <int Dim>
struct SingularSet {
  SingularKind kind = SingularKind::cone_point;
  Vec<Dim> center{};
  double radius = 0.25;  // circle radius
  int axis = 0;          // stripe normal

  int dimension() const {
    switch (kind) {
      case SingularKind::cone_point: return 0;
      case SingularKind::cone_circle: return 1;
      case SingularKind::interface_stripe: return Dim - 1;
    }
    return 0;
  }

  /// Largest distance for which the distance function is smooth and unwrapped.
  double reach() const {
    switch (kind) {
      case SingularKind::cone_point: return 0.5;
      case SingularKind::cone_circle: return std::min(radius, 0.5 - radius);
      case SingularKind::interface_stripe: return 0.5;
    }
    return 0.0;
  }

  double distance(const Vec<Dim>& x) const {
    switch (kind) {
      case SingularKind::cone_point: {
        double s = 0.0;
        for (int a = 0; a < Dim; ++a) {
          const double d = periodic_offset(x[a], center[a]);
          s += d * d;
        }
        return std::sqrt(s);
      }
      case SingularKind::cone_circle: {
        const double dx = periodic_offset(x[0], center[0]), dy = periodic_offset(x[1], center[1]);
        const double radial = std::hypot(dx, dy) - radius;
        double s = radial * radial;
        if constexpr (Dim == 3) {
          const double dz = periodic_offset(x[2], center[2]);
          s += dz * dz;
        }
        return std::sqrt(s);
      }
      case SingularKind::interface_stripe: return std::abs(periodic_offset(x[axis], center[axis]));
    }
    return 0.0;
  }

  /// Gradient of the distance (unit length off the set, zero on it).
  Vec<Dim> distance_gradient(const Vec<Dim>& x) const {
    Vec<Dim> g{};
    const double d = distance(x);
    if (d <= 0.0) return g;
    switch (kind) {
      case SingularKind::cone_point:
        for (int a = 0; a < Dim; ++a) g[a] = periodic_offset(x[a], center[a]) / d;
        break;
      case SingularKind::cone_circle: {
        const double dx = periodic_offset(x[0], center[0]), dy = periodic_offset(x[1], center[1]);
        const double rho = std::hypot(dx, dy);
        if (rho <= 0.0) return g;
        const double radial = rho - radius;
        g[0] = radial * dx / rho / d;
        g[1] = radial * dy / rho / d;
        if constexpr (Dim == 3) g[2] = periodic_offset(x[2], center[2]) / d;
        break;
      }
      case SingularKind::interface_stripe:
        g[axis] = periodic_offset(x[axis], center[axis]) > 0.0 ? 1.0 : -1.0;
        break;
    }
    return g;
  }
};

template <int Dim>
struct SingularMetricSpec {
  SingularSet<Dim> set;
  double alpha = 0.5;      // Hoelder-type exponent of the cone profile
  double amplitude = 0.1;
  double inner_radius = 0.1;  // cut-off is 1 below this distance
  double outer_radius = 0.4;  // and 0 beyond this one

  SingularKind kind() const { return set.kind; }

  /// Supremum of p with grad g in L^p.
  double p_max() const {
    if (set.kind == SingularKind::interface_stripe) return std::numeric_limits<double>::infinity();
    return (Dim - set.dimension()) / (1.0 - alpha);
  }

  /// +1 where the set has codimension >= 2, -1 for codimension one; the
  /// profile u = -sign * A * d^alpha * chi(d) then curves positively near the set.
  double sign() const { return Dim - set.dimension() >= 2 ? 1.0 : -1.0; }

  double profile_exponent() const { return set.kind == SingularKind::interface_stripe ? 1.0 : alpha; }

  void validate() const {
    if (set.kind != SingularKind::interface_stripe)
      require(alpha > 0.0 && alpha < 1.0, ErrorCode::invalid_argument, "cone exponent must lie in (0, 1)");
    require(inner_radius > 0.0 && inner_radius < outer_radius, ErrorCode::invalid_argument,
            "cut-off radii must satisfy 0 < inner < outer");
    require(outer_radius < set.reach(), ErrorCode::invalid_argument, "cut-off support wraps around the torus");
    require(p_max() > Dim, ErrorCode::spec_infeasible, "grad g is not in L^p for any p > n");
  }

  /// Conformal factor u with g = e^{2u} delta.
  double conformal_factor(const Vec<Dim>& x) const {
    const double d = set.distance(x);
    return -sign() * amplitude * std::pow(d, profile_exponent()) * cutoff(d);
  }

  /// Exact scalar curvature off the set, from the closed-form radial profile.
  double scalar_curvature(const Vec<Dim>& x) const;

 private:
  double cutoff(double d) const { return 1.0 - smooth_step((d - inner_radius) / (outer_radius - inner_radius)); }
};

template <int Dim>
struct SingularMetric {
  MetricField<Dim> metric;
  double a_floor;
};

/// Samples e^{2u} delta and measures a_floor: the minimum of the classical
/// scalar curvature over points at distance >= 3 dx from the set, computed on
/// a grid refined twice.
template <int Dim>
SingularMetric<Dim> make_singular_metric(const SingularMetricSpec<Dim>& spec, const GridSpec<Dim>& grid) {
  spec.validate();
  auto sample = [&](const GridSpec<Dim>& g) {
    return MetricField<Dim>::conformal(sample_scalar(g, [&](const Vec<Dim>& x) { return spec.conformal_factor(x); }));
  };
  auto metric = sample(grid);
  const auto fine = grid.refined(2);
  const auto curvature = classical_curvature(sample(fine));
  const double tube = 3.0 * grid.spacing();
  double floor = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < fine.points(); ++p)
    if (spec.set.distance(fine.coordinate(p)) >= tube) floor = std::min(floor, curvature.scalar(p));
  if (spec.amplitude == 0.0) floor = 0.0;
  return {std::move(metric), floor};
}

/// eta_eps = 1 near the set, 0 beyond distance eps, with a smooth ramp on [eps/2, eps].
template <int Dim>
struct CutoffFamily {
  SingularSet<Dim> set;
  std::vector<double> eps;
  double q = 1.0;
  std::vector<Field<Dim>> eta;
  std::vector<double> gradient_integrals;
  bool applicable = true;

  /// The complementary convention phi_eps = 1 - eta_eps (zero near the set).
  Field<Dim> complement(std::size_t i) const {
    Field<Dim> out = eta[i];
    for (double& v : out.values()) v = 1.0 - v;
    return out;
  }
};

inline double cutoff_value(double d, double eps) { return 1.0 - smooth_step((d - 0.5 * eps) / (0.5 * eps)); }

inline double cutoff_slope(double d, double eps) { return -smooth_step_derivative((d - 0.5 * eps) / (0.5 * eps)) / (0.5 * eps); }

/// Builds eta_eps on the grid and integrates |grad eta_eps|^q (flat background;
/// the gradient is d eta/d dist times the unit gradient of the distance).
/// Applicable iff n - dim(set) - q > 0, when the integrals vanish as eps -> 0.
template <int Dim>
CutoffFamily<Dim> build_cutoffs(const SingularSet<Dim>& set, const std::vector<double>& eps_sequence, double q,
                                const GridSpec<Dim>& grid) {
  require(q >= 1.0, ErrorCode::invalid_argument, "q must be at least 1");
  CutoffFamily<Dim> fam;
  fam.set = set;
  fam.eps = eps_sequence;
  fam.q = q;
  fam.applicable = Dim - set.dimension() - q > 0.0;
  for (double eps : eps_sequence) {
    require(eps > 6.0 * grid.spacing(), ErrorCode::unresolved_cutoff, "cut-off width must exceed 6 grid cells");
    require(eps < set.reach(), ErrorCode::invalid_argument, "cut-off width exceeds the reach of the distance function");
    Field<Dim> eta(grid, Valence::scalar);
    double integral = 0.0;
    for (std::size_t p = 0; p < grid.points(); ++p) {
      const double d = set.distance(grid.coordinate(p));
      eta(p) = cutoff_value(d, eps);
      integral += std::pow(std::abs(cutoff_slope(d, eps)), q);
    }
    fam.eta.push_back(std::move(eta));
    fam.gradient_integrals.push_back(integral * grid.cell_volume());
  }
  return fam;
}

struct FloorEntry {
  std::string test_function_id;
  double value = 0.0;      // <R_g, phi> - a int phi dmu_g
  double near_part = 0.0;  // <R_g - a, eta phi>
  double far_part = 0.0;   // <R_g - a, (1 - eta) phi>
  bool pass = false;
};

struct FloorReport {
  double a = 0.0;
  double tolerance = 0.0;
  double split_eps = 0.0;
  double violation = 0.0;  // max(0, -min value)
  std::vector<FloorEntry> entries;
  std::vector<std::string> skipped;  // library functions that change sign
  bool pass = true;
};

inline void to_json(nlohmann::json& j, const FloorEntry& e) {
  j = nlohmann::json{{"test_function_id", e.test_function_id}, {"value", e.value}, {"near_part", e.near_part},
                     {"far_part", e.far_part}, {"pass", e.pass}};
}

inline void to_json(nlohmann::json& j, const FloorReport& r) {
  j = nlohmann::json{{"a", r.a}, {"tolerance", r.tolerance}, {"split_eps", r.split_eps}, {"violation", r.violation},
                     {"entries", r.entries}, {"skipped", r.skipped}, {"pass", r.pass}};
}

/// <R_g - a, u> for each nonnegative library function, split with a cut-off
/// of width split_eps around the set into a near part and a far part.
/// Functions that go negative on the grid are listed as skipped.
template <int Dim>
FloorReport verify_distributional_floor(const MetricField<Dim>& g, const BackgroundMetric<Dim>& bg, double a,
                                        const std::vector<TestFunction<Dim>>& library, const SingularSet<Dim>& set,
                                        double split_eps, double tolerance) {
  const auto& grid = g.grid();
  const auto dmu = volume_density(g);
  Field<Dim> eta(grid, Valence::scalar);
  for (std::size_t p = 0; p < grid.points(); ++p) eta(p) = cutoff_value(set.distance(grid.coordinate(p)), split_eps);
  auto shifted = [&](const Field<Dim>& phi) {
    return distributional_pairing(g, bg, phi).value - a * integrate(phi, dmu);
  };
  FloorReport r;
  r.a = a;
  r.tolerance = tolerance;
  r.split_eps = split_eps;
  double worst = 0.0;
  for (const auto& u : library) {
    const auto phi = u.sample(grid);
    if (phi.min_value() < 0.0) {
      r.skipped.push_back(u.id());
      continue;
    }
    Field<Dim> near = phi, far = phi;
    for (std::size_t p = 0; p < grid.points(); ++p) {
      near(p) = eta(p) * phi(p);
      far(p) = (1.0 - eta(p)) * phi(p);
    }
    FloorEntry e;
    e.test_function_id = u.id();
    e.value = shifted(phi);
    e.near_part = shifted(near);
    e.far_part = shifted(far);
    e.pass = e.value >= -tolerance;
    worst = std::min(worst, e.value);
    r.pass = r.pass && e.pass;
    r.entries.push_back(e);
  }
  r.violation = -worst;
  return r;
}

template <int Dim>
double SingularMetricSpec<Dim>::scalar_curvature(const Vec<Dim>& x) const {
  // u = f(d) with |grad d| = 1: grad u = f' grad d, lap u = f'' + f' lap d.
  const double d = set.distance(x);
  const double e = profile_exponent();
  const double s = -sign() * amplitude;
  const double w = outer_radius - inner_radius;
  const double t = (d - inner_radius) / w;
  const double chi = 1.0 - smooth_step(t);
  const double dchi = -smooth_step_derivative(t) / w;
  const double h = 1e-5 * w;
  const double ddchi = -(smooth_step_derivative((d + h - inner_radius) / w) - smooth_step_derivative((d - h - inner_radius) / w)) /
                       (2.0 * h * w);
  const double pw = std::pow(d, e);
  const double f = s * pw * chi;
  const double f1 = s * (e * pw / d * chi + pw * dchi);
  const double f2 = s * (e * (e - 1.0) * pw / (d * d) * chi + 2.0 * e * pw / d * dchi + pw * ddchi);
  double lap_d = 0.0;
  switch (set.kind) {
    case SingularKind::cone_point: lap_d = (Dim - 1) / d; break;
    case SingularKind::cone_circle: {
      const double rho = std::hypot(periodic_offset(x[0], set.center[0]), periodic_offset(x[1], set.center[1]));
      lap_d = (Dim - 2) / d + (rho - set.radius) / (rho * d);
      break;
    }
    case SingularKind::interface_stripe: lap_d = 0.0; break;
  }
  const double lap = f2 + f1 * lap_d;
  return -std::exp(-2.0 * f) * (2.0 * (Dim - 1) * lap + (Dim - 2) * (Dim - 1) * f1 * f1);
}

}  // namespace roughflow
