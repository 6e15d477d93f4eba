#pragma once

// Scenario configuration: one JSON document per experiment.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roughflow/analytic.hpp"
#include "roughflow/error.hpp"
#include "roughflow/field_io.hpp"
#include "roughflow/flow.hpp"
#include "roughflow/geometry.hpp"
#include "roughflow/mollify.hpp"
#include "roughflow/singular.hpp"

namespace roughflow::lab {

using nlohmann::json;

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"smooth_consistency",  "background_independence", "mollify_convergence",
                                              "cutoff_decay",        "flow_smooth",             "flow_singular_floor",
                                              "conjugate_monotonicity", "torus_rigidity_probe", "decay_exponents",
                                              "barrier_10A"};
  return names;
}

/// Tolerance keys each scenario asserts against. All are required.
inline const std::vector<std::string>& required_tolerances(const std::string& scenario) {
  static const std::map<std::string, std::vector<std::string>> keys{
      {"smooth_consistency", {"min_order", "max_relative_error", "max_gauss_bonnet"}},
      {"background_independence", {"min_order", "max_relative_difference"}},
      {"mollify_convergence", {"max_final_ratio"}},
      {"cutoff_decay", {"exponent_tolerance"}},
      {"flow_smooth", {"min_R_slack", "barrier_factor"}},
      {"flow_singular_floor", {"floor_fraction", "halving_ratio"}},
      {"conjugate_monotonicity", {"monotone_relative", "min_steps"}},
      {"torus_rigidity_probe", {"rm_growth_slack"}},
      {"decay_exponents", {"slope_slack"}},
      {"barrier_10A", {"barrier_factor"}},
  };
  const auto it = keys.find(scenario);
  if (it == keys.end()) fail(ErrorCode::config_invalid, "unknown scenario '" + scenario + "'");
  return it->second;
}

inline bool is_flow_scenario(const std::string& s) {
  return s == "flow_smooth" || s == "flow_singular_floor" || s == "conjugate_monotonicity" ||
         s == "torus_rigidity_probe" || s == "decay_exponents" || s == "barrier_10A";
}

struct Rung {
  int N = 0;
  double delta = 0.0;  // mollifier radius; 0 leaves the metric unmollified
  double dt = 0.0;     // fixed flow step; 0 selects the CFL policy

  std::string label(std::size_t index) const { return "rung" + std::to_string(index) + "_N" + std::to_string(N); }
};

inline void to_json(json& j, const Rung& r) { j = json{{"N", r.N}, {"delta", r.delta}, {"dt", r.dt}}; }

struct ScenarioConfig {
  std::string scenario;
  int dimension = 2;
  int derivative_order = 2;
  std::uint64_t seed = 0;
  json metric = json::object();
  json background = json::object();
  json flow = json::object();
  json params = json::object();
  std::vector<Rung> ladder;
  std::map<std::string, double> tolerances;

  double tol(const std::string& key) const {
    const auto it = tolerances.find(key);
    require(it != tolerances.end(), ErrorCode::config_invalid, "missing tolerance '" + key + "'");
    return it->second;
  }

  template <class T>
  T param(const std::string& key, const T& fallback) const {
    return params.contains(key) ? params.at(key).get<T>() : fallback;
  }

  json to_json() const {
    return json{{"scenario", scenario},     {"dimension", dimension}, {"derivative_order", derivative_order},
                {"seed", seed},             {"metric", metric},       {"background", background},
                {"flow", flow},             {"params", params},       {"ladder", ladder},
                {"tolerances", tolerances}};
  }
};

namespace detail {

inline const json& need(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorCode::config_invalid, where + ": missing key '" + key + "'");
  return j.at(key);
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return need(j, key, where).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::config_invalid, where + "." + key + ": " + e.what());
  }
}

template <class T>
T get_or(const json& j, const std::string& key, const T& fallback, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get_as<T>(j, key, where);
}

template <int Dim>
Vec<Dim> vec_from(const json& j, const std::string& where) {
  Vec<Dim> v{};
  if (!j.is_array() || j.size() != static_cast<std::size_t>(Dim))
    fail(ErrorCode::config_invalid, where + " must be an array of " + std::to_string(Dim) + " numbers");
  for (int a = 0; a < Dim; ++a) {
    if (!j[a].is_number()) fail(ErrorCode::config_invalid, where + " must hold numbers");
    v[a] = j[a].get<double>();
  }
  return v;
}

}  // namespace detail

/// Trig series from {"modes": [{"amplitude", "wavenumber": [..], "phase": [..]}], "offset"}.
template <int Dim>
TrigSeries<Dim> trig_series_from(const json& j, const std::string& where) {
  std::vector<TrigMode<Dim>> modes;
  for (const auto& m : detail::need(j, "modes", where)) {
    TrigMode<Dim> mode;
    mode.amplitude = detail::get_as<double>(m, "amplitude", where + ".modes");
    const auto k = detail::vec_from<Dim>(detail::need(m, "wavenumber", where + ".modes"), where + ".modes.wavenumber");
    for (int a = 0; a < Dim; ++a) {
      mode.wavenumber[a] = static_cast<int>(k[a]);
      if (mode.wavenumber[a] != k[a]) fail(ErrorCode::config_invalid, where + ": wavenumbers must be integers");
    }
    if (m.contains("phase")) mode.phase = detail::vec_from<Dim>(m.at("phase"), where + ".modes.phase");
    modes.push_back(mode);
  }
  return TrigSeries<Dim>(std::move(modes), detail::get_or<double>(j, "offset", 0.0, where));
}

template <int Dim>
SingularMetricSpec<Dim> singular_spec_from(const json& j) {
  const std::string where = "metric";
  SingularMetricSpec<Dim> s;
  s.set.kind = singular_kind_from(detail::get_as<std::string>(j, "set", where));
  s.set.center = detail::vec_from<Dim>(detail::need(j, "center", where), where + ".center");
  s.set.radius = detail::get_or<double>(j, "radius", s.set.radius, where);
  s.set.axis = detail::get_or<int>(j, "axis", 0, where);
  s.alpha = detail::get_or<double>(j, "alpha", s.alpha, where);
  s.amplitude = detail::get_as<double>(j, "amplitude", where);
  s.inner_radius = detail::get_or<double>(j, "inner_radius", s.inner_radius, where);
  s.outer_radius = detail::get_or<double>(j, "outer_radius", s.outer_radius, where);
  require(s.set.axis >= 0 && s.set.axis < Dim, ErrorCode::config_invalid, "metric.axis out of range");
  try {
    s.validate();
  } catch (const Error& e) {
    fail(ErrorCode::config_invalid, std::string("metric: ") + e.what());
  }
  return s;
}

/// Flat torus with a Lipschitz kink across the hyperplane x_axis = c plus a
/// few seeded random small modes, all in a conformal factor.
template <int Dim>
struct WrinkleSpec {
  SingularMetricSpec<Dim> kink;
  TrigSeries<Dim> noise;

  double conformal_factor(const Vec<Dim>& x) const { return kink.conformal_factor(x) + noise.value(x); }
};

template <int Dim>
WrinkleSpec<Dim> wrinkle_spec_from(const json& j, std::uint64_t seed) {
  const std::string where = "metric";
  WrinkleSpec<Dim> w;
  w.kink.set.kind = SingularKind::interface_stripe;
  w.kink.set.axis = detail::get_or<int>(j, "axis", 0, where);
  require(w.kink.set.axis >= 0 && w.kink.set.axis < Dim, ErrorCode::config_invalid, "metric.axis out of range");
  w.kink.set.center[w.kink.set.axis] = detail::get_or<double>(j, "position", 0.5, where);
  w.kink.amplitude = detail::get_as<double>(j, "amplitude", where);
  w.kink.inner_radius = detail::get_or<double>(j, "inner_radius", 0.1, where);
  w.kink.outer_radius = detail::get_or<double>(j, "outer_radius", 0.4, where);
  try {
    w.kink.validate();
  } catch (const Error& e) {
    fail(ErrorCode::config_invalid, std::string("metric: ") + e.what());
  }
  const int count = detail::get_or<int>(j, "random_modes", 0, where);
  const double amp = detail::get_or<double>(j, "random_amplitude", 0.0, where);
  const int kmax = detail::get_or<int>(j, "max_wavenumber", 3, where);
  require(count >= 0 && amp >= 0.0 && kmax >= 1, ErrorCode::config_invalid,
          "metric: random_modes, random_amplitude and max_wavenumber must be nonnegative (kmax >= 1)");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> kdist(-kmax, kmax);
  std::uniform_real_distribution<double> adist(-amp, amp), pdist(0.0, two_pi);
  std::vector<TrigMode<Dim>> modes;
  for (int m = 0; m < count; ++m) {
    TrigMode<Dim> mode;
    mode.amplitude = adist(rng);
    for (int a = 0; a < Dim; ++a) {
      mode.wavenumber[a] = kdist(rng);
      mode.phase[a] = pdist(rng);
    }
    modes.push_back(mode);
  }
  w.noise = TrigSeries<Dim>(std::move(modes));
  return w;
}

/// Initial metric of a rung, and the curvature floor a used by the scenario.
template <int Dim>
struct RungMetric {
  MetricField<Dim> raw;     // as sampled
  MetricField<Dim> metric;  // after mollification at the rung delta
  double a_floor = 0.0;
  bool singular = false;
};

/// Minimum classical scalar curvature of e^{2u} delta over points at
/// distance >= 3 dx from the set, evaluated on the grid refined twice.
template <int Dim, class U>
double floor_away_from(const SingularSet<Dim>& set, const GridSpec<Dim>& grid, U&& u) {
  const auto fine = grid.refined(2);
  const auto curv = classical_curvature(MetricField<Dim>::conformal(sample_scalar(fine, u)));
  const double tube = 3.0 * grid.spacing();
  double floor = INFINITY;
  for (std::size_t p = 0; p < fine.points(); ++p)
    if (set.distance(fine.coordinate(p)) >= tube) floor = std::min(floor, curv.scalar(p));
  return floor;
}

template <int Dim>
RungMetric<Dim> build_metric(const ScenarioConfig& cfg, const Rung& rung) {
  const GridSpec<Dim> grid(rung.N, cfg.derivative_order);
  const auto& m = cfg.metric;
  const auto kind = detail::get_as<std::string>(m, "kind", "metric");
  auto finish = [&](MetricField<Dim> raw, double floor, bool singular) {
    auto smooth = rung.delta > 0.0 ? mollify_metric(raw, rung.delta) : raw;
    return RungMetric<Dim>{std::move(raw), std::move(smooth), floor, singular};
  };
  if (kind == "identity") return finish(MetricField<Dim>::identity(grid), 0.0, false);
  if (kind == "conformal") {
    const auto u = trig_series_from<Dim>(m, "metric");
    auto g = MetricField<Dim>::conformal(u.sample(grid));
    const double floor = classical_curvature(MetricField<Dim>::conformal(u.sample(grid.refined(2)))).scalar.min_value();
    return finish(std::move(g), floor, false);
  }
  if (kind == "singular") {
    const auto spec = singular_spec_from<Dim>(m);
    auto s = make_singular_metric(spec, grid);
    return finish(std::move(s.metric), s.a_floor, true);
  }
  if (kind == "wrinkle") {
    const auto w = wrinkle_spec_from<Dim>(m, cfg.seed);
    auto u = [&](const Vec<Dim>& x) { return w.conformal_factor(x); };
    auto g = MetricField<Dim>::conformal(sample_scalar(grid, u));
    return finish(std::move(g), floor_away_from<Dim>(w.kink.set, grid, u), true);
  }
  fail(ErrorCode::config_invalid, "metric.kind must be identity, conformal, singular or wrinkle (got '" + kind + "')");
}

template <int Dim>
BackgroundMetric<Dim> build_background(const ScenarioConfig& cfg, const GridSpec<Dim>& grid) {
  const auto kind = detail::get_or<std::string>(cfg.background, "kind", "flat", "background");
  if (kind == "flat") return BackgroundMetric<Dim>::flat(grid);
  if (kind == "conformal")
    return BackgroundMetric<Dim>::conformal(grid, trig_series_from<Dim>(cfg.background, "background"));
  fail(ErrorCode::config_invalid, "background.kind must be flat or conformal (got '" + kind + "')");
}

inline FlowConfig flow_config_from(const json& j, const Rung& rung) {
  const std::string where = "flow";
  FlowConfig f;
  f.T0 = detail::get_or<double>(j, "T0", f.T0, where);
  f.c_cfl = detail::get_or<double>(j, "c_cfl", f.c_cfl, where);
  f.p = detail::get_or<double>(j, "p", f.p, where);
  f.fairness_eps = detail::get_or<double>(j, "fairness_eps", f.fairness_eps, where);
  f.checkpoint_drift = detail::get_or<double>(j, "checkpoint_drift", f.checkpoint_drift, where);
  f.A = detail::get_or<double>(j, "A", f.A, where);
  f.scheme = time_scheme_from(detail::get_or<std::string>(j, "scheme", to_string(f.scheme), where));
  if (rung.dt > 0.0) {
    f.dt_policy = DtPolicy::fixed;
    f.dt = rung.dt;
  }
  try {
    f.validate();
  } catch (const Error& e) {
    fail(ErrorCode::config_invalid, std::string("flow: ") + e.what());
  }
  return f;
}

/// Largest stable fixed step for a metric with smallest eigenvalue lambda.
inline double cfl_limit(int dim, int N, double lambda_min) {
  const double dx = 1.0 / N;
  return 0.5 * dx * dx * lambda_min / dim;
}

namespace detail {

template <int Dim>
void validate_typed(const ScenarioConfig& cfg) {
  const auto kind = get_as<std::string>(cfg.metric, "kind", "metric");
  if (kind == "conformal") trig_series_from<Dim>(cfg.metric, "metric");
  else if (kind == "singular") singular_spec_from<Dim>(cfg.metric);
  else if (kind == "wrinkle") wrinkle_spec_from<Dim>(cfg.metric, cfg.seed);
  else if (kind != "identity")
    fail(ErrorCode::config_invalid, "metric.kind must be identity, conformal, singular or wrinkle (got '" + kind + "')");
  const auto bg = get_or<std::string>(cfg.background, "kind", "flat", "background");
  if (bg == "conformal") trig_series_from<Dim>(cfg.background, "background");
  else if (bg != "flat") fail(ErrorCode::config_invalid, "background.kind must be flat or conformal");
  const bool rough = kind == "singular" || kind == "wrinkle";
  const auto& s = cfg.scenario;
  if (s == "smooth_consistency" || s == "background_independence")
    require(kind == "conformal", ErrorCode::config_invalid, s + " needs a conformal metric");
  if (s == "background_independence")
    require(bg == "conformal", ErrorCode::config_invalid, s + " needs a conformal background");
  if (s == "mollify_convergence" || s == "cutoff_decay" || s == "flow_singular_floor" || s == "decay_exponents")
    require(kind == "singular", ErrorCode::config_invalid, s + " needs a singular metric");
  if (s == "torus_rigidity_probe")
    require(kind == "wrinkle", ErrorCode::config_invalid, s + " needs a wrinkle metric");
  for (const auto& r : cfg.ladder)
    if (is_flow_scenario(s) && rough)
      require(r.delta > 0.0, ErrorCode::config_invalid,
              "rough metrics must be mollified before flowing: ladder delta must be positive");
  if (is_flow_scenario(s))
    for (const auto& r : cfg.ladder) flow_config_from(cfg.flow, r);
  if (s == "mollify_convergence") {
    const auto deltas = get_as<std::vector<double>>(cfg.params, "deltas", "params");
    for (const auto& r : cfg.ladder)
      for (double d : deltas)
        require(d >= min_kernel_cells / r.N * (1.0 - 1e-12), ErrorCode::config_invalid,
                "params.deltas must satisfy delta >= 4/N on every rung");
  }
  if (s == "cutoff_decay") {
    get_as<std::vector<double>>(cfg.params, "eps", "params");
    get_as<double>(cfg.params, "q", "params");
  }
}

}  // namespace detail

/// Parses and validates a scenario document. Every failure is ConfigInvalid.
inline ScenarioConfig parse_config(const json& j) {
  using detail::get_as;
  using detail::get_or;
  require(j.is_object(), ErrorCode::config_invalid, "config must be a JSON object");
  static const std::set<std::string> known{"scenario", "dimension", "derivative_order", "seed",     "metric",
                                           "background", "flow",    "params",           "ladder", "tolerances"};
  for (const auto& [key, value] : j.items())
    require(known.count(key) > 0, ErrorCode::config_invalid, "unknown key '" + key + "'");
  ScenarioConfig c;
  c.scenario = get_as<std::string>(j, "scenario", "config");
  const auto& tol_keys = required_tolerances(c.scenario);
  c.dimension = get_or<int>(j, "dimension", 2, "config");
  require(c.dimension == 2 || c.dimension == 3, ErrorCode::config_invalid, "dimension must be 2 or 3");
  c.derivative_order = get_or<int>(j, "derivative_order", 2, "config");
  require(c.derivative_order == 2 || c.derivative_order == 4, ErrorCode::config_invalid,
          "derivative_order must be 2 or 4");
  c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
  c.metric = detail::need(j, "metric", "config");
  c.background = get_or<json>(j, "background", json{{"kind", "flat"}}, "config");
  c.flow = get_or<json>(j, "flow", json::object(), "config");
  c.params = get_or<json>(j, "params", json::object(), "config");
  require(c.metric.is_object() && c.background.is_object() && c.flow.is_object() && c.params.is_object(),
          ErrorCode::config_invalid, "metric, background, flow and params must be objects");

  const auto& ladder = detail::need(j, "ladder", "config");
  require(ladder.is_array() && !ladder.empty(), ErrorCode::config_invalid, "ladder must be a non-empty array");
  for (const auto& r : ladder) {
    Rung rung;
    rung.N = get_as<int>(r, "N", "ladder");
    rung.delta = get_or<double>(r, "delta", 0.0, "ladder");
    rung.dt = get_or<double>(r, "dt", 0.0, "ladder");
    require(rung.N >= 8, ErrorCode::config_invalid, "ladder N must be at least 8");
    require(rung.delta >= 0.0 && rung.dt >= 0.0, ErrorCode::config_invalid, "ladder delta and dt must be >= 0");
    require(rung.delta == 0.0 || rung.delta >= min_kernel_cells / rung.N * (1.0 - 1e-12), ErrorCode::config_invalid,
            "ladder delta must satisfy delta >= 4/N (N = " + std::to_string(rung.N) + ")");
    require(rung.delta < 0.25, ErrorCode::config_invalid, "ladder delta must be below 1/4");
    c.ladder.push_back(rung);
  }

  const auto& tols = detail::need(j, "tolerances", "config");
  require(tols.is_object(), ErrorCode::config_invalid, "tolerances must be an object");
  for (const auto& [key, value] : tols.items()) {
    require(std::find(tol_keys.begin(), tol_keys.end(), key) != tol_keys.end(), ErrorCode::config_invalid,
            "tolerance '" + key + "' is not used by " + c.scenario);
    require(value.is_number() && value.get<double>() > 0.0, ErrorCode::config_invalid,
            "tolerance '" + key + "' must be a positive number");
    c.tolerances[key] = value.get<double>();
  }
  for (const auto& key : tol_keys)
    require(c.tolerances.count(key) > 0, ErrorCode::config_invalid, "missing tolerance '" + key + "'");

  if (c.dimension == 2) detail::validate_typed<2>(c);
  else detail::validate_typed<3>(c);
  return c;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  const auto text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::config_invalid, path.string() + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace roughflow::lab
