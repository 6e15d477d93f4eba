#pragma once

// Scenario pipelines. Each rung is computed independently; cross-rung checks
// (convergence orders, tolerance halving) run once all rungs are done.

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roughflow/conjheat.hpp"
#include "roughflow/fit.hpp"
#include "roughflow/flow.hpp"
#include "roughflow/lab/config.hpp"
#include "roughflow/singular.hpp"

namespace roughflow::lab {

inline constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

struct Check {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  std::string relation;  // "<=" or ">="
  bool pass = false;
};

inline Check check_le(std::string name, double value, double limit) {
  return {std::move(name), value, limit, "<=", value <= limit};
}
inline Check check_ge(std::string name, double value, double limit) {
  return {std::move(name), value, limit, ">=", value >= limit};
}

inline void to_json(json& j, const Check& c) {
  j = json{{"name", c.name}, {"value", c.value}, {"limit", c.limit}, {"relation", c.relation}, {"pass", c.pass}};
}

struct TableRow {
  std::string quantity;
  double parameter = nan_value;  // delta, eps or similar; NaN when unused
  double value = nan_value;
  double error = nan_value;
};

struct RungResult {
  Rung rung;
  std::string label;
  std::string diagnostics_csv;
  json summary = json::object();
  std::vector<TableRow> table;
  std::map<std::string, std::string> extra_files;
  std::map<std::string, double> values;  // inputs to cross-rung checks
  std::vector<Check> checks;
  bool aborted = false;
};

struct ScenarioRun {
  ScenarioConfig config;
  std::vector<RungResult> rungs;
  std::vector<Check> checks;  // cross-rung
  bool aborted = false;

  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    for (const auto& r : rungs)
      for (const auto& c : r.checks)
        if (!c.pass) return false;
    return !aborted;
  }
};

inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

namespace detail {

/// Exact int R phi dmu for g = e^{2u} delta, by the trapezoid rule at a fine resolution.
template <int Dim>
double exact_conformal_pairing(const TrigSeries<Dim>& u, const TestFunction<Dim>& phi, int reference_n) {
  const GridSpec<Dim> ref(reference_n);
  double s = 0.0;
  for (std::size_t p = 0; p < ref.points(); ++p) {
    const auto x = ref.coordinate(p);
    const auto du = u.gradient(x);
    double g2 = 0.0;
    for (double v : du) g2 += v * v;
    const double w = u.value(x);
    const double r = -std::exp(-2.0 * w) * (2.0 * (Dim - 1) * u.laplacian(x) + (Dim - 2) * (Dim - 1) * g2);
    s += r * phi.value(x) * std::exp(Dim * w);
  }
  return s * ref.cell_volume();
}

template <int Dim>
std::string pairing_csv(const std::vector<TableRow>& rows, const char* kind, const char* header) {
  std::ostringstream out;
  out << "# roughflow " << kind << " v1\n" << header << '\n';
  for (const auto& r : rows) out << r.quantity << ',' << csv_number(r.value) << ',' << csv_number(r.error) << '\n';
  return out.str();
}

template <int Dim>
void smooth_consistency(const ScenarioConfig& cfg, RungResult& out) {
  const GridSpec<Dim> grid(out.rung.N, cfg.derivative_order);
  const auto u = trig_series_from<Dim>(cfg.metric, "metric");
  const auto g = MetricField<Dim>::conformal(u.sample(grid));
  const auto bg = build_background<Dim>(cfg, grid);
  const int ref_n = cfg.param<int>("reference_N", 1024);
  require(ref_n >= 64, ErrorCode::config_invalid, "params.reference_N must be at least 64");
  double worst = 0.0, constant = 0.0;
  json per = json::object();
  for (const auto& phi : test_function_library<Dim>()) {
    const double value = distributional_pairing(g, bg, phi.sample(grid), phi.id()).value;
    const double exact = Dim == 2 && phi.kind() == TestFunction<Dim>::Kind::one
                             ? 0.0
                             : exact_conformal_pairing(u, phi, ref_n);
    // the constant function pairs to zero in 2D, so its error is absolute
    const bool absolute = phi.kind() == TestFunction<Dim>::Kind::one;
    const double err = absolute ? std::abs(value - exact) : std::abs(value - exact) / std::abs(exact);
    if (absolute) constant = err;
    else worst = std::max(worst, err);
    out.table.push_back({phi.id(), nan_value, value, err});
    per[phi.id()] = {{"pairing", value}, {"exact", exact}, {"error", err}, {"absolute", absolute}};
  }
  out.diagnostics_csv = pairing_csv<Dim>(out.table, "pairing", "test_function,pairing,error");
  out.values["max_relative_error"] = worst;
  out.values["constant_error"] = constant;
  out.summary = {{"pairings", per}, {"max_relative_error", worst}, {"constant_error", constant},
                 {"reference_N", ref_n}};
  out.checks.push_back(check_le(Dim == 2 ? "gauss_bonnet" : "constant_pairing_error", constant,
                                cfg.tol("max_gauss_bonnet")));
}

template <int Dim>
void background_independence(const ScenarioConfig& cfg, RungResult& out) {
  const GridSpec<Dim> grid(out.rung.N, cfg.derivative_order);
  const auto u = trig_series_from<Dim>(cfg.metric, "metric");
  const auto g = MetricField<Dim>::conformal(u.sample(grid));
  const auto flat = BackgroundMetric<Dim>::flat(grid);
  const auto bg = build_background<Dim>(cfg, grid);
  double worst = 0.0;
  json per = json::object();
  std::ostringstream csv;
  csv << "# roughflow background pairing v1\ntest_function,flat,background,relative_difference\n";
  for (const auto& phi : test_function_library<Dim>()) {
    if (phi.kind() == TestFunction<Dim>::Kind::one) continue;
    const auto sample = phi.sample(grid);
    const double a = distributional_pairing(g, flat, sample, phi.id()).value;
    const double b = distributional_pairing(g, bg, sample, phi.id()).value;
    const double diff = std::abs(a - b) / std::abs(a);
    worst = std::max(worst, diff);
    out.table.push_back({phi.id(), nan_value, b, diff});
    per[phi.id()] = {{"flat", a}, {"background", b}, {"relative_difference", diff}};
    csv << phi.id() << ',' << csv_number(a) << ',' << csv_number(b) << ',' << csv_number(diff) << '\n';
  }
  out.diagnostics_csv = csv.str();
  out.values["max_relative_difference"] = worst;
  out.summary = {{"pairings", per}, {"max_relative_difference", worst}, {"background_id", bg.id()}};
}

inline bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return true;
}

template <int Dim>
void mollify_convergence(const ScenarioConfig& cfg, RungResult& out) {
  const GridSpec<Dim> grid(out.rung.N, cfg.derivative_order);
  const auto spec = singular_spec_from<Dim>(cfg.metric);
  const auto sm = make_singular_metric(spec, grid);
  const auto bg = build_background<Dim>(cfg, grid);
  auto deltas = cfg.params.at("deltas").get<std::vector<double>>();
  const auto rep = mollification_report(sm.metric, bg, deltas, cfg.param<double>("p", 3.0),
                                        cfg.param<double>("epsilon", 1e-2));
  out.diagnostics_csv = rep.to_csv();
  out.summary = rep.to_json();
  out.summary["a_floor"] = sm.a_floor;
  for (std::size_t i = 0; i < deltas.size(); ++i)
    out.table.push_back({"pairing_error", deltas[i], rep.pairing_errors[i], rep.pairing_errors[i]});
  const double ratio = rep.pairing_errors.back() / rep.pairing_errors.front();
  out.values["final_ratio"] = ratio;
  out.checks.push_back(check_ge("pairing_error_strictly_decreasing", strictly_decreasing(rep.pairing_errors), 1.0));
  out.checks.push_back(check_le("final_over_initial", ratio, cfg.tol("max_final_ratio")));
}

template <int Dim>
void cutoff_decay(const ScenarioConfig& cfg, RungResult& out) {
  const GridSpec<Dim> grid(out.rung.N, cfg.derivative_order);
  const auto spec = singular_spec_from<Dim>(cfg.metric);
  const auto eps = cfg.params.at("eps").get<std::vector<double>>();
  const double q = cfg.params.at("q").get<double>();
  const auto fam = build_cutoffs(spec.set, eps, q, grid);
  const auto fit = log_log_fit(eps, fam.gradient_integrals);
  const double expected = Dim - spec.set.dimension() - q;
  std::ostringstream csv;
  csv << "# roughflow cutoff v1\neps,gradient_integral\n";
  for (std::size_t i = 0; i < eps.size(); ++i) {
    csv << csv_number(eps[i]) << ',' << csv_number(fam.gradient_integrals[i]) << '\n';
    out.table.push_back({"gradient_integral", eps[i], fam.gradient_integrals[i], nan_value});
  }
  out.table.push_back({"exponent", nan_value, fit.slope, std::abs(fit.slope - expected)});
  out.diagnostics_csv = csv.str();
  out.values["exponent"] = fit.slope;
  out.summary = {{"eps", eps},
                 {"q", q},
                 {"gradient_integrals", fam.gradient_integrals},
                 {"fitted_exponent", fit.slope},
                 {"expected_exponent", expected},
                 {"applicable", fam.applicable}};
  out.checks.push_back(
      check_ge("gradient_integrals_strictly_decreasing", strictly_decreasing(fam.gradient_integrals), 1.0));
  out.checks.push_back(check_le("exponent_error", std::abs(fit.slope - expected), cfg.tol("exponent_tolerance")));
}

inline double barrier_max(const std::vector<FlowDiagnostics>& rows) {
  double m = 0.0;
  for (const auto& d : rows) m = std::max(m, d.grad_lp_power);
  return m;
}

inline double min_R_over(const std::vector<FlowDiagnostics>& rows, double t1, double t2) {
  double m = INFINITY;
  for (const auto& d : rows)
    if (d.t >= t1 * (1.0 - 1e-12) && d.t <= t2 * (1.0 + 1e-12)) m = std::min(m, d.min_R);
  return m;
}

inline const FlowDiagnostics& row_near(const std::vector<FlowDiagnostics>& rows, double t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (std::abs(rows[i].t - t) < std::abs(rows[best].t - t)) best = i;
  return rows[best];
}

template <int Dim>
void flow_scenario(const ScenarioConfig& cfg, RungResult& out) {
  const auto rm = build_metric<Dim>(cfg, out.rung);
  const auto& grid = rm.metric.grid();
  const auto bg = build_background<Dim>(cfg, grid);
  const auto fcfg = flow_config_from(cfg.flow, out.rung);
  if (fcfg.dt_policy == DtPolicy::fixed) {
    const double limit = cfl_limit(Dim, out.rung.N, rm.metric.lambda_min());
    require(fcfg.dt <= limit, ErrorCode::config_invalid,
            "fixed dt " + csv_number(fcfg.dt) + " exceeds the stability limit " + csv_number(limit));
  }
  const auto traj = run_flow(rm.metric, bg, fcfg);
  const auto& rows = traj.diagnostics;
  out.diagnostics_csv = traj.diagnostics_csv();
  out.aborted = !traj.completed();
  const double bmax = barrier_max(rows);
  out.summary = {{"status", to_string(traj.status)},
                 {"T0", traj.T0},
                 {"A", traj.A},
                 {"p", traj.p},
                 {"a_floor", rm.a_floor},
                 {"steps", rows.empty() ? 0 : rows.back().step},
                 {"checkpoints", traj.checkpoints.size()},
                 {"initial_min_R", rows.front().min_R},
                 {"final_min_R", rows.back().min_R},
                 {"final_sup_rm", rows.back().sup_rm},
                 {"barrier_max", bmax},
                 {"barrier_ratio", traj.A > 0.0 ? bmax / traj.A : nan_value},
                 {"integral_rm", rows.back().cumulative_rm}};
  if (out.aborted) {
    out.summary["abort_time"] = traj.abort_time;
    return;
  }
  out.table.push_back({"final_min_R", nan_value, rows.back().min_R, nan_value});
  out.table.push_back({"barrier_max", nan_value, bmax, nan_value});
  const auto& s = cfg.scenario;
  const double T0 = traj.T0;

  if (s == "flow_smooth" || s == "barrier_10A") {
    const double factor = cfg.tol("barrier_factor");
    out.checks.push_back(check_le("barrier", bmax, factor * traj.A));
  }
  if (s == "flow_smooth") {
    double drop = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) drop = std::max(drop, rows[i - 1].min_R - rows[i].min_R);
    out.summary["max_min_R_drop"] = drop;
    out.checks.push_back(check_le("min_R_drop", drop, cfg.tol("min_R_slack")));
  }
  if (s == "flow_singular_floor") {
    const double m = min_R_over(rows, T0 / 10.0, T0);
    const double tol = std::max(0.0, rm.a_floor - m);
    out.values["tol"] = tol;
    out.values["a_floor"] = rm.a_floor;
    out.summary["window_min_R"] = m;
    out.summary["tol"] = tol;
    out.summary["margin"] = m - rm.a_floor;
    out.table.push_back({"window_min_R", nan_value, m, tol});
  }
  if (s == "conjugate_monotonicity") {
    ConjugateConfig ccfg;
    ccfg.c_cfl = cfg.param<double>("conjugate_c_cfl", ccfg.c_cfl);
    const auto id = cfg.param<std::string>("terminal", "sine_product");
    const TestFunction<Dim>* phi = nullptr;
    const auto lib = test_function_library<Dim>();
    for (const auto& f : lib)
      if (f.id() == id) phi = &f;
    require(phi != nullptr, ErrorCode::config_invalid, "params.terminal must name a library test function");
    double a = 0.0;
    if (cfg.params.contains("a")) {
      const auto& av = cfg.params.at("a");
      if (av.is_string()) {
        require(av.get<std::string>() == "floor", ErrorCode::config_invalid, "params.a must be a number or \"floor\"");
        a = rm.a_floor;
      } else {
        a = av.get<double>();
      }
    }
    const double t_min = cfg.param<double>("t_min", 0.0) * T0;
    const auto sol = solve_conjugate(traj, bg, phi->sample(grid), T0, t_min, a, ccfg);
    const auto mono = monotone_functional_check(sol);
    const double rel = cfg.tol("monotone_relative");
    const double limit = -rel * (1.0 + mono.max_abs_M);
    out.extra_files["conjugate.csv"] = sol.to_csv();
    out.summary["conjugate"] = sol.summary();
    out.summary["monotone"] = mono.to_json();
    out.table.push_back({"min_increment", nan_value, mono.min_increment, nan_value});
    out.checks.push_back(check_ge("monotone_min_increment", mono.min_increment, limit));
    out.checks.push_back(check_ge("conjugate_steps", static_cast<double>(mono.steps), cfg.tol("min_steps")));
  }
  if (s == "torus_rigidity_probe") {
    const auto& mid = row_near(rows, 0.5 * T0);
    const auto& last = rows.back();
    out.summary["rigidity"] = {{"a_floor", rm.a_floor},
                               {"sup_rm_half", mid.sup_rm},
                               {"sup_rm_final", last.sup_rm},
                               {"t_half", mid.t},
                               {"final_min_R", last.min_R},
                               {"final_max_R", last.max_R},
                               {"c0_drift", last.c0_drift},
                               {"asserted", false}};
    out.table.push_back({"sup_rm", mid.t, mid.sup_rm, nan_value});
    out.table.push_back({"sup_rm", last.t, last.sup_rm, nan_value});
    out.checks.push_back(
        check_le("sup_rm_final_over_half", last.sup_rm / mid.sup_rm, 1.0 + cfg.tol("rm_growth_slack")));
  }
  if (s == "decay_exponents") {
    const auto window = cfg.param<std::vector<double>>("window", {0.01, 0.1});
    require(window.size() == 2 && window[0] > 0.0 && window[1] > window[0] && window[1] <= 1.0,
            ErrorCode::config_invalid, "params.window must be two increasing fractions of T0 in (0, 1]");
    json fits = json::array();
    for (auto q : {DecayQuantity::grad_g, DecayQuantity::grad2_g, DecayQuantity::rm}) {
      auto f = decay_fit(traj, q, window[0] * T0, window[1] * T0);
      f.bound = -f.exponent - cfg.tol("slope_slack");
      f.pass = f.skipped || f.slope >= f.bound;
      fits.push_back(f);
      out.table.push_back({"slope_" + f.quantity, nan_value, f.slope, nan_value});
      out.checks.push_back({"slope_" + f.quantity, f.slope, f.bound, ">=", f.pass});
    }
    out.summary["decay_fits"] = fits;
  }
}

template <int Dim>
void run_rung(const ScenarioConfig& cfg, RungResult& out) {
  const auto& s = cfg.scenario;
  if (s == "smooth_consistency") smooth_consistency<Dim>(cfg, out);
  else if (s == "background_independence") background_independence<Dim>(cfg, out);
  else if (s == "mollify_convergence") mollify_convergence<Dim>(cfg, out);
  else if (s == "cutoff_decay") cutoff_decay<Dim>(cfg, out);
  else if (is_flow_scenario(s)) flow_scenario<Dim>(cfg, out);
  else fail(ErrorCode::config_invalid, "unknown scenario '" + s + "'");
}

/// Error text without the leading "Code: " prefix.
inline std::string bare_message(const Error& e) {
  std::string m = e.what();
  const auto cut = m.find(": ");
  return cut == std::string::npos ? m : m.substr(cut + 2);
}

inline std::vector<double> rung_series(const std::vector<RungResult>& rungs, const std::string& key) {
  std::vector<double> v;
  for (const auto& r : rungs) v.push_back(r.values.at(key));
  return v;
}

inline std::vector<double> rung_spacings(const std::vector<RungResult>& rungs) {
  std::vector<double> h;
  for (const auto& r : rungs) h.push_back(1.0 / r.rung.N);
  return h;
}

inline void cross_rung_checks(ScenarioRun& run) {
  const auto& cfg = run.config;
  const auto& rungs = run.rungs;
  const auto& s = cfg.scenario;
  if (s == "smooth_consistency" || s == "background_independence") {
    const std::string key = s == "smooth_consistency" ? "max_relative_error" : "max_relative_difference";
    const auto errors = rung_series(rungs, key);
    if (rungs.size() >= 2) run.checks.push_back(check_ge("fitted_order", convergence_order(rung_spacings(rungs), errors),
                                                         cfg.tol("min_order")));
    run.checks.push_back(check_le("finest_" + key, errors.back(), cfg.tol(key)));
  }
  if (s == "flow_singular_floor") {
    const auto tol = rung_series(rungs, "tol");
    const auto floor = rung_series(rungs, "a_floor");
    run.checks.push_back(check_le("finest_tol", tol.back(), cfg.tol("floor_fraction") * std::abs(floor.back())));
    for (std::size_t i = 1; i < rungs.size(); ++i)
      run.checks.push_back(check_le("tol_" + rungs[i].label + "_vs_previous", tol[i],
                                    cfg.tol("halving_ratio") * tol[i - 1]));
  }
}

template <int Dim>
ScenarioRun execute_dim(const ScenarioConfig& cfg) {
  ScenarioRun run;
  run.config = cfg;
  for (std::size_t i = 0; i < cfg.ladder.size(); ++i) {
    RungResult r;
    r.rung = cfg.ladder[i];
    r.label = r.rung.label(i);
    try {
      run_rung<Dim>(cfg, r);
    } catch (const Error& e) {
      throw Error(e.code(), r.label + ": " + bare_message(e));
    }
    run.aborted = run.aborted || r.aborted;
    run.rungs.push_back(std::move(r));
  }
  if (!run.aborted) cross_rung_checks(run);
  return run;
}

}  // namespace detail

/// Runs every rung of a validated scenario in ladder order. Module errors are
/// rethrown with the rung label prepended.
inline ScenarioRun execute(const ScenarioConfig& cfg) {
  return cfg.dimension == 2 ? detail::execute_dim<2>(cfg) : detail::execute_dim<3>(cfg);
}

}  // namespace roughflow::lab
