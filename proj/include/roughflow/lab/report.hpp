#pragma once

// Artifact writing, exit codes and run-to-run comparison.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roughflow/field_io.hpp"
#include "roughflow/lab/config.hpp"
#include "roughflow/lab/scenarios.hpp"

namespace roughflow::lab {

namespace fs = std::filesystem;

enum ExitCode : int { exit_pass = 0, exit_tolerance = 2, exit_config = 3, exit_aborted = 4 };

inline std::string rung_table_csv(const RungResult& r) {
  std::ostringstream out;
  out << "# roughflow table v1\nquantity,parameter,value,error\n";
  for (const auto& row : r.table)
    out << row.quantity << ',' << csv_number(row.parameter) << ',' << csv_number(row.value) << ','
        << csv_number(row.error) << '\n';
  return out.str();
}

/// Scenario-level table. order is the local convergence order of error
/// between consecutive rungs with the same quantity and parameter.
inline std::string convergence_table_csv(const ScenarioRun& run) {
  std::ostringstream out;
  out << "# roughflow convergence v1\nrung,N,delta,dt,quantity,parameter,value,error,order\n";
  std::map<std::string, std::pair<int, double>> last;  // key -> (N, error)
  for (const auto& r : run.rungs)
    for (const auto& row : r.table) {
      const std::string key = row.quantity + "@" + csv_number(row.parameter);
      double order = nan_value;
      const auto it = last.find(key);
      if (it != last.end() && it->second.first != r.rung.N && it->second.second > 0.0 && row.error > 0.0)
        order = std::log(it->second.second / row.error) / std::log(static_cast<double>(r.rung.N) / it->second.first);
      if (std::isfinite(row.error)) last[key] = {r.rung.N, row.error};
      out << r.label << ',' << r.rung.N << ',' << csv_number(r.rung.delta) << ',' << csv_number(r.rung.dt) << ','
          << row.quantity << ',' << csv_number(row.parameter) << ',' << csv_number(row.value) << ','
          << csv_number(row.error) << ',' << csv_number(order) << '\n';
    }
  return out.str();
}

struct ScenarioOutcome {
  int exit_code = exit_pass;
  json verdict;
  std::string message;
};

inline json verdict_json(const ScenarioRun& run) {
  json rungs = json::array();
  for (const auto& r : run.rungs)
    rungs.push_back({{"label", r.label}, {"rung", r.rung}, {"aborted", r.aborted}, {"checks", r.checks}});
  const int code = run.aborted ? exit_aborted : (run.pass() ? exit_pass : exit_tolerance);
  return json{{"schema", "roughflow verdict v1"},
              {"scenario", run.config.scenario},
              {"ladder", run.config.ladder},
              {"config", run.config.to_json()},
              {"pass", run.pass()},
              {"aborted", run.aborted},
              {"exit_code", code},
              {"checks", run.checks},
              {"rungs", rungs}};
}

/// Writes out/<scenario>/<rung>/{diagnostics.csv, summary.json, table.csv}
/// plus the scenario's verdict.json and table.csv. Every file is written atomically.
inline void write_artifacts(const ScenarioRun& run, const fs::path& out, json verdict) {
  const auto dir = out / run.config.scenario;
  for (const auto& r : run.rungs) {
    const auto rd = dir / r.label;
    json summary = r.summary;
    summary["schema"] = "roughflow summary v1";
    summary["scenario"] = run.config.scenario;
    summary["rung"] = r.rung;
    summary["checks"] = r.checks;
    write_file_atomic(rd / "diagnostics.csv", r.diagnostics_csv);
    write_file_atomic(rd / "summary.json", summary.dump(2) + "\n");
    write_file_atomic(rd / "table.csv", rung_table_csv(r));
    for (const auto& [name, body] : r.extra_files) write_file_atomic(rd / name, body);
  }
  write_file_atomic(dir / "table.csv", convergence_table_csv(run));
  write_file_atomic(dir / "verdict.json", verdict.dump(2) + "\n");
}

/// Runs a validated scenario and writes its artifacts. Module errors become
/// exit code 3 with the error recorded in verdict.json.
inline ScenarioOutcome run_scenario(const ScenarioConfig& cfg, const fs::path& out) {
  ScenarioOutcome o;
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto run = execute(cfg);
    o.verdict = verdict_json(run);
    o.exit_code = o.verdict["exit_code"].get<int>();
    o.verdict["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_artifacts(run, out, o.verdict);
    o.message = o.exit_code == exit_pass ? "pass" : (o.exit_code == exit_aborted ? "flow aborted" : "tolerance failed");
  } catch (const Error& e) {
    o.exit_code = exit_config;
    o.message = e.what();
    o.verdict = json{{"schema", "roughflow verdict v1"}, {"scenario", cfg.scenario}, {"ladder", cfg.ladder},
                     {"config", cfg.to_json()},         {"pass", false},           {"exit_code", exit_config},
                     {"error", e.what()},               {"error_code", std::string(to_string(e.code()))}};
    write_file_atomic(out / cfg.scenario / "verdict.json", o.verdict.dump(2) + "\n");
  }
  return o;
}

struct CompareEntry {
  std::string where;
  double a = 0.0;
  double b = 0.0;
  double relative = 0.0;
};

struct CompareReport {
  std::string scenario;
  std::size_t compared = 0;
  double max_relative = 0.0;
  double threshold = 1e-8;
  std::vector<CompareEntry> differences;  // every nonzero difference
  std::vector<std::string> flagged;       // relative difference above threshold

  bool identical() const { return differences.empty(); }
  bool within_threshold() const { return flagged.empty(); }

  json to_json() const {
    json diffs = json::array();
    for (const auto& d : differences) diffs.push_back({{"where", d.where}, {"a", d.a}, {"b", d.b}, {"relative", d.relative}});
    return json{{"scenario", scenario},   {"compared", compared},     {"max_relative", max_relative},
                {"threshold", threshold}, {"differences", diffs},     {"flagged", flagged},
                {"within_threshold", within_threshold()}};
  }
};

inline double relative_difference(double a, double b) {
  if (a == b || (std::isnan(a) && std::isnan(b))) return 0.0;
  if (!std::isfinite(a) || !std::isfinite(b)) return INFINITY;
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline void record(CompareReport& r, const std::string& where, double a, double b) {
  ++r.compared;
  const double rel = relative_difference(a, b);
  if (rel == 0.0) return;
  r.differences.push_back({where, a, b, rel});
  r.max_relative = std::max(r.max_relative, rel);
  if (rel > r.threshold) r.flagged.push_back(where);
}

inline void compare_json(CompareReport& r, const std::string& where, const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    record(r, where, a.get<double>(), b.get<double>());
  } else if (a.is_object() && b.is_object()) {
    for (const auto& [key, va] : a.items()) {
      if (ends_with(key, "_seconds")) continue;
      if (!b.contains(key)) fail(ErrorCode::mismatched_scenarios, where + "/" + key + " missing in second run");
      compare_json(r, where + "/" + key, va, b.at(key));
    }
  } else if (a.is_array() && b.is_array()) {
    if (a.size() != b.size()) fail(ErrorCode::mismatched_scenarios, where + " differs in length");
    for (std::size_t i = 0; i < a.size(); ++i) compare_json(r, where + "/" + std::to_string(i), a[i], b[i]);
  } else if (a != b && !(a.is_null() && b.is_null())) {
    if (a.type() != b.type()) fail(ErrorCode::mismatched_scenarios, where + " differs in type");
    r.flagged.push_back(where);
  }
}

inline std::vector<std::vector<std::string>> csv_cells(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline void compare_csv(CompareReport& r, const std::string& where, const std::string& a, const std::string& b) {
  const auto ra = csv_cells(a), rb = csv_cells(b);
  if (ra.size() != rb.size()) fail(ErrorCode::mismatched_scenarios, where + " differs in row count");
  for (std::size_t i = 0; i < ra.size(); ++i) {
    if (ra[i].size() != rb[i].size()) fail(ErrorCode::mismatched_scenarios, where + " differs in column count");
    for (std::size_t k = 0; k < ra[i].size(); ++k) {
      const auto loc = where + ":" + std::to_string(i + 1) + ":" + std::to_string(k + 1);
      char *ea = nullptr, *eb = nullptr;
      const double va = std::strtod(ra[i][k].c_str(), &ea), vb = std::strtod(rb[i][k].c_str(), &eb);
      const bool na = !ra[i][k].empty() && *ea == '\0', nb = !rb[i][k].empty() && *eb == '\0';
      if (na && nb) record(r, loc, va, vb);
      else if (ra[i][k] != rb[i][k]) r.flagged.push_back(loc);
    }
  }
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::io_error, p.string() + ": " + e.what());
  }
}

}  // namespace detail

/// Compares two scenario output directories (out/<scenario>). Both must hold
/// the same scenario and ladder; wall-clock keys (*_seconds) are ignored.
inline CompareReport compare_runs(const fs::path& a, const fs::path& b, double threshold = 1e-8) {
  const auto va = detail::read_json(a / "verdict.json"), vb = detail::read_json(b / "verdict.json");
  if (va.value("scenario", "") != vb.value("scenario", ""))
    fail(ErrorCode::mismatched_scenarios, "scenarios differ: " + va.value("scenario", "") + " vs " + vb.value("scenario", ""));
  if (va.at("ladder") != vb.at("ladder")) fail(ErrorCode::mismatched_scenarios, "ladders differ");
  CompareReport r;
  r.scenario = va.value("scenario", "");
  r.threshold = threshold;
  detail::compare_json(r, "verdict.json", va, vb);
  if (va.contains("rungs"))
    for (const auto& rung : va.at("rungs")) {
      const auto label = rung.at("label").get<std::string>();
      detail::compare_json(r, label + "/summary.json", detail::read_json(a / label / "summary.json"),
                           detail::read_json(b / label / "summary.json"));
      for (const char* name : {"diagnostics.csv", "table.csv"})
        detail::compare_csv(r, label + "/" + name, read_file(a / label / name), read_file(b / label / name));
    }
  if (fs::exists(a / "table.csv"))
    detail::compare_csv(r, "table.csv", read_file(a / "table.csv"), read_file(b / "table.csv"));
  return r;
}

}  // namespace roughflow::lab
