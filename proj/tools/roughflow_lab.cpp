// roughflow_lab: runs scenario configs and compares their outputs.
//
//   roughflow_lab run --config scenario.json --out out/ [--threads K] [--seed S]
//   roughflow_lab compare out/a/<scenario> out/b/<scenario>
//   roughflow_lab list-scenarios
//
// Exit codes: 0 pass, 2 tolerance failure (or drift for compare),
// 3 config or module error, 4 aborted flow.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "roughflow/lab.hpp"
#include "roughflow/parallel.hpp"

namespace lab = roughflow::lab;

int main(int argc, char** argv) {
  CLI::App app{"roughflow experiment lab"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  int threads = 0;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "run a scenario config");
  run->add_option("--config", config_path, "scenario JSON file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output root; artifacts go to <out>/<scenario>/");
  run->add_option("--threads", threads, "worker threads (0 keeps the OpenMP default)")->check(CLI::NonNegativeNumber);
  run->add_option("--seed", seed, "seed for randomized wrinkle metrics (overrides the config)");

  std::string dir_a, dir_b;
  double threshold = 1e-8;
  auto* cmp = app.add_subcommand("compare", "compare two scenario output directories");
  cmp->add_option("a", dir_a, "first run, <out>/<scenario>")->required();
  cmp->add_option("b", dir_b, "second run")->required();
  cmp->add_option("--threshold", threshold, "relative drift flagged above this");

  auto* list = app.add_subcommand("list-scenarios", "print scenario names and their tolerance keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lab::exit_config;
  }

  try {
    if (*list) {
      for (const auto& name : lab::scenario_names()) {
        std::cout << name << ':';
        for (const auto& key : lab::required_tolerances(name)) std::cout << ' ' << key;
        std::cout << '\n';
      }
      return 0;
    }
    if (*cmp) {
      const auto r = lab::compare_runs(dir_a, dir_b, threshold);
      std::cout << r.to_json().dump(2) << '\n';
      return r.within_threshold() ? lab::exit_pass : lab::exit_tolerance;
    }
    auto cfg = lab::load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg = lab::parse_config(cfg.to_json());
    }
    if (threads > 0) roughflow::set_thread_count(threads);
    const auto o = lab::run_scenario(cfg, out_dir);
    std::cerr << cfg.scenario << ": " << o.message << " (exit " << o.exit_code << ")\n";
    if (o.verdict.contains("checks"))
      for (const auto& c : o.verdict["checks"])
        std::cerr << "  " << (c["pass"].get<bool>() ? "ok  " : "FAIL") << ' ' << c["name"].get<std::string>() << ' '
                  << c["value"] << ' ' << c["relation"].get<std::string>() << ' ' << c["limit"] << '\n';
    if (o.verdict.contains("rungs"))
      for (const auto& r : o.verdict["rungs"])
        for (const auto& c : r["checks"])
          std::cerr << "  " << (c["pass"].get<bool>() ? "ok  " : "FAIL") << ' ' << r["label"].get<std::string>() << ' '
                    << c["name"].get<std::string>() << ' ' << c["value"] << ' ' << c["relation"].get<std::string>()
                    << ' ' << c["limit"] << '\n';
    return o.exit_code;
  } catch (const roughflow::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return lab::exit_config;
  }
}
