// trainguard: run, suite, calibrate and report subcommands.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trainguard/harness.hpp"
#include "trainguard/report.hpp"
#include "trainguard/suite_config.hpp"

namespace fs = std::filesystem;
using namespace trainguard;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int fail(const std::string& kind, const std::string& message, const std::string& key = "") {
  nlohmann::ordered_json err;
  err["error"] = kind;
  if (!key.empty()) err["key"] = key;
  err["message"] = message;
  std::cerr << err.dump() << '\n';
  return 1;
}

SuiteConfig load(const Globals& g) {
  return g.config.empty() ? default_suite_config() : load_suite_config(g.config);
}

fs::path out_dir(const Globals& g, const SuiteConfig& cfg) {
  return g.out.empty() ? fs::path(cfg.output) : fs::path(g.out);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_rows(const fs::path& path, const std::vector<CsvRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  write_csv(out, rows);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::optional<std::vector<std::uint64_t>> seed_filter(const Globals& g) {
  if (!g.seed) return std::nullopt;
  return std::vector<std::uint64_t>{*g.seed};
}

int cmd_run(const Globals& g, const std::string& scenario, const std::string& arm) {
  const SuiteConfig cfg = load(g);
  const std::vector<std::uint64_t> seeds{g.seed.value_or(cfg.seeds.front())};
  std::optional<std::string> filter;
  if (!scenario.empty()) filter = scenario;
  const PlannedSuite plan = plan_suite(cfg, seeds, filter);

  const RunConfig* chosen = nullptr;
  for (const RunPair& p : plan.pairs) {
    for (const RunConfig* c : {&p.baseline, &p.guarded}) {
      const bool match = arm == c->arm || (arm == "guard" && c == &p.guarded) ||
                         (arm == "baseline" && c == &p.baseline);
      if (match && chosen == nullptr) chosen = c;
    }
    if (chosen != nullptr) break;
  }
  if (chosen == nullptr) return fail("usage", "no run matches arm '" + arm + "'", "arm");

  const fs::path dir = out_dir(g, cfg);
  fs::create_directories(dir);
  write_text(dir / "config.resolved.json", emit_suite_config(cfg));
  const RunResult r = run_training(*chosen, dir);
  write_rows(dir / "run.csv", {csv_row(r)});
  if (!g.quiet) {
    nlohmann::ordered_json j;
    j["scenario"] = r.scenario;
    j["arm"] = r.arm;
    j["seed"] = r.seed;
    j["lr"] = chosen->optimizer.lr;
    j["initial_loss"] = r.initial_loss;
    j["final_loss"] = std::isfinite(r.final_loss) ? nlohmann::ordered_json(r.final_loss) : nullptr;
    j["verdict"] = verdict(r.initial_loss, r.final_loss);
    j["active_steps"] = r.summary.control_active_steps;
    j["regime_switches"] = r.summary.regime_switches;
    j["control_energy"] = r.summary.control_energy;
    j["telemetry"] = r.telemetry_path->string();
    std::cout << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_suite(const Globals& g, const std::string& scenario, unsigned jobs) {
  const SuiteConfig cfg = load(g);
  std::optional<std::string> filter;
  if (!scenario.empty()) filter = scenario;
  const fs::path dir = out_dir(g, cfg);
  fs::create_directories(dir);
  write_text(dir / "config.resolved.json", emit_suite_config(cfg));

  const PlannedSuite plan = plan_suite(cfg, seed_filter(g), filter);
  write_text(dir / "calibration.json", calibration_to_json(plan.calibrations));
  const std::vector<ComparisonRow> rows = run_suite(plan.pairs, SuiteOptions{dir, jobs});

  const std::vector<CsvRow> csv = csv_rows(rows);
  write_rows(dir / "suite.csv", csv);
  // Render from the file just written so that `report` reproduces it exactly.
  const std::string md = render_report(read_csv_file(dir / "suite.csv"));
  write_text(dir / "report.md", md);
  if (!g.quiet) std::cout << md;

  nlohmann::ordered_json errors = nlohmann::ordered_json::array();
  for (const ComparisonRow& row : rows) {
    if (!row.error.empty()) {
      errors.push_back({{"scenario", row.scenario}, {"seed", row.seed}, {"message", row.error}});
    }
  }
  if (!errors.empty()) {
    nlohmann::ordered_json err;
    err["error"] = "run";
    err["failures"] = errors;
    std::cerr << err.dump() << '\n';
    return 1;
  }
  return 0;
}

int cmd_calibrate(const Globals& g, std::string task) {
  const SuiteConfig cfg = load(g);
  if (task.empty()) {
    for (const ScenarioSpec& sc : cfg.scenarios) {
      for (const LrSpec& lr : sc.lrs) {
        if (lr.calibrated() && task.empty()) task = sc.task;
      }
    }
    if (task.empty()) task = cfg.tasks.begin()->first;
  }
  const std::vector<std::uint64_t> seeds = g.seed ? std::vector<std::uint64_t>{*g.seed} : cfg.seeds;
  const Calibration cal = calibrate_divergence_lr(calibration_probe(cfg, task), seeds,
                                                  cfg.calibration.floor_lr,
                                                  cfg.calibration.max_doublings);
  const std::string text = calibration_to_json({{task, cal}});
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    write_text(fs::path(g.out) / "calibration.json", text);
  }
  if (!g.quiet) {
    std::cout << text;
  } else {
    std::printf("%.17g\n", cal.lr);
  }
  return 0;
}

int cmd_report(const Globals& g, const std::string& dir_arg) {
  fs::path dir = !dir_arg.empty() ? fs::path(dir_arg) : !g.out.empty() ? fs::path(g.out) : fs::path();
  if (dir.empty()) dir = load(g).output;
  const fs::path csv = dir / "suite.csv";
  if (!fs::exists(csv)) return fail("report", "no suite.csv in " + dir.string());
  const std::string md = render_report(read_csv_file(csv));
  write_text(dir / "report.md", md);
  if (!g.quiet) std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bounded training governance over AdamW: stress suite and reports"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "suite configuration JSON (built-in suite when omitted)");
  app.add_option("--out", g.out, "output directory (default: the config's output)");
  app.add_option("--seed", g.seed, "restrict runs to one seed");
  app.add_flag("--quiet", g.quiet, "no report on stdout");

  std::string scenario, arm = "guard", task, report_dir;
  unsigned jobs = 1;

  auto* run = app.add_subcommand("run", "execute one run of the suite");
  run->add_option("--scenario", scenario, "scenario id or expanded run id (default: first)");
  run->add_option("--arm", arm, "guard, baseline, or an exact arm name")->capture_default_str();
  run->fallthrough();

  auto* suite = app.add_subcommand("suite", "execute the whole matrix and write CSV and report");
  suite->add_option("--scenario", scenario, "only this scenario");
  suite->add_option("--jobs", jobs, "concurrent runs")->capture_default_str()->check(CLI::PositiveNumber);
  suite->fallthrough();

  auto* calibrate = app.add_subcommand("calibrate", "print the first degrading learning rate");
  calibrate->add_option("--task", task, "task name from the config");
  calibrate->fallthrough();

  auto* report = app.add_subcommand("report", "re-render report.md from an existing suite.csv");
  report->add_option("dir", report_dir, "directory holding suite.csv (default: --out)");
  report->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  try {
    if (*run) return cmd_run(g, scenario, arm);
    if (*suite) return cmd_suite(g, scenario, jobs);
    if (*calibrate) return cmd_calibrate(g, task);
    return cmd_report(g, report_dir);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), e.key());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
}
