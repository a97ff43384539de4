#pragma once

// Suite configuration file: parsing with strict key checking, emission with
// every default spelled out, and expansion into baseline/guard run pairs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trainguard/governor.hpp"
#include "trainguard/harness.hpp"
#include "trainguard/optimizer.hpp"
#include "trainguard/tasks.hpp"

namespace trainguard {

enum class ScenarioType : std::uint8_t { LrStress, ClipBaseline, Injection, LongBudget, SeedSweep };

std::string_view to_string(ScenarioType type) noexcept;
ScenarioType parse_scenario_type(std::string_view name);

/// Named learning-rate levels, as fractions of the calibrated divergence lr.
struct LrLevel {
  std::string_view name;
  double fraction;
};
inline constexpr LrLevel kLrLevels[] = {
    {"aggressive", 1.0},
    {"middle", 1.0 / 3.0},
    {"moderate", 1.0 / 6.0},
    {"safe", 1.0 / 16.0},
};
/// Throws ConfigError for unknown level names.
double level_fraction(std::string_view level);

/// Either an absolute learning rate or a named level.
struct LrSpec {
  std::optional<double> value;
  std::string level;

  bool calibrated() const noexcept { return !value.has_value(); }
  /// "aggressive", or the absolute value in shortest round-trip form.
  std::string label() const;
  friend bool operator==(const LrSpec&, const LrSpec&) = default;
};

struct ScenarioSpec {
  std::string id;
  ScenarioType type = ScenarioType::LrStress;
  std::string task;
  std::vector<LrSpec> lrs;
  std::uint64_t steps = 1000;
  std::uint64_t batch_size = 32;
  std::uint64_t eval_every = 100;
  std::optional<InjectionSpec> injection;
  std::vector<double> clips;         // clip_baseline: one clip-only arm per threshold
  std::optional<double> guard_clip;  // clip_baseline: threshold on the guard arm

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

struct ScheduleSettings {
  ScheduleKind kind = ScheduleKind::Cosine;
  double min_lr_ratio = 0.1;  // min_lr = ratio * base lr
  friend bool operator==(const ScheduleSettings&, const ScheduleSettings&) = default;
};

struct CalibrationSettings {
  double floor_lr = 1e-4;
  std::uint32_t max_doublings = 20;
  std::uint64_t probe_steps = 1000;
  std::uint64_t batch_size = 32;
  friend bool operator==(const CalibrationSettings&, const CalibrationSettings&) = default;
};

struct SuiteConfig {
  std::map<std::string, TaskSpec> tasks;
  OptimizerConfig optimizer;
  GuardConfig guard;
  ClipConfig clip;  // applied to every arm outside clip_baseline scenarios
  ScheduleSettings schedule;
  CalibrationSettings calibration;
  std::vector<ScenarioSpec> scenarios;
  std::vector<std::uint64_t> seeds{7, 42, 123};
  std::string output = "runs";

  /// Throws ConfigError with a dotted key path ("guard.c_max", "scenarios[2].task").
  void validate() const;
  friend bool operator==(const SuiteConfig&, const SuiteConfig&) = default;
};

/// The built-in desk suite.
SuiteConfig default_suite_config();

/// Missing sections take their defaults. When "scenarios" is absent the
/// built-in scenario list is used if "tasks" is absent too; otherwise every
/// declared task gets an lr_stress scenario at the aggressive, middle and
/// moderate levels. Unknown keys, type mismatches and invariant violations
/// throw ConfigError naming the key.
SuiteConfig parse_suite_config(std::string_view json_text);
SuiteConfig load_suite_config(const std::filesystem::path& path);

/// Pretty-printed JSON with every field present.
std::string emit_suite_config(const SuiteConfig& cfg);

/// Expanded id of one learning rate of a scenario: "<id>" for single-lr
/// scenarios, "<id>/<label>" otherwise.
std::string scenario_run_id(const ScenarioSpec& scenario, const LrSpec& lr);

struct PlannedSuite {
  std::vector<RunPair> pairs;
  std::map<std::string, Calibration> calibrations;  // by task name
};

/// Calibrates the tasks that use named levels (always over the configured
/// seeds, so a level means the same lr whichever runs are selected), then
/// builds every pair. `seeds` restricts the runs to other seeds; `scenario`
/// keeps only the scenario with that id (or expanded run id).
PlannedSuite plan_suite(const SuiteConfig& cfg,
                        const std::optional<std::vector<std::uint64_t>>& seeds = std::nullopt,
                        const std::optional<std::string>& scenario = std::nullopt);

/// Probe configuration used to calibrate `task_name`.
RunConfig calibration_probe(const SuiteConfig& cfg, const std::string& task_name);

std::string calibration_to_json(const std::map<std::string, Calibration>& calibrations);

}  // namespace trainguard
