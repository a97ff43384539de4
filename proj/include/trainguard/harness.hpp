#pragma once

// Stress harness: single training runs, divergence calibration, outlier
// injection, and paired baseline-vs-guard suites.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trainguard/governor.hpp"
#include "trainguard/optimizer.hpp"
#include "trainguard/tasks.hpp"
#include "trainguard/telemetry.hpp"

namespace trainguard {

enum class InjectionMode : std::uint8_t { OutlierBatch, GradientBurst };

std::string_view to_string(InjectionMode mode) noexcept;
InjectionMode parse_injection_mode(std::string_view name);

/// Outliers on explicit steps and/or every `period` steps starting at `offset`.
struct InjectionSpec {
  InjectionMode mode = InjectionMode::OutlierBatch;
  double magnitude = 50.0;
  std::uint64_t period = 100;  // 0 disables the periodic rule
  std::uint64_t offset = 50;
  std::vector<std::uint64_t> steps;

  bool scheduled(std::uint64_t step) const noexcept;
  void validate(std::uint64_t run_steps) const;
  friend bool operator==(const InjectionSpec&, const InjectionSpec&) = default;
};

/// On scheduled steps: regression targets (outlier_batch on regression tasks),
/// the loss weight (outlier_batch on token tasks), or the post-hoc gradient
/// gain (gradient_burst) are multiplied by the magnitude and the batch is
/// flagged. Other steps pass through untouched.
Batch inject_outliers(Batch batch, const InjectionSpec& spec, std::uint64_t step);

struct RunConfig {
  std::string scenario = "run";
  std::string arm = "adamw";
  TaskSpec task;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  std::optional<GuardConfig> guard;  // guard arm
  bool baseline = true;              // baseline marker
  ClipConfig clip;
  std::uint64_t steps = 1000;
  std::uint64_t batch_size = 32;
  std::uint64_t eval_every = 100;
  std::uint64_t seed = 42;
  std::optional<InjectionSpec> injection;

  /// Throws ConfigError on conflicts (guard and baseline marker together, or
  /// neither) and on invalid components.
  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Names of the fields in which two configurations differ.
std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b);

/// Baseline and guarded arms may differ only in governance and clipping.
bool pairing_is_clean(const RunConfig& baseline, const RunConfig& guarded);

struct EvalPoint {
  std::uint64_t step = 0;  // number of optimizer steps taken
  double eval_loss = 0.0;
};

struct RunResult {
  std::string scenario;
  std::string arm;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_perplexity = 1.0;
  double wall_seconds = 0.0;
  double steps_per_second = 0.0;
  TelemetrySummary summary;
  std::vector<EvalPoint> trace;
  std::vector<StepRecord> records;
  std::vector<double> final_params;
  std::optional<std::uint64_t> diverged_at;  // step whose gradient went non-finite
  std::optional<std::filesystem::path> telemetry_path;
  std::optional<std::filesystem::path> summary_path;
};

/// Final loss non-finite or more than twice the initial loss.
bool is_severe_degradation(double initial_loss, double final_loss) noexcept;
/// Final loss finite and below the initial loss.
bool is_trainable(double initial_loss, double final_loss) noexcept;

/// Per-run file stem: "<scenario>__<arm>__seed<N>" with path separators replaced.
std::string run_file_stem(const RunConfig& cfg);

/// Executes one run. When `out_dir` is set, writes <stem>.jsonl and
/// <stem>.summary.json there.
RunResult run_training(const RunConfig& cfg,
                       const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Same, reusing an already constructed task (must match cfg.task and cfg.seed).
RunResult run_training(const RunConfig& cfg, const Task& task,
                       const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct CalibrationProbe {
  std::uint64_t seed = 0;
  double lr = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool degraded = false;
};

struct Calibration {
  double lr = 0.0;                 // max over seeds of the first degrading lr
  std::vector<double> per_seed;    // first degrading lr for each seed
  std::vector<CalibrationProbe> probes;
};

/// Doubles the learning rate from `floor_lr` until a baseline probe run built
/// from `probe` (arm, lr and schedule base replaced) degrades. Returns the
/// first degrading lr. Throws std::runtime_error("task not stressable") when
/// nothing degrades within `max_doublings` doublings.
double calibrate_divergence_lr(const RunConfig& probe, double floor_lr,
                               std::uint32_t max_doublings = 20,
                               std::vector<CalibrationProbe>* probes = nullptr);

/// Calibrates every seed and reports the largest degrading lr.
Calibration calibrate_divergence_lr(const RunConfig& probe, const std::vector<std::uint64_t>& seeds,
                                    double floor_lr, std::uint32_t max_doublings = 20);

/// Copy of `cfg` with the base learning rate replaced (schedule follows).
RunConfig with_lr(RunConfig cfg, double lr);

struct RunPair {
  RunConfig baseline;
  RunConfig guarded;
};

struct ComparisonRow {
  std::string scenario;
  std::uint64_t seed = 0;
  RunResult baseline;
  RunResult guarded;
  double ppl_reduction = 0.0;  // 1 - guard_ppl / baseline_ppl
  double e2e_speedup = 0.0;    // baseline wall / guard wall
  std::string error;           // set when either run failed
};

double ppl_reduction(double baseline_ppl, double guard_ppl) noexcept;
double e2e_speedup(double baseline_wall, double guard_wall) noexcept;

struct SuiteOptions {
  std::optional<std::filesystem::path> out_dir;
  unsigned jobs = 1;
};

/// Runs every pair (identical configurations are executed once) and returns
/// rows sorted by (scenario, seed, baseline arm). A failing run is recorded on
/// its rows; the suite continues.
std::vector<ComparisonRow> run_suite(const std::vector<RunPair>& suite,
                                     const SuiteOptions& options = {});

struct SeedStats {
  std::string scenario;
  std::string arm;
  std::size_t n = 0;
  double mean_loss = 0.0;
  double std_loss = 0.0;  // sample standard deviation; 0 when n < 2
  double mean_ppl = 0.0;
  double std_ppl = 0.0;
};

double mean(const std::vector<double>& xs) noexcept;
double sample_stddev(const std::vector<double>& xs) noexcept;

/// Mean and sample standard deviation across seeds for every (scenario, arm).
std::vector<SeedStats> seed_statistics(const std::vector<ComparisonRow>& rows);

}  // namespace trainguard
