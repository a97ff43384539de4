#include "trainguard/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "trainguard/kernels.hpp"

namespace trainguard {

namespace fs = std::filesystem;

std::string_view to_string(InjectionMode mode) noexcept {
  return mode == InjectionMode::OutlierBatch ? "outlier_batch" : "gradient_burst";
}

InjectionMode parse_injection_mode(std::string_view name) {
  if (name == "outlier_batch") return InjectionMode::OutlierBatch;
  if (name == "gradient_burst") return InjectionMode::GradientBurst;
  throw ConfigError("mode", "unknown injection mode '" + std::string(name) + "'");
}

bool InjectionSpec::scheduled(std::uint64_t step) const noexcept {
  if (period > 0 && step >= offset && (step - offset) % period == 0) {
    return true;
  }
  return std::find(steps.begin(), steps.end(), step) != steps.end();
}

void InjectionSpec::validate(std::uint64_t run_steps) const {
  if (!(magnitude > 1.0) || !std::isfinite(magnitude)) {
    throw ConfigError("magnitude", "must be a finite value > 1");
  }
  if (period > 0 && offset >= run_steps) {
    throw ConfigError("offset", "first injection lies outside the run");
  }
  for (const std::uint64_t s : steps) {
    if (s >= run_steps) {
      throw ConfigError("steps", "injection step " + std::to_string(s) + " lies outside the run");
    }
  }
}

Batch inject_outliers(Batch batch, const InjectionSpec& spec, std::uint64_t step) {
  if (!spec.scheduled(step)) {
    return batch;
  }
  batch.outlier_flag = true;
  if (spec.mode == InjectionMode::GradientBurst) {
    batch.gradient_gain *= spec.magnitude;
  } else if (!batch.targets.empty()) {
    for (double& t : batch.targets) {
      t *= spec.magnitude;
    }
  } else {
    batch.loss_weight *= spec.magnitude;
  }
  return batch;
}

void RunConfig::validate() const {
  if (guard.has_value() && baseline) {
    throw ConfigError("arm", "guard configuration and baseline marker are both set");
  }
  if (!guard.has_value() && !baseline) {
    throw ConfigError("arm", "neither a guard configuration nor the baseline marker is set");
  }
  task.validate();
  optimizer.validate();
  schedule.validate();
  clip.validate();
  if (guard) {
    guard->validate();
  }
  if (steps < 1) throw ConfigError("steps", "must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (eval_every < 1 || eval_every > steps) {
    throw ConfigError("eval_every", "must lie in [1, steps]");
  }
  if (schedule.base_lr != optimizer.lr) {
    throw ConfigError("schedule", "base_lr must equal the optimizer lr");
  }
  if (schedule.total_steps != steps) {
    throw ConfigError("schedule", "total_steps must equal the run length");
  }
  if (injection) {
    injection->validate(steps);
  }
}

std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  std::vector<std::string> out;
  auto check = [&](bool same, const char* name) {
    if (!same) out.emplace_back(name);
  };
  check(a.scenario == b.scenario, "scenario");
  check(a.arm == b.arm, "arm");
  check(a.task == b.task, "task");
  check(a.optimizer == b.optimizer, "optimizer");
  check(a.schedule == b.schedule, "schedule");
  check(a.guard == b.guard, "guard");
  check(a.baseline == b.baseline, "baseline");
  check(a.clip == b.clip, "clip");
  check(a.steps == b.steps, "steps");
  check(a.batch_size == b.batch_size, "batch_size");
  check(a.eval_every == b.eval_every, "eval_every");
  check(a.seed == b.seed, "seed");
  check(a.injection == b.injection, "injection");
  return out;
}

bool pairing_is_clean(const RunConfig& baseline, const RunConfig& guarded) {
  for (const std::string& field : config_diff(baseline, guarded)) {
    if (field != "arm" && field != "guard" && field != "baseline" && field != "clip") {
      return false;
    }
  }
  return true;
}

bool is_severe_degradation(double initial_loss, double final_loss) noexcept {
  return !std::isfinite(final_loss) || final_loss > 2.0 * initial_loss;
}

bool is_trainable(double initial_loss, double final_loss) noexcept {
  return std::isfinite(final_loss) && final_loss < initial_loss;
}

std::string run_file_stem(const RunConfig& cfg) {
  std::string stem = cfg.scenario + "__" + cfg.arm + "__seed" + std::to_string(cfg.seed);
  for (char& c : stem) {
    if (c == '/' || c == '\\' || c == ' ' || c == ':') {
      c = '_';
    }
  }
  return stem;
}

RunResult run_training(const RunConfig& cfg, const std::optional<fs::path>& out_dir) {
  cfg.validate();
  const Task task = make_task(cfg.task, cfg.seed);
  return run_training(cfg, task, out_dir);
}

RunResult run_training(const RunConfig& cfg, const Task& task,
                       const std::optional<fs::path>& out_dir) {
  cfg.validate();
  if (!(task.spec() == cfg.task) || task.seed() != cfg.seed) {
    throw std::invalid_argument("run_training: task does not match the run configuration");
  }
  const auto started = std::chrono::steady_clock::now();

  RunResult result;
  result.scenario = cfg.scenario;
  result.arm = cfg.arm;
  result.seed = cfg.seed;

  std::vector<double> params = task.initial_params();
  std::vector<double> grads(params.size());
  OptimizerState opt = OptimizerState::zeros(params.size());

  result.initial_loss = task.evaluate(params).eval_loss;
  result.trace.push_back({0, result.initial_loss});

  // The guard arm acts through its bundle. Baseline arms keep a passive
  // analyzer so their telemetry still shows the regimes they went through.
  GuardBundle guard(cfg.guard.value_or(GuardConfig{}));
  if (!cfg.guard) {
    guard.config.auto_enabled = false;
  }
  TelemetryLog baseline_log;

  for (std::uint64_t step = 0; step < cfg.steps; ++step) {
    RngState stream = batch_stream(cfg.seed, step);
    Batch batch = task.sample_batch(stream, cfg.batch_size);
    if (cfg.injection) {
      batch = inject_outliers(std::move(batch), *cfg.injection, step);
    }
    const double loss = task.forward_backward(params, batch, grads);
    if (batch.gradient_gain != 1.0) {
      kernels::scale(grads, batch.gradient_gain);
    }
    const double lr = schedule_lr(step, cfg.schedule);
    const StepInputs in{params, grads, task.layout(), loss, step, lr};

    bool diverged = false;
    if (cfg.guard) {
      try {
        guarded_step(guard, opt, in, cfg.optimizer, cfg.clip);
      } catch (const NonFiniteGradient&) {
        diverged = true;  // only reachable with auto_enabled = false
      }
    } else {
      try {
        plain_step(opt, in, cfg.optimizer, cfg.clip);
      } catch (const NonFiniteGradient&) {
        diverged = true;
      }
      const TelemetrySample sample = sense(step, loss, grads, task.layout(), lr, guard.config);
      auto [regime, analyzer] = classify_regime(sample, guard.analyzer, guard.config, 1.0);
      guard.analyzer = analyzer;
      StepRecord rec;
      rec.step = step;
      rec.loss = loss;
      rec.loss_ema = analyzer.loss_ema;
      rec.regime = regime;
      rec.scale = 1.0;
      rec.active = false;
      rec.skipped = false;
      rec.grad_rms = sample.grad_rms;
      rec.lr = lr;
      baseline_log.append(rec);
    }

    if (diverged) {
      // A framework optimizer would have written NaN into the parameters.
      std::fill(params.begin(), params.end(), std::numeric_limits<double>::quiet_NaN());
      result.diverged_at = step;
      result.trace.push_back({step + 1, std::numeric_limits<double>::quiet_NaN()});
      break;
    }
    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
      result.trace.push_back({step + 1, task.evaluate(params).eval_loss});
    }
  }

  result.final_loss = result.trace.back().eval_loss;
  result.final_perplexity = std::exp(result.final_loss);
  result.records = cfg.guard ? guard.log.records() : baseline_log.records();
  result.summary = finalize_log(result.records);
  result.final_params = std::move(params);

  const auto finished = std::chrono::steady_clock::now();
  result.wall_seconds = std::chrono::duration<double>(finished - started).count();
  result.steps_per_second =
      result.wall_seconds > 0.0 ? static_cast<double>(result.records.size()) / result.wall_seconds
                                : 0.0;

  if (out_dir) {
    fs::create_directories(*out_dir);
    const std::string stem = run_file_stem(cfg);
    const fs::path jsonl = *out_dir / (stem + ".jsonl");
    const fs::path summary = *out_dir / (stem + ".summary.json");
    {
      std::ofstream out(jsonl, std::ios::binary);
      write_jsonl(out, result.records);
      if (!out) throw std::runtime_error("failed writing " + jsonl.string());
    }
    {
      std::ofstream out(summary, std::ios::binary);
      out << to_json(result.summary) << '\n';
      if (!out) throw std::runtime_error("failed writing " + summary.string());
    }
    result.telemetry_path = jsonl;
    result.summary_path = summary;
  }
  return result;
}

RunConfig with_lr(RunConfig cfg, double lr) {
  cfg.optimizer.lr = lr;
  cfg.schedule.base_lr = lr;
  cfg.schedule.min_lr = std::min(cfg.schedule.min_lr, lr);
  return cfg;
}

double calibrate_divergence_lr(const RunConfig& probe, double floor_lr,
                               std::uint32_t max_doublings,
                               std::vector<CalibrationProbe>* probes) {
  if (!(floor_lr > 0.0)) {
    throw std::invalid_argument("calibrate_divergence_lr: floor must be > 0");
  }
  RunConfig base = probe;
  base.guard.reset();
  base.baseline = true;
  base.arm = "calibration";
  const double min_ratio = probe.schedule.base_lr > 0.0 ? probe.schedule.min_lr / probe.schedule.base_lr : 0.0;
  const Task task = make_task(base.task, base.seed);

  double lr = floor_lr;
  for (std::uint32_t i = 0; i <= max_doublings; ++i, lr *= 2.0) {
    RunConfig cfg = with_lr(base, lr);
    cfg.schedule.min_lr = lr * min_ratio;
    const RunResult r = run_training(cfg, task);
    const bool degraded = is_severe_degradation(r.initial_loss, r.final_loss);
    if (probes != nullptr) {
      probes->push_back({base.seed, lr, r.initial_loss, r.final_loss, degraded});
    }
    if (degraded) {
      return lr;
    }
  }
  throw std::runtime_error("task not stressable");
}

Calibration calibrate_divergence_lr(const RunConfig& probe, const std::vector<std::uint64_t>& seeds,
                                    double floor_lr, std::uint32_t max_doublings) {
  if (seeds.empty()) {
    throw std::invalid_argument("calibrate_divergence_lr: no seeds");
  }
  Calibration cal;
  for (const std::uint64_t seed : seeds) {
    RunConfig cfg = probe;
    cfg.seed = seed;
    const double lr = calibrate_divergence_lr(cfg, floor_lr, max_doublings, &cal.probes);
    cal.per_seed.push_back(lr);
    cal.lr = std::max(cal.lr, lr);
  }
  return cal;
}

double ppl_reduction(double baseline_ppl, double guard_ppl) noexcept {
  return 1.0 - guard_ppl / baseline_ppl;
}

double e2e_speedup(double baseline_wall, double guard_wall) noexcept {
  return baseline_wall / guard_wall;
}

namespace {

std::string run_key(const RunConfig& cfg) {
  return cfg.scenario + '\x1f' + cfg.arm + '\x1f' + std::to_string(cfg.seed);
}

struct Job {
  const RunConfig* cfg = nullptr;
  std::optional<RunResult> result;
  std::string error;
};

}  // namespace

std::vector<ComparisonRow> run_suite(const std::vector<RunPair>& suite,
                                     const SuiteOptions& options) {
  if (suite.empty()) {
    throw std::invalid_argument("run_suite: empty suite");
  }

  std::vector<Job> jobs;
  std::map<std::string, std::size_t> index;
  auto enqueue = [&](const RunConfig& cfg) -> std::size_t {
    const std::string key = run_key(cfg);
    if (auto it = index.find(key); it != index.end()) {
      if (!(*jobs[it->second].cfg == cfg)) {
        throw std::invalid_argument("run_suite: two different configurations share run id " +
                                    run_file_stem(cfg));
      }
      return it->second;
    }
    jobs.push_back(Job{&cfg, std::nullopt, {}});
    index.emplace(key, jobs.size() - 1);
    return jobs.size() - 1;
  };
  std::vector<std::pair<std::size_t, std::size_t>> pair_jobs;
  for (const RunPair& p : suite) {
    pair_jobs.emplace_back(enqueue(p.baseline), enqueue(p.guarded));
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i].result = run_training(*jobs[i].cfg, options.out_dir);
      } catch (const std::exception& e) {
        jobs[i].error = e.what();
      }
    }
  };
  const unsigned workers = std::max(1U, std::min<unsigned>(options.jobs, jobs.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back(worker);
    }
  }

  std::vector<ComparisonRow> rows;
  for (std::size_t k = 0; k < suite.size(); ++k) {
    const Job& b = jobs[pair_jobs[k].first];
    const Job& g = jobs[pair_jobs[k].second];
    ComparisonRow row;
    row.scenario = suite[k].guarded.scenario;
    row.seed = suite[k].guarded.seed;
    if (b.result) row.baseline = *b.result;
    if (g.result) row.guarded = *g.result;
    row.baseline.arm = suite[k].baseline.arm;
    row.guarded.arm = suite[k].guarded.arm;
    if (!b.error.empty() || !g.error.empty()) {
      row.error = !b.error.empty() ? b.error : g.error;
    } else {
      row.ppl_reduction = ppl_reduction(row.baseline.final_perplexity, row.guarded.final_perplexity);
      row.e2e_speedup = e2e_speedup(row.baseline.wall_seconds, row.guarded.wall_seconds);
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (a.scenario != b.scenario) return a.scenario < b.scenario;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.baseline.arm < b.baseline.arm;
  });
  return rows;
}

double mean(const std::vector<double>& xs) noexcept {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs) noexcept {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  double ss = 0.0;
  for (const double x : xs) {
    ss += (x - mu) * (x - mu);
  }
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::vector<SeedStats> seed_statistics(const std::vector<ComparisonRow>& rows) {
  // (scenario, arm) -> seed -> (loss, ppl); a guard run shared by several
  // rows is counted once.
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, std::pair<double, double>>>
      groups;
  for (const ComparisonRow& row : rows) {
    if (!row.error.empty()) continue;
    for (const RunResult* r : {&row.baseline, &row.guarded}) {
      groups[{row.scenario, r->arm}][row.seed] = {r->final_loss, r->final_perplexity};
    }
  }
  std::vector<SeedStats> out;
  for (const auto& [key, by_seed] : groups) {
    std::vector<double> losses, ppls;
    for (const auto& [seed, v] : by_seed) {
      losses.push_back(v.first);
      ppls.push_back(v.second);
    }
    SeedStats s;
    s.scenario = key.first;
    s.arm = key.second;
    s.n = losses.size();
    s.mean_loss = mean(losses);
    s.std_loss = sample_stddev(losses);
    s.mean_ppl = mean(ppls);
    s.std_ppl = sample_stddev(ppls);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace trainguard
