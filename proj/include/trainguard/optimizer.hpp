#pragma once

// Optimizer plane: AdamW with decoupled weight decay, global-norm clipping,
// the cosine schedule, and the guarded step that puts the governor on top.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "trainguard/governor.hpp"
#include "trainguard/telemetry.hpp"

namespace trainguard {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  static OptimizerState zeros(std::size_t n) { return {std::vector<double>(n), std::vector<double>(n), 0}; }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Global-norm clipping threshold; disengaged means no clipping.
struct ClipConfig {
  std::optional<double> max_norm;

  bool enabled() const noexcept { return max_norm.has_value(); }
  void validate() const;
  friend bool operator==(const ClipConfig&, const ClipConfig&) = default;
};

enum class ScheduleKind : std::uint8_t { Cosine, Constant };

struct ScheduleConfig {
  double base_lr = 1e-3;
  double min_lr = 0.0;
  std::uint64_t total_steps = 1000;
  ScheduleKind kind = ScheduleKind::Cosine;

  void validate() const;
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

/// Advances the moments and writes the AdamW delta
///   -lr_t * (m_hat / (sqrt(v_hat) + eps) + weight_decay * params)
/// into `delta`. Nothing is applied to `params`. Throws NonFiniteGradient,
/// leaving `state` untouched, if any gradient entry is non-finite.
void adamw_step(OptimizerState& state, std::span<const double> params,
                std::span<const double> grads, double lr_t, const OptimizerConfig& cfg,
                std::span<double> delta);

/// Rescales `grads` in place so that its L2 norm is at most `max_norm`.
/// Returns the norm before clipping. Throws NonFiniteGradient on non-finite input.
double clip_global_norm(std::span<double> grads, double max_norm);

/// Learning rate at `step`; steps past the horizon hold min_lr.
double schedule_lr(std::uint64_t step, const ScheduleConfig& cfg);

/// Everything the governor carries between steps.
struct GuardBundle {
  GuardConfig config;
  AnalyzerState analyzer;
  ControlPosture posture;
  TelemetryLog log;

  explicit GuardBundle(GuardConfig cfg = {}) : config(cfg) { config.validate(); }
};

/// Per-call inputs of one optimizer step. `grads` may be modified in place by
/// clipping.
struct StepInputs {
  std::span<double> params;
  std::span<double> grads;
  std::span<const ParamGroup> layout;
  double loss = 0.0;
  std::uint64_t step = 0;
  double lr = 0.0;
};

/// clip -> sense -> classify -> posture -> (skip | adamw -> actuate -> apply) -> log.
/// Moments always see the post-clip gradient; the posture only scales the
/// applied delta. On a skipped step params and (m, v, t) are left untouched.
StepRecord guarded_step(GuardBundle& guard, OptimizerState& opt, const StepInputs& in,
                        const OptimizerConfig& opt_cfg, const ClipConfig& clip);

/// Plain AdamW (optionally clipped): clip -> adamw -> apply. Throws
/// NonFiniteGradient without touching anything when gradients are non-finite.
void plain_step(OptimizerState& opt, const StepInputs& in, const OptimizerConfig& opt_cfg,
                const ClipConfig& clip);

}  // namespace trainguard
