#include "trainguard/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "trainguard/kernels.hpp"

namespace trainguard {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("lr", "must be a finite value > 0");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0)) {
    throw ConfigError("betas", "beta1 must lie in (0, 1)");
  }
  if (!(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("betas", "beta2 must lie in (0, 1)");
  }
  if (!(eps > 0.0)) {
    throw ConfigError("eps", "must be > 0");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight_decay", "must be a finite value >= 0");
  }
}

void ClipConfig::validate() const {
  if (max_norm && !(*max_norm > 0.0 && std::isfinite(*max_norm))) {
    throw ConfigError("g", "clip threshold must be a finite value > 0");
  }
}

void ScheduleConfig::validate() const {
  if (!(base_lr > 0.0)) {
    throw ConfigError("base_lr", "must be > 0");
  }
  if (!(min_lr >= 0.0 && min_lr <= base_lr)) {
    throw ConfigError("min_lr", "must lie in [0, base_lr]");
  }
  if (total_steps < 1) {
    throw ConfigError("total_steps", "must be >= 1");
  }
}

void adamw_step(OptimizerState& state, std::span<const double> params,
                std::span<const double> grads, double lr_t, const OptimizerConfig& cfg,
                std::span<double> delta) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n || delta.size() != n) {
    throw std::invalid_argument("adamw_step: shape mismatch");
  }
  if (!kernels::all_finite(grads)) {
    throw NonFiniteGradient();
  }
  const std::uint64_t t = state.t + 1;
  kernels::AdamWCoefficients c;
  c.beta1 = cfg.beta1;
  c.beta2 = cfg.beta2;
  c.one_minus_beta1 = 1.0 - cfg.beta1;
  c.one_minus_beta2 = 1.0 - cfg.beta2;
  c.bias_correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  c.bias_correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  c.lr = lr_t;
  c.eps = cfg.eps;
  c.weight_decay = cfg.weight_decay;
  kernels::active().adamw(params.data(), grads.data(), state.m.data(), state.v.data(),
                          delta.data(), n, c);
  state.t = t;
}

double clip_global_norm(std::span<double> grads, double max_norm) {
  if (!kernels::all_finite(grads)) {
    throw NonFiniteGradient();
  }
  const double norm = std::sqrt(kernels::sum_squares(grads));
  if (norm > max_norm) {
    kernels::scale(grads, max_norm / norm);
  }
  return norm;
}

double schedule_lr(std::uint64_t step, const ScheduleConfig& cfg) {
  if (cfg.kind == ScheduleKind::Constant) {
    return cfg.base_lr;
  }
  if (step == 0) {
    return cfg.base_lr;
  }
  if (step >= cfg.total_steps) {
    return cfg.min_lr;
  }
  const double progress = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.min_lr +
         0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

StepRecord guarded_step(GuardBundle& guard, OptimizerState& opt, const StepInputs& in,
                        const OptimizerConfig& opt_cfg, const ClipConfig& clip) {
  const GuardConfig& cfg = guard.config;
  if (!guard.log.empty() && in.step <= guard.log.records().back().step) {
    throw std::invalid_argument("guarded_step: step " + std::to_string(in.step) +
                                " is not after the last logged step");
  }

  if (clip.enabled() && kernels::all_finite(in.grads)) {
    clip_global_norm(in.grads, *clip.max_norm);
  }

  const TelemetrySample sample = sense(in.step, in.loss, in.grads, in.layout, in.lr, cfg);
  auto [regime, analyzer] = classify_regime(sample, guard.analyzer, cfg, guard.posture.scale);
  const bool inputs_finite = std::isfinite(in.loss) && sample.gradients_finite;
  const ControlPosture posture = select_posture(regime, guard.posture, cfg, inputs_finite);

  if (!posture.skip_step) {
    std::vector<double> delta(in.params.size());
    adamw_step(opt, in.params, in.grads, in.lr, opt_cfg, delta);
    apply_posture(delta, posture);
    kernels::add(in.params, delta);
  }

  StepRecord rec;
  rec.step = in.step;
  rec.loss = in.loss;
  rec.loss_ema = analyzer.loss_ema;
  rec.regime = regime;
  rec.scale = posture.scale;
  rec.skipped = posture.skip_step;
  rec.active = is_control_active(posture.scale, posture.skip_step);
  rec.grad_rms = sample.grad_rms;
  rec.lr = in.lr;
  guard.log.append(rec);

  guard.analyzer = analyzer;
  guard.posture = posture;
  return rec;
}

void plain_step(OptimizerState& opt, const StepInputs& in, const OptimizerConfig& opt_cfg,
                const ClipConfig& clip) {
  if (clip.enabled()) {
    clip_global_norm(in.grads, *clip.max_norm);
  }
  std::vector<double> delta(in.params.size());
  adamw_step(opt, in.params, in.grads, in.lr, opt_cfg, delta);
  kernels::add(in.params, delta);
}

}  // namespace trainguard
