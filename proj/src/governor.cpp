#include "trainguard/governor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "trainguard/kernels.hpp"

namespace trainguard {

void GuardConfig::validate() const {
  if (stats_freq < 1) {
    throw ConfigError("stats_freq", "must be >= 1");
  }
  if (!(stress_threshold > 1.0) || !std::isfinite(stress_threshold)) {
    throw ConfigError("stress_threshold", "must be a finite value > 1");
  }
  if (!(spike_threshold > stress_threshold) || !std::isfinite(spike_threshold)) {
    throw ConfigError("spike_threshold", "must be finite and > stress_threshold");
  }
  if (!(recovery_fast >= 0.0) || !std::isfinite(recovery_fast)) {
    throw ConfigError("recovery_fast", "must be a finite value >= 0");
  }
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) {
    throw ConfigError("ema_decay", "must lie in (0, 1)");
  }
  if (c_max != 1.0) {
    throw ConfigError("c_max", "the upper scale bound is fixed at 1.0");
  }
  if (!(c_min > 0.0 && c_min <= c_max)) {
    throw ConfigError("c_min", "must lie in (0, c_max]");
  }
  if (recovery_confirm < 1) {
    throw ConfigError("recovery_confirm", "must be >= 1");
  }
}

std::string_view to_string(Regime r) noexcept {
  switch (r) {
    case Regime::Stable:
      return "stable";
    case Regime::Stress:
      return "stress";
    case Regime::Spike:
      return "spike";
    case Regime::Recovery:
      return "recovery";
  }
  return "stable";
}

Regime parse_regime(std::string_view name) {
  if (name == "stable") return Regime::Stable;
  if (name == "stress") return Regime::Stress;
  if (name == "spike") return Regime::Spike;
  if (name == "recovery") return Regime::Recovery;
  throw std::invalid_argument("unknown regime '" + std::string(name) + "'");
}

double update_ema(double prev, double value, double decay) {
  if (!std::isfinite(prev) || !std::isfinite(value)) {
    throw TelemetryError("non-finite EMA input");
  }
  return decay * prev + (1.0 - decay) * value;
}

double gradient_rms(std::span<const std::span<const double>> groups, bool use_max_rms) {
  if (groups.empty()) {
    throw std::invalid_argument("gradient_rms: no gradient groups");
  }
  double best = 0.0;
  double total = 0.0;
  for (const auto group : groups) {
    if (group.empty()) {
      throw std::invalid_argument("gradient_rms: empty gradient group");
    }
    if (!kernels::all_finite(group)) {
      throw NonFiniteGradient();
    }
    const double rms = std::sqrt(kernels::sum_squares(group) / static_cast<double>(group.size()));
    best = std::max(best, rms);
    total += rms;
  }
  return use_max_rms ? best : total / static_cast<double>(groups.size());
}

double gradient_rms(std::span<const double> flat, std::span<const ParamGroup> layout,
                    bool use_max_rms) {
  std::vector<std::span<const double>> groups;
  groups.reserve(layout.size());
  for (const ParamGroup& g : layout) {
    groups.push_back(flat.subspan(g.offset, g.size));
  }
  return gradient_rms(groups, use_max_rms);
}

TelemetrySample sense(std::uint64_t step, double loss, std::span<const double> grads,
                      std::span<const ParamGroup> layout, double lr, const GuardConfig& cfg) {
  TelemetrySample sample = sense(step, loss, lr, cfg);
  if (grads.empty()) {
    return sample;
  }
  sample.gradients_finite = kernels::all_finite(grads);
  if (sample.gradients_finite && step % cfg.stats_freq == 0) {
    if (layout.empty()) {
      const ParamGroup whole{0, grads.size()};
      sample.grad_rms = gradient_rms(grads, std::span(&whole, 1), cfg.use_max_rms);
    } else {
      sample.grad_rms = gradient_rms(grads, layout, cfg.use_max_rms);
    }
  }
  return sample;
}

TelemetrySample sense(std::uint64_t step, double loss, double lr, const GuardConfig&) {
  TelemetrySample sample;
  sample.step = step;
  sample.loss = loss;
  sample.lr = lr;
  return sample;
}

std::pair<Regime, AnalyzerState> classify_regime(const TelemetrySample& sample,
                                                 const AnalyzerState& state,
                                                 const GuardConfig& cfg, double current_scale) {
  AnalyzerState next = state;

  if (!std::isfinite(sample.loss) || !sample.gradients_finite) {
    next.regime = Regime::Spike;
    next.improving_streak = 0;
    next.in_episode = true;
    return {Regime::Spike, next};
  }

  // An RMS that overflowed from finite gradients reads as stress and never
  // enters the EMA.
  const bool rms_finite = !sample.grad_rms || std::isfinite(*sample.grad_rms);

  if (!state.initialized) {
    next.initialized = true;
    next.loss_ema = sample.loss;
    if (sample.grad_rms && rms_finite) {
      next.rms_ema = *sample.grad_rms;
    }
    next.regime = Regime::Stable;
    next.improving_streak = 0;
    return {Regime::Stable, next};
  }

  const double ratio = sample.loss / std::max(state.loss_ema, kRatioFloor);
  double rms_ratio = 0.0;
  if (!rms_finite) {
    rms_ratio = std::numeric_limits<double>::infinity();
  } else if (sample.grad_rms && state.rms_ema) {
    rms_ratio = *sample.grad_rms / std::max(*state.rms_ema, kRatioFloor);
  }

  Regime regime = Regime::Stable;
  if (ratio >= cfg.spike_threshold) {
    regime = Regime::Spike;
  } else if (ratio >= cfg.stress_threshold || rms_ratio >= cfg.stress_threshold) {
    regime = Regime::Stress;
  }

  if (regime == Regime::Spike || regime == Regime::Stress) {
    next.improving_streak = 0;
    next.in_episode = true;
  } else {
    next.improving_streak = ratio <= 1.0 ? state.improving_streak + 1 : 0;
    const bool confirmed = next.improving_streak >= cfg.recovery_confirm;
    if (state.regime == Regime::Recovery && current_scale >= cfg.c_max) {
      next.in_episode = false;  // fully released; the episode is over
    } else if (state.in_episode && (confirmed || state.regime == Regime::Recovery)) {
      regime = Regime::Recovery;
    }
  }

  next.loss_ema = update_ema(state.loss_ema, sample.loss, cfg.ema_decay);
  if (sample.grad_rms && rms_finite) {
    next.rms_ema = state.rms_ema ? update_ema(*state.rms_ema, *sample.grad_rms, cfg.ema_decay)
                                 : *sample.grad_rms;
  }
  next.regime = regime;
  return {regime, next};
}

ControlPosture select_posture(Regime regime, const ControlPosture& current, const GuardConfig& cfg,
                              bool inputs_finite) {
  if (!cfg.auto_enabled) {
    return ControlPosture{1.0, false, regime};
  }
  double scale = current.scale;
  switch (regime) {
    case Regime::Spike:
      scale = std::max(cfg.c_min, scale * kSpikeDamping);
      break;
    case Regime::Stress:
      scale = std::max(cfg.c_min, scale * kStressDamping);
      break;
    case Regime::Stable:
    case Regime::Recovery:
      scale = std::min(cfg.c_max, scale * (1.0 + cfg.recovery_fast));
      break;
  }
  scale = std::clamp(scale, cfg.c_min, cfg.c_max);
  return ControlPosture{scale, !inputs_finite, regime};
}

void apply_posture(std::span<double> delta, const ControlPosture& posture) {
  if (posture.skip_step) {
    std::fill(delta.begin(), delta.end(), 0.0);
    return;
  }
  if (!kernels::all_finite(delta)) {
    throw TelemetryError("actuation on non-finite update");
  }
  if (posture.scale != 1.0) {
    kernels::scale(delta, posture.scale);
  }
}

}  // namespace trainguard
