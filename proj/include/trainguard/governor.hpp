#pragma once

// Governance plane: sense -> classify -> posture -> actuate.
//
// All transitions are pure functions over explicit state values. The
// optimizer never sees governor state; the governor only observes telemetry
// and scales the update the optimizer already produced.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace trainguard {

/// Raised on non-finite telemetry that a caller must turn into skip semantics.
class TelemetryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteGradient : public TelemetryError {
 public:
  NonFiniteGradient() : TelemetryError("non-finite gradient") {}
};

/// Invalid configuration value. `key()` names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Policy constants.
inline constexpr double kSpikeDamping = 0.5;
inline constexpr double kStressDamping = 0.9;
inline constexpr double kRatioFloor = 1e-12;
inline constexpr double kActiveTolerance = 1e-9;

struct GuardConfig {
  bool auto_enabled = true;
  std::uint32_t stats_freq = 10;
  double stress_threshold = 1.25;
  double spike_threshold = 1.8;
  double recovery_fast = 0.005;
  double ema_decay = 0.98;
  bool use_max_rms = true;
  double c_min = 0.05;
  double c_max = 1.0;
  std::uint32_t recovery_confirm = 3;

  /// Throws ConfigError naming the first violated field.
  void validate() const;

  friend bool operator==(const GuardConfig&, const GuardConfig&) = default;
};

enum class Regime : std::uint8_t { Stable, Stress, Spike, Recovery };

std::string_view to_string(Regime r) noexcept;
/// Throws std::invalid_argument for unknown names.
Regime parse_regime(std::string_view name);

/// A contiguous slice of the flat parameter vector probed as one RMS group.
struct ParamGroup {
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct TelemetrySample {
  std::uint64_t step = 0;
  double loss = 0.0;
  std::optional<double> grad_rms;  // present only on probe steps
  double lr = 0.0;
  bool gradients_finite = true;
};

struct AnalyzerState {
  double loss_ema = 0.0;
  std::optional<double> rms_ema;
  Regime regime = Regime::Stable;
  std::uint32_t improving_streak = 0;
  bool initialized = false;
  // Set by a Spike or Stress; cleared once a Recovery has released the scale
  // back to c_max. Recovery is only reachable inside an episode.
  bool in_episode = false;
};

struct ControlPosture {
  double scale = 1.0;
  bool skip_step = false;
  Regime mode = Regime::Stable;
};

/// decay * prev + (1 - decay) * value. Throws TelemetryError on non-finite input.
double update_ema(double prev, double value, double decay);

/// Per-group RMS, then the max (use_max_rms) or mean over groups.
/// Throws std::invalid_argument for an empty group list or empty group, and
/// NonFiniteGradient if any entry is NaN or infinite.
double gradient_rms(std::span<const std::span<const double>> groups, bool use_max_rms);

/// Convenience overload over a flat vector partitioned by `layout`.
double gradient_rms(std::span<const double> flat, std::span<const ParamGroup> layout,
                    bool use_max_rms);

/// Read-only. Gradients, when supplied, are checked for finiteness on every
/// step and probed for RMS every `stats_freq` steps.
TelemetrySample sense(std::uint64_t step, double loss, std::span<const double> grads,
                      std::span<const ParamGroup> layout, double lr, const GuardConfig& cfg);

/// Loss-only sensing (no gradient probe).
TelemetrySample sense(std::uint64_t step, double loss, double lr, const GuardConfig& cfg);

/// Assigns a regime and returns the advanced analyzer state. `current_scale`
/// is the posture scale in force before this step; it keeps a Recovery open
/// until the scale has released to c_max.
std::pair<Regime, AnalyzerState> classify_regime(const TelemetrySample& sample,
                                                 const AnalyzerState& state,
                                                 const GuardConfig& cfg, double current_scale);

ControlPosture select_posture(Regime regime, const ControlPosture& current, const GuardConfig& cfg,
                              bool inputs_finite);

/// Scales `delta` in place, or zeroes it when the posture skips the step.
/// Throws TelemetryError("actuation on non-finite update") for a non-finite
/// delta on a non-skipped step.
void apply_posture(std::span<double> delta, const ControlPosture& posture);

}  // namespace trainguard
