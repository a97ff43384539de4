#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "trainguard/governor.hpp"

namespace trainguard {

struct StepRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double loss_ema = 0.0;
  Regime regime = Regime::Stable;
  double scale = 1.0;
  bool active = false;
  bool skipped = false;
  std::optional<double> grad_rms;
  double lr = 0.0;
};

/// scale < 1 - 1e-9, or the step was skipped.
bool is_control_active(double scale, bool skipped) noexcept;

struct TelemetrySummary {
  std::uint64_t total_steps = 0;
  std::uint64_t control_active_steps = 0;
  std::uint64_t regime_switches = 0;
  double control_energy = 0.0;
  double min_scale = 1.0;
  std::uint64_t skipped_steps = 0;
};

/// Ordered record sink. Steps must be strictly increasing.
class TelemetryLog {
 public:
  /// Throws std::invalid_argument on an out-of-order step.
  void append(const StepRecord& rec);

  const std::vector<StepRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

 private:
  std::vector<StepRecord> records_;
};

inline void log_step(TelemetryLog& log, const StepRecord& rec) { log.append(rec); }

TelemetrySummary finalize_log(const std::vector<StepRecord>& records);
inline TelemetrySummary finalize_log(const TelemetryLog& log) { return finalize_log(log.records()); }

// JSON surfaces. Field order is fixed so that output is byte-stable.
// Non-finite reals are written as null and read back as NaN.
std::string to_jsonl_line(const StepRecord& rec);
StepRecord parse_jsonl_line(const std::string& line);
void write_jsonl(std::ostream& out, const std::vector<StepRecord>& records);
std::vector<StepRecord> read_jsonl(std::istream& in);
std::vector<StepRecord> read_jsonl_file(const std::string& path);

std::string to_json(const TelemetrySummary& summary);
TelemetrySummary parse_summary_json(const std::string& text);

}  // namespace trainguard
