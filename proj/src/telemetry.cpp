#include "trainguard/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace trainguard {
namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json real_or_null(double x) {
  if (std::isfinite(x)) {
    return x;
  }
  return nullptr;
}

double real_from(const ordered_json& j) {
  if (j.is_null()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return j.get<double>();
}

}  // namespace

bool is_control_active(double scale, bool skipped) noexcept {
  return skipped || scale < 1.0 - kActiveTolerance;
}

void TelemetryLog::append(const StepRecord& rec) {
  if (!records_.empty() && rec.step <= records_.back().step) {
    throw std::invalid_argument("log_step: step " + std::to_string(rec.step) +
                                " does not follow step " + std::to_string(records_.back().step));
  }
  records_.push_back(rec);
}

TelemetrySummary finalize_log(const std::vector<StepRecord>& records) {
  TelemetrySummary s;
  s.total_steps = records.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const StepRecord& r = records[i];
    if (r.active) {
      ++s.control_active_steps;
    }
    if (r.skipped) {
      ++s.skipped_steps;
      s.control_energy += 1.0;
    } else {
      const double gap = 1.0 - r.scale;
      s.control_energy += gap * gap;
    }
    if (i > 0 && r.regime != records[i - 1].regime) {
      ++s.regime_switches;
    }
    s.min_scale = std::min(s.min_scale, r.scale);
  }
  return s;
}

std::string to_jsonl_line(const StepRecord& rec) {
  ordered_json j;
  j["step"] = rec.step;
  j["loss"] = real_or_null(rec.loss);
  j["loss_ema"] = real_or_null(rec.loss_ema);
  j["regime"] = std::string(to_string(rec.regime));
  j["scale"] = rec.scale;
  j["active"] = rec.active;
  j["skipped"] = rec.skipped;
  j["grad_rms"] = rec.grad_rms ? real_or_null(*rec.grad_rms) : ordered_json(nullptr);
  j["lr"] = rec.lr;
  return j.dump();
}

StepRecord parse_jsonl_line(const std::string& line) {
  const auto j = ordered_json::parse(line);
  StepRecord rec;
  rec.step = j.at("step").get<std::uint64_t>();
  rec.loss = real_from(j.at("loss"));
  rec.loss_ema = real_from(j.at("loss_ema"));
  rec.regime = parse_regime(j.at("regime").get<std::string>());
  rec.scale = j.at("scale").get<double>();
  rec.active = j.at("active").get<bool>();
  rec.skipped = j.at("skipped").get<bool>();
  if (!j.at("grad_rms").is_null()) {
    rec.grad_rms = j.at("grad_rms").get<double>();
  }
  rec.lr = j.at("lr").get<double>();
  return rec;
}

void write_jsonl(std::ostream& out, const std::vector<StepRecord>& records) {
  for (const StepRecord& r : records) {
    out << to_jsonl_line(r) << '\n';
  }
}

std::vector<StepRecord> read_jsonl(std::istream& in) {
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      out.push_back(parse_jsonl_line(line));
    }
  }
  return out;
}

std::vector<StepRecord> read_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  return read_jsonl(in);
}

std::string to_json(const TelemetrySummary& s) {
  ordered_json j;
  j["total_steps"] = s.total_steps;
  j["control_active_steps"] = s.control_active_steps;
  j["regime_switches"] = s.regime_switches;
  j["control_energy"] = s.control_energy;
  j["min_scale"] = s.min_scale;
  j["skipped_steps"] = s.skipped_steps;
  return j.dump();
}

TelemetrySummary parse_summary_json(const std::string& text) {
  const auto j = ordered_json::parse(text);
  TelemetrySummary s;
  s.total_steps = j.at("total_steps").get<std::uint64_t>();
  s.control_active_steps = j.at("control_active_steps").get<std::uint64_t>();
  s.regime_switches = j.at("regime_switches").get<std::uint64_t>();
  s.control_energy = j.at("control_energy").get<double>();
  s.min_scale = j.at("min_scale").get<double>();
  s.skipped_steps = j.at("skipped_steps").get<std::uint64_t>();
  return s;
}

}  // namespace trainguard
