#pragma once

// Suite CSV and the markdown report rendered from it.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "trainguard/harness.hpp"

namespace trainguard {

/// One run. Columns in file order; initial_loss is carried so that verdicts
/// can be recomputed from the CSV alone.
struct CsvRow {
  std::string scenario;
  std::string arm;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  double final_ppl = 0.0;
  double wall_s = 0.0;
  std::uint64_t active_steps = 0;
  std::uint64_t regime_switches = 0;
  double control_energy = 0.0;
  double initial_loss = 0.0;
};

inline constexpr const char* kCsvHeader =
    "scenario,arm,seed,final_loss,final_ppl,wall_s,active_steps,regime_switches,control_energy,"
    "initial_loss";

/// Guard arms are named "guard" or "guard_<suffix>"; every other arm is a baseline.
bool is_guard_arm(const std::string& arm) noexcept;

CsvRow csv_row(const RunResult& run);

/// One row per distinct run (a guard run shared by several comparisons is
/// listed once), sorted by (scenario, seed, arm). Failed runs are left out.
std::vector<CsvRow> csv_rows(const std::vector<ComparisonRow>& rows);

/// Reals are written with 17 significant digits, so reading back is exact.
void write_csv(std::ostream& out, const std::vector<CsvRow>& rows);
/// Throws std::runtime_error on a malformed header or row.
std::vector<CsvRow> read_csv(std::istream& in);
std::vector<CsvRow> read_csv_file(const std::filesystem::path& path);

/// Fixed 4-decimal rendering; non-finite values print as nan / inf / -inf.
std::string format4(double x);

/// "severe degradation", "trainable", or "no improvement".
std::string verdict(double initial_loss, double final_loss);

/// Per-scenario run tables with verdicts, baseline-vs-guard comparison tables
/// (ppl reduction, end-to-end speedup) and a seed mean ± std block. Throws
/// std::invalid_argument on an empty row set.
std::string render_report(const std::vector<CsvRow>& rows);

}  // namespace trainguard
