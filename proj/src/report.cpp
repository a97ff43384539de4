#include "trainguard/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace trainguard {

namespace {

std::string full_precision(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double parse_real(const std::string& field) {
  std::size_t used = 0;
  const double x = std::stod(field, &used);
  if (used != field.size()) throw std::invalid_argument(field);
  return x;
}

std::uint64_t parse_count(const std::string& field) {
  if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos) {
    throw std::invalid_argument(field);
  }
  return std::stoull(field);
}

bool row_less(const CsvRow& a, const CsvRow& b) {
  if (a.scenario != b.scenario) return a.scenario < b.scenario;
  if (a.seed != b.seed) return a.seed < b.seed;
  return a.arm < b.arm;
}

std::string percent(double fraction) {
  if (!std::isfinite(fraction)) return format4(fraction);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * fraction);
  return buf;
}

std::string mean_std(const std::vector<double>& xs) {
  return format4(mean(xs)) + " ± " + format4(sample_stddev(xs));
}

}  // namespace

bool is_guard_arm(const std::string& arm) noexcept {
  return arm == "guard" || arm.rfind("guard_", 0) == 0;
}

CsvRow csv_row(const RunResult& run) {
  CsvRow r;
  r.scenario = run.scenario;
  r.arm = run.arm;
  r.seed = run.seed;
  r.final_loss = run.final_loss;
  r.final_ppl = run.final_perplexity;
  r.wall_s = run.wall_seconds;
  r.active_steps = run.summary.control_active_steps;
  r.regime_switches = run.summary.regime_switches;
  r.control_energy = run.summary.control_energy;
  r.initial_loss = run.initial_loss;
  return r;
}

std::vector<CsvRow> csv_rows(const std::vector<ComparisonRow>& rows) {
  std::map<std::tuple<std::string, std::uint64_t, std::string>, CsvRow> unique;
  for (const ComparisonRow& row : rows) {
    if (!row.error.empty()) continue;
    for (const RunResult* run : {&row.baseline, &row.guarded}) {
      unique.try_emplace({run->scenario, run->seed, run->arm}, csv_row(*run));
    }
  }
  std::vector<CsvRow> out;
  for (auto& [key, r] : unique) out.push_back(std::move(r));
  std::sort(out.begin(), out.end(), row_less);
  return out;
}

void write_csv(std::ostream& out, const std::vector<CsvRow>& rows) {
  out << kCsvHeader << '\n';
  for (const CsvRow& r : rows) {
    out << r.scenario << ',' << r.arm << ',' << r.seed << ',' << full_precision(r.final_loss) << ','
        << full_precision(r.final_ppl) << ',' << full_precision(r.wall_s) << ',' << r.active_steps
        << ',' << r.regime_switches << ',' << full_precision(r.control_energy) << ','
        << full_precision(r.initial_loss) << '\n';
  }
}

std::vector<CsvRow> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw std::runtime_error("suite CSV: unexpected header");
  }
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 10) {
      throw std::runtime_error("suite CSV line " + std::to_string(lineno) + ": expected 10 fields");
    }
    try {
      CsvRow r;
      r.scenario = f[0];
      r.arm = f[1];
      r.seed = parse_count(f[2]);
      r.final_loss = parse_real(f[3]);
      r.final_ppl = parse_real(f[4]);
      r.wall_s = parse_real(f[5]);
      r.active_steps = parse_count(f[6]);
      r.regime_switches = parse_count(f[7]);
      r.control_energy = parse_real(f[8]);
      r.initial_loss = parse_real(f[9]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw std::runtime_error("suite CSV line " + std::to_string(lineno) + ": malformed field");
    }
  }
  return rows;
}

std::vector<CsvRow> read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_csv(in);
}

std::string format4(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

std::string verdict(double initial_loss, double final_loss) {
  if (is_severe_degradation(initial_loss, final_loss)) return "severe degradation";
  if (is_trainable(initial_loss, final_loss)) return "trainable";
  return "no improvement";
}

std::string render_report(const std::vector<CsvRow>& input) {
  if (input.empty()) throw std::invalid_argument("render_report: no rows");
  std::vector<CsvRow> rows = input;
  std::sort(rows.begin(), rows.end(), row_less);

  std::map<std::string, std::vector<const CsvRow*>> by_scenario;
  for (const CsvRow& r : rows) by_scenario[r.scenario].push_back(&r);

  std::ostringstream md;
  md << "# Stress suite report\n\n";
  md << "Verdicts: *severe degradation* means the final eval loss is non-finite or above twice the "
        "initial eval loss; *trainable* means it ends below the initial eval loss. "
        "ppl_reduction = 1 - guard_ppl / baseline_ppl; e2e_speedup = baseline wall / guard wall.\n";

  for (const auto& [scenario, runs] : by_scenario) {
    md << "\n## " << scenario << "\n\n";
    md << "| seed | arm | initial_loss | final_loss | final_ppl | wall_s | active_steps | "
          "regime_switches | control_energy | verdict |\n";
    md << "|---:|---|---:|---:|---:|---:|---:|---:|---:|---|\n";
    for (const CsvRow* r : runs) {
      md << "| " << r->seed << " | " << r->arm << " | " << format4(r->initial_loss) << " | "
         << format4(r->final_loss) << " | " << format4(r->final_ppl) << " | " << format4(r->wall_s)
         << " | " << r->active_steps << " | " << r->regime_switches << " | "
         << format4(r->control_energy) << " | " << verdict(r->initial_loss, r->final_loss) << " |\n";
    }

    // Pair every baseline arm with the guard arm of the same seed.
    std::map<std::uint64_t, std::vector<const CsvRow*>> baselines, guards;
    for (const CsvRow* r : runs) {
      (is_guard_arm(r->arm) ? guards : baselines)[r->seed].push_back(r);
    }
    bool header = false;
    for (const auto& [seed, bs] : baselines) {
      auto g = guards.find(seed);
      if (g == guards.end()) continue;
      for (const CsvRow* b : bs) {
        for (const CsvRow* gr : g->second) {
          if (!header) {
            md << "\n| seed | baseline | guard | baseline_ppl | guard_ppl | ppl_reduction | "
                  "e2e_speedup |\n";
            md << "|---:|---|---|---:|---:|---:|---:|\n";
            header = true;
          }
          md << "| " << seed << " | " << b->arm << " | " << gr->arm << " | " << format4(b->final_ppl)
             << " | " << format4(gr->final_ppl) << " | "
             << percent(ppl_reduction(b->final_ppl, gr->final_ppl)) << " | "
             << format4(e2e_speedup(b->wall_s, gr->wall_s)) << "x |\n";
        }
      }
    }

    std::map<std::string, std::vector<const CsvRow*>> by_arm;
    for (const CsvRow* r : runs) by_arm[r->arm].push_back(r);
    md << "\n| arm | seeds | final_loss mean ± std | final_ppl mean ± std |\n";
    md << "|---|---:|---:|---:|\n";
    for (const auto& [arm, rs] : by_arm) {
      std::vector<double> losses, ppls;
      for (const CsvRow* r : rs) {
        losses.push_back(r->final_loss);
        ppls.push_back(r->final_ppl);
      }
      md << "| " << arm << " | " << rs.size() << " | " << mean_std(losses) << " | " << mean_std(ppls)
         << " |\n";
    }
  }
  return md.str();
}

}  // namespace trainguard
