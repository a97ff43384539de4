#include "trainguard/suite_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace trainguard {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

std::string index_path(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

// Re-raises a component's ConfigError under the section path.
template <class F>
void scoped(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    const std::string& what = e.what();
    const std::string prefix = e.key() + ": ";
    throw ConfigError(join(path, e.key()),
                      what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what);
  }
}

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }
  }

  const json* get(std::string_view key) {
    seen_.emplace(key);
    auto it = j_.find(std::string(key));
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(std::string_view key) const { return join(path_, key); }

  double real(std::string_view key, double fallback) {
    const json* v = get(key);
    if (v == nullptr) return fallback;
    if (!v->is_number()) throw ConfigError(path(key), "expected a number");
    return v->get<double>();
  }

  std::uint64_t count(std::string_view key, std::uint64_t fallback) {
    const json* v = get(key);
    if (v == nullptr) return fallback;
    if (!v->is_number_unsigned()) {
      throw ConfigError(path(key), "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  std::uint32_t count32(std::string_view key, std::uint32_t fallback) {
    const std::uint64_t n = count(key, fallback);
    if (n > 0xffffffffULL) throw ConfigError(path(key), "value too large");
    return static_cast<std::uint32_t>(n);
  }

  bool boolean(std::string_view key, bool fallback) {
    const json* v = get(key);
    if (v == nullptr) return fallback;
    if (!v->is_boolean()) throw ConfigError(path(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(std::string_view key, const std::string& fallback) {
    const json* v = get(key);
    if (v == nullptr) return fallback;
    if (!v->is_string()) throw ConfigError(path(key), "expected a string");
    return v->get<std::string>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) {
        throw ConfigError(path(it.key()), "unknown key");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

std::string shortest(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return ec == std::errc{} ? std::string(buf, end) : std::to_string(x);
}

// ---- parsing ---------------------------------------------------------------

TaskSpec parse_task(const json& j, const std::string& path) {
  Section s(j, path);
  TaskSpec t;
  const json* kind = s.get("kind");
  if (kind == nullptr) throw ConfigError(s.path("kind"), "missing");
  if (!kind->is_string()) throw ConfigError(s.path("kind"), "expected a string");
  scoped(path, [&] { t.kind = parse_task_kind(kind->get<std::string>()); });
  t.dim = s.count32("dim", t.dim);
  t.condition = s.real("condition", t.condition);
  t.input_dim = s.count32("input_dim", t.input_dim);
  t.hidden = s.count32("hidden", t.hidden);
  t.output_dim = s.count32("output_dim", t.output_dim);
  t.alphabet = s.count32("alphabet", t.alphabet);
  t.sharpness = s.real("sharpness", t.sharpness);
  t.train_size = s.count32("train_size", t.train_size);
  t.eval_size = s.count32("eval_size", t.eval_size);
  t.noise = s.real("noise", t.noise);
  s.finish();
  return t;
}

OptimizerConfig parse_optimizer(const json& j) {
  Section s(j, "optimizer");
  OptimizerConfig o;
  o.lr = s.real("lr", o.lr);
  if (const json* betas = s.get("betas")) {
    if (!betas->is_array() || betas->size() != 2 || !(*betas)[0].is_number() ||
        !(*betas)[1].is_number()) {
      throw ConfigError("optimizer.betas", "expected [beta1, beta2]");
    }
    o.beta1 = (*betas)[0].get<double>();
    o.beta2 = (*betas)[1].get<double>();
  }
  o.eps = s.real("eps", o.eps);
  o.weight_decay = s.real("weight_decay", o.weight_decay);
  s.finish();
  return o;
}

GuardConfig parse_guard(const json& j) {
  Section s(j, "guard");
  GuardConfig g;
  g.auto_enabled = s.boolean("auto_enabled", g.auto_enabled);
  g.stats_freq = s.count32("stats_freq", g.stats_freq);
  g.stress_threshold = s.real("stress_threshold", g.stress_threshold);
  g.spike_threshold = s.real("spike_threshold", g.spike_threshold);
  g.recovery_fast = s.real("recovery_fast", g.recovery_fast);
  g.ema_decay = s.real("ema_decay", g.ema_decay);
  g.use_max_rms = s.boolean("use_max_rms", g.use_max_rms);
  g.c_min = s.real("c_min", g.c_min);
  g.c_max = s.real("c_max", g.c_max);
  g.recovery_confirm = s.count32("recovery_confirm", g.recovery_confirm);
  s.finish();
  return g;
}

std::optional<double> parse_clip_value(const json* v, const std::string& key) {
  if (v == nullptr || v->is_null()) return std::nullopt;
  if (!v->is_number()) throw ConfigError(key, "expected a number or null");
  return v->get<double>();
}

ClipConfig parse_clip(const json& j) {
  Section s(j, "clip");
  ClipConfig c;
  c.max_norm = parse_clip_value(s.get("g"), "clip.g");
  s.finish();
  return c;
}

ScheduleKind parse_schedule_kind(const std::string& name, const std::string& key) {
  if (name == "cosine") return ScheduleKind::Cosine;
  if (name == "constant") return ScheduleKind::Constant;
  throw ConfigError(key, "expected \"cosine\" or \"constant\"");
}

std::string_view schedule_kind_name(ScheduleKind k) {
  return k == ScheduleKind::Cosine ? "cosine" : "constant";
}

ScheduleSettings parse_schedule(const json& j) {
  Section s(j, "schedule");
  ScheduleSettings out;
  out.kind = parse_schedule_kind(s.string("kind", "cosine"), "schedule.kind");
  out.min_lr_ratio = s.real("min_lr_ratio", out.min_lr_ratio);
  s.finish();
  return out;
}

CalibrationSettings parse_calibration(const json& j) {
  Section s(j, "calibration");
  CalibrationSettings c;
  c.floor_lr = s.real("floor_lr", c.floor_lr);
  c.max_doublings = s.count32("max_doublings", c.max_doublings);
  c.probe_steps = s.count("probe_steps", c.probe_steps);
  c.batch_size = s.count("batch_size", c.batch_size);
  s.finish();
  return c;
}

InjectionSpec parse_injection(const json& j, const std::string& path) {
  Section s(j, path);
  InjectionSpec inj;
  const std::string mode = s.string("mode", std::string(to_string(inj.mode)));
  scoped(path, [&] { inj.mode = parse_injection_mode(mode); });
  inj.magnitude = s.real("magnitude", inj.magnitude);
  inj.period = s.count("period", inj.period);
  inj.offset = s.count("offset", inj.offset);
  if (const json* steps = s.get("steps")) {
    if (!steps->is_array()) throw ConfigError(s.path("steps"), "expected an array");
    for (std::size_t i = 0; i < steps->size(); ++i) {
      if (!(*steps)[i].is_number_unsigned()) {
        throw ConfigError(index_path(s.path("steps"), i), "expected a non-negative integer");
      }
      inj.steps.push_back((*steps)[i].get<std::uint64_t>());
    }
  }
  s.finish();
  return inj;
}

LrSpec parse_lr(const json& v, const std::string& key) {
  LrSpec lr;
  if (v.is_number()) {
    lr.value = v.get<double>();
  } else if (v.is_string()) {
    lr.level = v.get<std::string>();
    try {
      level_fraction(lr.level);
    } catch (const ConfigError&) {
      throw ConfigError(key, "unknown learning-rate level '" + lr.level + "'");
    }
  } else {
    throw ConfigError(key, "expected a number or a level name");
  }
  return lr;
}

ScenarioSpec parse_scenario(const json& j, const std::string& path) {
  Section s(j, path);
  ScenarioSpec sc;
  sc.id = s.string("id", "");
  const std::string type = s.string("type", "");
  if (type.empty()) throw ConfigError(s.path("type"), "missing");
  try {
    sc.type = parse_scenario_type(type);
  } catch (const ConfigError&) {
    throw ConfigError(s.path("type"), "unknown scenario type '" + type + "'");
  }
  if (sc.id.empty()) sc.id = type;
  sc.task = s.string("task", "");
  const json* lr = s.get("lr");
  const json* lrs = s.get("lrs");
  if (lr != nullptr && lrs != nullptr) {
    throw ConfigError(s.path("lr"), "give either lr or lrs, not both");
  }
  if (lr != nullptr) {
    sc.lrs.push_back(parse_lr(*lr, s.path("lr")));
  } else if (lrs != nullptr) {
    if (!lrs->is_array()) throw ConfigError(s.path("lrs"), "expected an array");
    for (std::size_t i = 0; i < lrs->size(); ++i) {
      sc.lrs.push_back(parse_lr((*lrs)[i], index_path(s.path("lrs"), i)));
    }
  } else if (sc.type == ScenarioType::LrStress) {
    for (const char* level : {"aggressive", "middle", "moderate"}) {
      sc.lrs.push_back(LrSpec{std::nullopt, level});
    }
  } else {
    sc.lrs.push_back(LrSpec{std::nullopt, "aggressive"});
  }
  const bool long_run = sc.type == ScenarioType::LongBudget;
  sc.steps = s.count("steps", long_run ? 5000 : 1000);
  sc.batch_size = s.count("batch_size", 32);
  sc.eval_every = s.count("eval_every", long_run ? 500 : 100);
  const bool wants_injection =
      sc.type == ScenarioType::Injection || sc.type == ScenarioType::ClipBaseline;
  if (const json* inj = s.get("injection"); inj != nullptr && !inj->is_null()) {
    sc.injection = parse_injection(*inj, s.path("injection"));
  } else if (wants_injection) {
    sc.injection = InjectionSpec{};
  }
  if (const json* clips = s.get("clips")) {
    if (!clips->is_array()) throw ConfigError(s.path("clips"), "expected an array");
    for (std::size_t i = 0; i < clips->size(); ++i) {
      if (!(*clips)[i].is_number()) {
        throw ConfigError(index_path(s.path("clips"), i), "expected a number");
      }
      sc.clips.push_back((*clips)[i].get<double>());
    }
  } else if (sc.type == ScenarioType::ClipBaseline) {
    sc.clips = {1.0, 0.5};
  }
  if (const json* gc = s.get("guard_clip")) {
    sc.guard_clip = parse_clip_value(gc, s.path("guard_clip"));
  } else if (sc.type == ScenarioType::ClipBaseline) {
    sc.guard_clip = 1.0;
  }
  s.finish();
  return sc;
}

std::map<std::string, TaskSpec> default_tasks() {
  TaskSpec bigram;
  bigram.kind = TaskKind::BigramLm;
  TaskSpec mlp;
  mlp.kind = TaskKind::MlpRegression;
  TaskSpec quadratic;
  quadratic.kind = TaskKind::Quadratic;
  return {{"bigram", bigram}, {"mlp", mlp}, {"quadratic", quadratic}};
}

std::vector<ScenarioSpec> default_scenarios() {
  auto level = [](const char* name) { return LrSpec{std::nullopt, name}; };
  auto absolute = [](double v) { return LrSpec{v, ""}; };
  std::vector<ScenarioSpec> out;

  ScenarioSpec stress;
  stress.id = "lr_stress";
  stress.type = ScenarioType::LrStress;
  stress.task = "bigram";
  stress.lrs = {level("aggressive"), level("middle"), level("moderate")};
  out.push_back(stress);

  ScenarioSpec clip;
  clip.id = "clip_baseline";
  clip.type = ScenarioType::ClipBaseline;
  clip.task = "mlp";
  clip.lrs = {absolute(3.0)};
  clip.injection = InjectionSpec{};
  clip.clips = {1.0, 0.5};
  clip.guard_clip = 1.0;
  out.push_back(clip);

  ScenarioSpec inj;
  inj.id = "injection";
  inj.type = ScenarioType::Injection;
  inj.task = "bigram";
  inj.lrs = {level("moderate")};
  inj.injection = InjectionSpec{};
  out.push_back(inj);

  ScenarioSpec longrun;
  longrun.id = "long_budget";
  longrun.type = ScenarioType::LongBudget;
  longrun.task = "bigram";
  longrun.lrs = {level("aggressive")};
  longrun.steps = 5000;
  longrun.eval_every = 500;
  out.push_back(longrun);

  ScenarioSpec sweep;
  sweep.id = "seed_sweep";
  sweep.type = ScenarioType::SeedSweep;
  sweep.task = "bigram";
  sweep.lrs = {level("aggressive")};
  out.push_back(sweep);

  ScenarioSpec benign;
  benign.id = "benign";
  benign.type = ScenarioType::LrStress;
  benign.task = "quadratic";
  benign.lrs = {absolute(0.01)};
  benign.batch_size = 512;
  out.push_back(benign);
  return out;
}

// ---- emission --------------------------------------------------------------

ojson emit_task(const TaskSpec& t) {
  ojson j;
  j["kind"] = std::string(to_string(t.kind));
  j["dim"] = t.dim;
  j["condition"] = t.condition;
  j["input_dim"] = t.input_dim;
  j["hidden"] = t.hidden;
  j["output_dim"] = t.output_dim;
  j["alphabet"] = t.alphabet;
  j["sharpness"] = t.sharpness;
  j["train_size"] = t.train_size;
  j["eval_size"] = t.eval_size;
  j["noise"] = t.noise;
  return j;
}

ojson emit_injection(const InjectionSpec& inj) {
  ojson j;
  j["mode"] = std::string(to_string(inj.mode));
  j["magnitude"] = inj.magnitude;
  j["period"] = inj.period;
  j["offset"] = inj.offset;
  j["steps"] = inj.steps;
  return j;
}

ojson optional_number(const std::optional<double>& v) {
  return v ? ojson(*v) : ojson(nullptr);
}

std::string arm_name(const char* base, const std::optional<double>& clip) {
  std::string arm = base;
  if (clip) arm += "_clip" + shortest(*clip);
  return arm;
}

}  // namespace

std::string_view to_string(ScenarioType type) noexcept {
  switch (type) {
    case ScenarioType::LrStress:
      return "lr_stress";
    case ScenarioType::ClipBaseline:
      return "clip_baseline";
    case ScenarioType::Injection:
      return "injection";
    case ScenarioType::LongBudget:
      return "long_budget";
    case ScenarioType::SeedSweep:
      return "seed_sweep";
  }
  return "lr_stress";
}

ScenarioType parse_scenario_type(std::string_view name) {
  for (ScenarioType t : {ScenarioType::LrStress, ScenarioType::ClipBaseline, ScenarioType::Injection,
                         ScenarioType::LongBudget, ScenarioType::SeedSweep}) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("type", "unknown scenario type '" + std::string(name) + "'");
}

double level_fraction(std::string_view level) {
  for (const LrLevel& l : kLrLevels) {
    if (l.name == level) return l.fraction;
  }
  throw ConfigError("lr", "unknown learning-rate level '" + std::string(level) + "'");
}

std::string LrSpec::label() const { return value ? "lr" + shortest(*value) : level; }

void SuiteConfig::validate() const {
  if (tasks.empty()) throw ConfigError("tasks", "at least one task is required");
  for (const auto& [name, spec] : tasks) {
    if (name.empty()) throw ConfigError("tasks", "task names must be nonempty");
    scoped("tasks." + name, [&] { spec.validate(); });
  }
  scoped("optimizer", [&] { optimizer.validate(); });
  scoped("guard", [&] { guard.validate(); });
  scoped("clip", [&] { clip.validate(); });
  if (!(schedule.min_lr_ratio >= 0.0 && schedule.min_lr_ratio <= 1.0)) {
    throw ConfigError("schedule.min_lr_ratio", "must lie in [0, 1]");
  }
  if (!(calibration.floor_lr > 0.0)) throw ConfigError("calibration.floor_lr", "must be > 0");
  if (calibration.probe_steps < 1) throw ConfigError("calibration.probe_steps", "must be >= 1");
  if (calibration.batch_size < 1) throw ConfigError("calibration.batch_size", "must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds", "duplicate seed");
  }
  if (scenarios.empty()) throw ConfigError("scenarios", "at least one scenario is required");
  if (output.empty()) throw ConfigError("output", "must be nonempty");

  std::set<std::string> ids;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const ScenarioSpec& sc = scenarios[i];
    const std::string path = index_path("scenarios", i);
    if (sc.id.empty() || sc.id.find_first_of("/\\ :,\"") != std::string::npos) {
      throw ConfigError(path + ".id", "must be nonempty without separators, commas, quotes or spaces");
    }
    if (!ids.insert(sc.id).second) throw ConfigError(path + ".id", "duplicate scenario id");
    if (!tasks.contains(sc.task)) {
      throw ConfigError(path + ".task", "unknown task '" + sc.task + "'");
    }
    if (sc.lrs.empty()) throw ConfigError(path + ".lrs", "at least one learning rate is required");
    if (sc.type != ScenarioType::LrStress && sc.lrs.size() != 1) {
      throw ConfigError(path + ".lrs", "only lr_stress scenarios take several learning rates");
    }
    std::set<std::string> labels;
    for (std::size_t k = 0; k < sc.lrs.size(); ++k) {
      const LrSpec& lr = sc.lrs[k];
      const std::string key = index_path(path + ".lrs", k);
      if (lr.value) {
        if (!(*lr.value > 0.0 && std::isfinite(*lr.value))) {
          throw ConfigError(key, "must be a finite value > 0");
        }
      } else {
        try {
          level_fraction(lr.level);
        } catch (const ConfigError&) {
          throw ConfigError(key, "unknown learning-rate level '" + lr.level + "'");
        }
      }
      if (!labels.insert(lr.label()).second) throw ConfigError(key, "duplicate learning rate");
    }
    if (sc.steps < 1) throw ConfigError(path + ".steps", "must be >= 1");
    if (sc.batch_size < 1) throw ConfigError(path + ".batch_size", "must be >= 1");
    if (sc.eval_every < 1 || sc.eval_every > sc.steps) {
      throw ConfigError(path + ".eval_every", "must lie in [1, steps]");
    }
    if (sc.injection) {
      scoped(path + ".injection", [&] { sc.injection->validate(sc.steps); });
    } else if (sc.type == ScenarioType::Injection) {
      throw ConfigError(path + ".injection", "required for injection scenarios");
    }
    if (sc.type == ScenarioType::ClipBaseline) {
      if (sc.clips.empty()) throw ConfigError(path + ".clips", "at least one threshold is required");
    } else {
      if (!sc.clips.empty()) throw ConfigError(path + ".clips", "only clip_baseline scenarios take clips");
      if (sc.guard_clip) {
        throw ConfigError(path + ".guard_clip", "only clip_baseline scenarios take guard_clip");
      }
    }
    for (std::size_t k = 0; k < sc.clips.size(); ++k) {
      if (!(sc.clips[k] > 0.0 && std::isfinite(sc.clips[k]))) {
        throw ConfigError(index_path(path + ".clips", k), "must be a finite value > 0");
      }
    }
    if (sc.guard_clip && !(*sc.guard_clip > 0.0 && std::isfinite(*sc.guard_clip))) {
      throw ConfigError(path + ".guard_clip", "must be a finite value > 0");
    }
  }
}

SuiteConfig default_suite_config() {
  SuiteConfig cfg;
  cfg.tasks = default_tasks();
  cfg.scenarios = default_scenarios();
  return cfg;
}

SuiteConfig parse_suite_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  Section s(root, "");
  SuiteConfig cfg;

  if (const json* tasks = s.get("tasks")) {
    if (!tasks->is_object()) throw ConfigError("tasks", "expected an object");
    for (auto it = tasks->begin(); it != tasks->end(); ++it) {
      cfg.tasks[it.key()] = parse_task(it.value(), "tasks." + it.key());
    }
  } else {
    cfg.tasks = default_tasks();
  }
  if (const json* j = s.get("optimizer")) cfg.optimizer = parse_optimizer(*j);
  if (const json* j = s.get("guard")) cfg.guard = parse_guard(*j);
  if (const json* j = s.get("clip")) cfg.clip = parse_clip(*j);
  if (const json* j = s.get("schedule")) cfg.schedule = parse_schedule(*j);
  if (const json* j = s.get("calibration")) cfg.calibration = parse_calibration(*j);
  if (const json* scenarios = s.get("scenarios")) {
    if (!scenarios->is_array()) throw ConfigError("scenarios", "expected an array");
    for (std::size_t i = 0; i < scenarios->size(); ++i) {
      cfg.scenarios.push_back(parse_scenario((*scenarios)[i], index_path("scenarios", i)));
    }
  } else if (s.get("tasks") == nullptr) {
    cfg.scenarios = default_scenarios();
  } else {
    for (const auto& [name, spec] : cfg.tasks) {
      json j = {{"id", name}, {"type", "lr_stress"}, {"task", name}};
      cfg.scenarios.push_back(parse_scenario(j, "scenarios"));
    }
  }
  if (const json* seeds = s.get("seeds")) {
    if (!seeds->is_array()) throw ConfigError("seeds", "expected an array");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < seeds->size(); ++i) {
      if (!(*seeds)[i].is_number_unsigned()) {
        throw ConfigError(index_path("seeds", i), "expected a non-negative integer");
      }
      cfg.seeds.push_back((*seeds)[i].get<std::uint64_t>());
    }
  }
  cfg.output = s.string("output", cfg.output);
  s.finish();
  cfg.validate();
  return cfg;
}

SuiteConfig load_suite_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_suite_config(text.str());
}

std::string emit_suite_config(const SuiteConfig& cfg) {
  ojson root;
  ojson tasks = ojson::object();
  for (const auto& [name, spec] : cfg.tasks) tasks[name] = emit_task(spec);
  root["tasks"] = tasks;

  root["optimizer"] = {{"lr", cfg.optimizer.lr},
                       {"betas", {cfg.optimizer.beta1, cfg.optimizer.beta2}},
                       {"eps", cfg.optimizer.eps},
                       {"weight_decay", cfg.optimizer.weight_decay}};

  const GuardConfig& g = cfg.guard;
  ojson guard;
  guard["auto_enabled"] = g.auto_enabled;
  guard["stats_freq"] = g.stats_freq;
  guard["stress_threshold"] = g.stress_threshold;
  guard["spike_threshold"] = g.spike_threshold;
  guard["recovery_fast"] = g.recovery_fast;
  guard["ema_decay"] = g.ema_decay;
  guard["use_max_rms"] = g.use_max_rms;
  guard["c_min"] = g.c_min;
  guard["c_max"] = g.c_max;
  guard["recovery_confirm"] = g.recovery_confirm;
  root["guard"] = guard;

  root["clip"] = {{"g", optional_number(cfg.clip.max_norm)}};
  root["schedule"] = {{"kind", std::string(schedule_kind_name(cfg.schedule.kind))},
                      {"min_lr_ratio", cfg.schedule.min_lr_ratio}};
  root["calibration"] = {{"floor_lr", cfg.calibration.floor_lr},
                         {"max_doublings", cfg.calibration.max_doublings},
                         {"probe_steps", cfg.calibration.probe_steps},
                         {"batch_size", cfg.calibration.batch_size}};

  ojson scenarios = ojson::array();
  for (const ScenarioSpec& sc : cfg.scenarios) {
    ojson j;
    j["id"] = sc.id;
    j["type"] = std::string(to_string(sc.type));
    j["task"] = sc.task;
    ojson lrs = ojson::array();
    for (const LrSpec& lr : sc.lrs) {
      lrs.push_back(lr.value ? ojson(*lr.value) : ojson(lr.level));
    }
    j["lrs"] = lrs;
    j["steps"] = sc.steps;
    j["batch_size"] = sc.batch_size;
    j["eval_every"] = sc.eval_every;
    j["injection"] = sc.injection ? emit_injection(*sc.injection) : ojson(nullptr);
    j["clips"] = sc.clips;
    j["guard_clip"] = optional_number(sc.guard_clip);
    scenarios.push_back(j);
  }
  root["scenarios"] = scenarios;
  root["seeds"] = cfg.seeds;
  root["output"] = cfg.output;
  return root.dump(2) + "\n";
}

std::string scenario_run_id(const ScenarioSpec& scenario, const LrSpec& lr) {
  return scenario.lrs.size() > 1 ? scenario.id + "/" + lr.label() : scenario.id;
}

RunConfig calibration_probe(const SuiteConfig& cfg, const std::string& task_name) {
  auto it = cfg.tasks.find(task_name);
  if (it == cfg.tasks.end()) throw ConfigError("task", "unknown task '" + task_name + "'");
  RunConfig probe;
  probe.scenario = "calibration/" + task_name;
  probe.arm = "calibration";
  probe.task = it->second;
  probe.optimizer = cfg.optimizer;
  probe.steps = cfg.calibration.probe_steps;
  probe.batch_size = cfg.calibration.batch_size;
  probe.eval_every = cfg.calibration.probe_steps;
  probe.clip = cfg.clip;
  probe.schedule.kind = cfg.schedule.kind;
  probe.schedule.total_steps = probe.steps;
  probe.schedule.base_lr = cfg.optimizer.lr;
  probe.schedule.min_lr = cfg.optimizer.lr * cfg.schedule.min_lr_ratio;
  return probe;
}

PlannedSuite plan_suite(const SuiteConfig& cfg,
                        const std::optional<std::vector<std::uint64_t>>& seeds_override,
                        const std::optional<std::string>& scenario_filter) {
  cfg.validate();
  const std::vector<std::uint64_t>& seeds = seeds_override ? *seeds_override : cfg.seeds;
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");

  auto selected = [&](const ScenarioSpec& sc, const LrSpec& lr) {
    return !scenario_filter || *scenario_filter == sc.id ||
           *scenario_filter == scenario_run_id(sc, lr);
  };

  PlannedSuite plan;
  for (const ScenarioSpec& sc : cfg.scenarios) {
    for (const LrSpec& lr : sc.lrs) {
      if (selected(sc, lr) && lr.calibrated() && !plan.calibrations.contains(sc.task)) {
        plan.calibrations[sc.task] = calibrate_divergence_lr(
            calibration_probe(cfg, sc.task), cfg.seeds, cfg.calibration.floor_lr,
            cfg.calibration.max_doublings);
      }
    }
  }

  for (const ScenarioSpec& sc : cfg.scenarios) {
    for (const LrSpec& lr_spec : sc.lrs) {
      if (!selected(sc, lr_spec)) continue;
      const double lr = lr_spec.value ? *lr_spec.value
                                      : plan.calibrations.at(sc.task).lr * level_fraction(lr_spec.level);
      for (const std::uint64_t seed : seeds) {
        RunConfig base;
        base.scenario = scenario_run_id(sc, lr_spec);
        base.task = cfg.tasks.at(sc.task);
        base.optimizer = cfg.optimizer;
        base.optimizer.lr = lr;
        base.schedule.kind = cfg.schedule.kind;
        base.schedule.base_lr = lr;
        base.schedule.min_lr = lr * cfg.schedule.min_lr_ratio;
        base.schedule.total_steps = sc.steps;
        base.steps = sc.steps;
        base.batch_size = sc.batch_size;
        base.eval_every = sc.eval_every;
        base.seed = seed;
        base.injection = sc.injection;
        base.clip = cfg.clip;

        RunConfig guarded = base;
        guarded.baseline = false;
        guarded.guard = cfg.guard;
        if (sc.type == ScenarioType::ClipBaseline) {
          guarded.clip.max_norm = sc.guard_clip;
          guarded.arm = arm_name("guard", sc.guard_clip);
          for (const double g : sc.clips) {
            RunConfig clipped = base;
            clipped.clip.max_norm = g;
            clipped.arm = arm_name("adamw", g);
            plan.pairs.push_back({clipped, guarded});
          }
        } else {
          base.arm = arm_name("adamw", base.clip.max_norm);
          guarded.arm = arm_name("guard", guarded.clip.max_norm);
          plan.pairs.push_back({base, guarded});
        }
      }
    }
  }
  if (plan.pairs.empty()) {
    throw ConfigError("scenario", "no scenario matches '" + scenario_filter.value_or("") + "'");
  }
  return plan;
}

std::string calibration_to_json(const std::map<std::string, Calibration>& calibrations) {
  ojson root = ojson::object();
  for (const auto& [task, cal] : calibrations) {
    ojson j;
    j["lr"] = cal.lr;
    j["per_seed"] = cal.per_seed;
    ojson probes = ojson::array();
    for (const CalibrationProbe& p : cal.probes) {
      ojson pj;
      pj["seed"] = p.seed;
      pj["lr"] = p.lr;
      pj["initial_loss"] = p.initial_loss;
      pj["final_loss"] = std::isfinite(p.final_loss) ? ojson(p.final_loss) : ojson(nullptr);
      pj["degraded"] = p.degraded;
      probes.push_back(pj);
    }
    j["probes"] = probes;
    root[task] = j;
  }
  return root.dump(2) + "\n";
}

}  // namespace trainguard
