#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "prospec/encoder.hpp"
#include "prospec/envs.hpp"
#include "prospec/fdm.hpp"
#include "prospec/prospector.hpp"
#include "prospec/sac.hpp"

namespace prospec {

// ---- minimal TOML reader ----
// Supports: [section] headers, key = value scalars (integer, float, bool,
// double-quoted string), # comments, blank lines. That covers every key the
// training configs use.

struct TomlValue {
  std::variant<int64_t, double, bool, std::string> v;

  double as_double() const {
    if (std::holds_alternative<int64_t>(v)) return static_cast<double>(std::get<int64_t>(v));
    if (std::holds_alternative<double>(v)) return std::get<double>(v);
    throw std::invalid_argument("config: expected a number");
  }
  int64_t as_int() const {
    if (std::holds_alternative<int64_t>(v)) return std::get<int64_t>(v);
    throw std::invalid_argument("config: expected an integer");
  }
  bool as_bool() const {
    if (std::holds_alternative<bool>(v)) return std::get<bool>(v);
    throw std::invalid_argument("config: expected a boolean");
  }
  std::string as_string() const {
    if (std::holds_alternative<std::string>(v)) return std::get<std::string>(v);
    throw std::invalid_argument("config: expected a string");
  }
};

using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline TomlValue parse_toml_value(std::string text) {
  text = trim(text);
  if (text.empty()) throw std::invalid_argument("config: empty value");
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"')
      throw std::invalid_argument("config: unterminated string: " + text);
    return {text.substr(1, text.size() - 2)};
  }
  if (text == "true") return {true};
  if (text == "false") return {false};
  const bool looks_float = text.find_first_of(".eE") != std::string::npos &&
                           text.find_first_not_of("+-0123456789.eE") == std::string::npos;
  try {
    size_t used = 0;
    if (!looks_float) {
      const int64_t i = std::stoll(text, &used);
      if (used == text.size()) return {i};
    }
    const double d = std::stod(text, &used);
    if (used == text.size()) return {d};
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("config: cannot parse value: " + text);
}

}  // namespace detail

inline TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    // Strip comments outside strings.
    bool in_string = false;
    std::string line;
    for (const char c : raw) {
      if (c == '"') in_string = !in_string;
      if (c == '#' && !in_string) break;
      line.push_back(c);
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      table[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    table[section][key] = detail::parse_toml_value(line.substr(eq + 1));
  }
  return table;
}

inline TomlTable parse_toml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

// "section.key=value" into the table.
inline void apply_override(TomlTable& table, const std::string& dotted) {
  const auto eq = dotted.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("override needs key=value: " + dotted);
  const std::string path = detail::trim(dotted.substr(0, eq));
  const auto dot = path.find('.');
  if (dot == std::string::npos) throw std::invalid_argument("override needs section.key: " + dotted);
  table[path.substr(0, dot)][path.substr(dot + 1)] = detail::parse_toml_value(dotted.substr(eq + 1));
}

// ---- resolved training configuration ----

struct TrainConfig {
  // environment
  std::string env_name = "point_mass";
  std::string obs_kind = "vector";  // "vector" | "pixels"
  double env_dt = 0.05;
  int env_max_steps = 200;

  // loop
  long total_steps = 30000;
  long warmup_steps = 1000;
  int updates_per_step = 1;
  int batch_size = 128;
  int segment_batch = 32;
  long replay_capacity = 100000;
  int metrics_interval = 100;
  long checkpoint_interval = 0;  // 0 = final checkpoint only
  int eval_episodes = 10;
  uint64_t seed = 0;
  bool include_replay_in_checkpoint = false;

  // objective weights
  double lambda_pred = 1.0;
  double lambda_cycle = 1.0;
  int cycle_steps = 6;    // K
  int cycle_actions = 4;  // M

  // planning
  bool plan_at_collect = true;
  bool plan_at_eval = true;
  PlanConfig plan;

  // modules
  EncoderConfig encoder;
  FdmConfig fdm;
  SacConfig sac;

  void validate() const {
    if (lambda_pred < 0.0 || lambda_cycle < 0.0)
      throw std::invalid_argument("config: loss weights must be non-negative");
    if (warmup_steps > total_steps)
      throw std::invalid_argument("config: warmup cannot exceed total steps");
    if (cycle_steps < 1 || cycle_actions < 1)
      throw std::invalid_argument("config: cycle K and M must be >= 1");
    if (batch_size < 1 || segment_batch < 1 || updates_per_step < 0)
      throw std::invalid_argument("config: bad batch settings");
    plan.validate();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["env"] = {{"name", env_name}, {"obs", obs_kind}, {"dt", env_dt}, {"max_steps", env_max_steps}};
    j["harness"] = {{"total_steps", total_steps},
                    {"warmup_steps", warmup_steps},
                    {"updates_per_step", updates_per_step},
                    {"batch_size", batch_size},
                    {"segment_batch", segment_batch},
                    {"replay_capacity", replay_capacity},
                    {"metrics_interval", metrics_interval},
                    {"checkpoint_interval", checkpoint_interval},
                    {"eval_episodes", eval_episodes},
                    {"seed", seed},
                    {"include_replay", include_replay_in_checkpoint},
                    {"lambda_pred", lambda_pred},
                    {"lambda_cycle", lambda_cycle},
                    {"cycle_steps", cycle_steps},
                    {"cycle_actions", cycle_actions}};
    j["plan"] = {{"k", plan.candidates},
                 {"t", plan.horizon},
                 {"gamma", plan.gamma},
                 {"source", plan.source == ActionSource::Uniform   ? "uniform"
                            : plan.source == ActionSource::Policy ? "policy"
                                                                  : "mixed"},
                 {"at_collect", plan_at_collect},
                 {"at_eval", plan_at_eval}};
    j["encoder"] = {{"latent_dim", encoder.latent_dim},
                    {"proj_dim", encoder.proj_dim},
                    {"hidden", encoder.hidden},
                    {"target_policy", encoder.target_policy == TargetPolicy::StopGrad ? "stop_grad" : "ema"},
                    {"ema_tau", encoder.ema_tau}};
    j["fdm"] = {{"cond_hidden", fdm.cond_hidden}, {"scale_max", fdm.scale_max}, {"depth", fdm.depth}};
    j["sac"] = {{"hidden", sac.hidden},
                {"gamma", sac.gamma},
                {"tau", sac.tau},
                {"lr", sac.lr},
                {"alpha_lr", sac.alpha_lr},
                {"init_alpha", sac.init_alpha},
                {"target_entropy", sac.resolved_target_entropy()},
                {"logstd_min", sac.logstd_min},
                {"logstd_max", sac.logstd_max}};
    return j;
  }
};

// Builds the resolved config: section values override defaults, then the
// cross-module dimensions are wired from the environment and encoder.
inline TrainConfig resolve_config(const TomlTable& table) {
  TrainConfig cfg;
  const auto get = [&](const std::string& sec, const std::string& key) -> const TomlValue* {
    const auto s = table.find(sec);
    if (s == table.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  };
  const auto known_keys = [&](const std::string& sec, std::initializer_list<std::string> keys) {
    const auto s = table.find(sec);
    if (s == table.end()) return;
    for (const auto& [key, value] : s->second) {
      bool ok = false;
      for (const auto& k : keys) ok |= k == key;
      if (!ok) throw std::invalid_argument("config: unknown key " + sec + "." + key);
    }
  };

  known_keys("env", {"name", "obs", "dt", "max_steps"});
  if (const auto* v = get("env", "name")) cfg.env_name = v->as_string();
  if (const auto* v = get("env", "obs")) cfg.obs_kind = v->as_string();
  if (const auto* v = get("env", "dt")) cfg.env_dt = v->as_double();
  if (const auto* v = get("env", "max_steps")) cfg.env_max_steps = static_cast<int>(v->as_int());

  known_keys("harness",
             {"total_steps", "warmup_steps", "updates_per_step", "batch_size", "segment_batch",
              "replay_capacity", "metrics_interval", "checkpoint_interval", "eval_episodes", "seed",
              "include_replay", "lambda_pred", "lambda_cycle", "cycle_steps", "cycle_actions"});
  if (const auto* v = get("harness", "total_steps")) cfg.total_steps = v->as_int();
  if (const auto* v = get("harness", "warmup_steps")) cfg.warmup_steps = v->as_int();
  if (const auto* v = get("harness", "updates_per_step")) cfg.updates_per_step = static_cast<int>(v->as_int());
  if (const auto* v = get("harness", "batch_size")) cfg.batch_size = static_cast<int>(v->as_int());
  if (const auto* v = get("harness", "segment_batch")) cfg.segment_batch = static_cast<int>(v->as_int());
  if (const auto* v = get("harness", "replay_capacity")) cfg.replay_capacity = v->as_int();
  if (const auto* v = get("harness", "metrics_interval")) cfg.metrics_interval = static_cast<int>(v->as_int());
  if (const auto* v = get("harness", "checkpoint_interval")) cfg.checkpoint_interval = v->as_int();
  if (const auto* v = get("harness", "eval_episodes")) cfg.eval_episodes = static_cast<int>(v->as_int());
  if (const auto* v = get("harness", "seed")) cfg.seed = static_cast<uint64_t>(v->as_int());
  if (const auto* v = get("harness", "include_replay")) cfg.include_replay_in_checkpoint = v->as_bool();
  if (const auto* v = get("harness", "lambda_pred")) cfg.lambda_pred = v->as_double();
  if (const auto* v = get("harness", "lambda_cycle")) cfg.lambda_cycle = v->as_double();
  if (const auto* v = get("harness", "cycle_steps")) cfg.cycle_steps = static_cast<int>(v->as_int());
  if (const auto* v = get("harness", "cycle_actions")) cfg.cycle_actions = static_cast<int>(v->as_int());

  known_keys("sac", {"hidden", "gamma", "tau", "lr", "alpha_lr", "init_alpha", "target_entropy",
                     "logstd_min", "logstd_max"});
  if (const auto* v = get("sac", "hidden")) cfg.sac.hidden = static_cast<int>(v->as_int());
  if (const auto* v = get("sac", "gamma")) cfg.sac.gamma = v->as_double();
  if (const auto* v = get("sac", "tau")) cfg.sac.tau = v->as_double();
  if (const auto* v = get("sac", "lr")) cfg.sac.lr = v->as_double();
  if (const auto* v = get("sac", "alpha_lr")) cfg.sac.alpha_lr = v->as_double();
  if (const auto* v = get("sac", "init_alpha")) cfg.sac.init_alpha = v->as_double();
  if (const auto* v = get("sac", "target_entropy")) cfg.sac.target_entropy = v->as_double();
  if (const auto* v = get("sac", "logstd_min")) cfg.sac.logstd_min = v->as_double();
  if (const auto* v = get("sac", "logstd_max")) cfg.sac.logstd_max = v->as_double();

  known_keys("plan", {"k", "t", "gamma", "source", "at_collect", "at_eval"});
  cfg.plan.gamma = cfg.sac.gamma;
  if (const auto* v = get("plan", "k")) cfg.plan.candidates = static_cast<int>(v->as_int());
  if (const auto* v = get("plan", "t")) cfg.plan.horizon = static_cast<int>(v->as_int());
  if (const auto* v = get("plan", "gamma")) cfg.plan.gamma = v->as_double();
  if (const auto* v = get("plan", "source")) {
    const std::string s = v->as_string();
    if (s == "uniform")
      cfg.plan.source = ActionSource::Uniform;
    else if (s == "policy")
      cfg.plan.source = ActionSource::Policy;
    else if (s == "mixed")
      cfg.plan.source = ActionSource::Mixed;
    else
      throw std::invalid_argument("config: unknown plan.source " + s);
  }
  if (const auto* v = get("plan", "at_collect")) cfg.plan_at_collect = v->as_bool();
  if (const auto* v = get("plan", "at_eval")) cfg.plan_at_eval = v->as_bool();

  known_keys("encoder", {"latent_dim", "proj_dim", "hidden", "target_policy", "ema_tau"});
  if (const auto* v = get("encoder", "latent_dim")) cfg.encoder.latent_dim = static_cast<int>(v->as_int());
  if (const auto* v = get("encoder", "proj_dim")) cfg.encoder.proj_dim = static_cast<int>(v->as_int());
  if (const auto* v = get("encoder", "hidden")) cfg.encoder.hidden = static_cast<int>(v->as_int());
  if (const auto* v = get("encoder", "target_policy")) {
    const std::string s = v->as_string();
    if (s == "stop_grad")
      cfg.encoder.target_policy = TargetPolicy::StopGrad;
    else if (s == "ema")
      cfg.encoder.target_policy = TargetPolicy::Ema;
    else
      throw std::invalid_argument("config: unknown encoder.target_policy " + s);
  }
  if (const auto* v = get("encoder", "ema_tau")) cfg.encoder.ema_tau = v->as_double();

  known_keys("fdm", {"cond_hidden", "scale_max", "depth"});
  if (const auto* v = get("fdm", "cond_hidden")) cfg.fdm.cond_hidden = static_cast<int>(v->as_int());
  if (const auto* v = get("fdm", "scale_max")) cfg.fdm.scale_max = v->as_double();
  if (const auto* v = get("fdm", "depth")) cfg.fdm.depth = static_cast<int>(v->as_int());

  // Cross-module wiring from the environment.
  EnvSpec spec = make_env(cfg.env_name, cfg.env_dt, cfg.env_max_steps)->spec();
  cfg.encoder.obs = cfg.obs_kind == "pixels" ? ObsKind::Pixels : ObsKind::Vector;
  if (cfg.obs_kind == "pixels" && cfg.env_name != "point_mass")
    throw std::invalid_argument("config: pixel observations are only rendered for point_mass");
  cfg.encoder.obs_dim = spec.obs_dim;
  cfg.fdm.action_dim = spec.action_dim;
  cfg.fdm.latent_dim = cfg.encoder.latent_dim;
  cfg.sac.latent_dim = cfg.encoder.latent_dim;
  cfg.sac.action_dim = spec.action_dim;
  cfg.sac.action_low = spec.action_low;
  cfg.sac.action_high = spec.action_high;

  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  TomlTable table = path.empty() ? TomlTable{} : parse_toml_file(path);
  for (const auto& o : overrides) apply_override(table, o);
  return resolve_config(table);
}

}  // namespace prospec
