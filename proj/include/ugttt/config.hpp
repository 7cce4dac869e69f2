#pragma once

// Configuration schema for TrainerConfig: typed dotted keys, fail-closed
// parsing, ablation modes and run manifests.

#include "ugttt/trainer.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ugttt {

using Json = nlohmann::json;

enum class FieldKind { Integer, Real, Boolean, Text };

struct ConfigField {
  std::string key;
  FieldKind kind;
  std::function<Json(const TrainerConfig&)> get;
  std::function<void(TrainerConfig&, const Json&)> set;
  /// Original value at full scale when the default here is scaled down.
  std::optional<std::string> full_scale_value;
  std::string note;
};

namespace detail {

inline ConfigField make_int(std::string key, std::function<std::size_t&(TrainerConfig&)> ref,
                            std::optional<std::string> full = {}, std::string note = {}) {
  return {std::move(key), FieldKind::Integer,
          [ref](const TrainerConfig& c) { return Json(ref(const_cast<TrainerConfig&>(c))); },
          [ref](TrainerConfig& c, const Json& j) { ref(c) = j.get<std::size_t>(); }, std::move(full), std::move(note)};
}

inline ConfigField make_u64(std::string key, std::function<std::uint64_t&(TrainerConfig&)> ref) {
  return {std::move(key), FieldKind::Integer,
          [ref](const TrainerConfig& c) { return Json(ref(const_cast<TrainerConfig&>(c))); },
          [ref](TrainerConfig& c, const Json& j) { ref(c) = j.get<std::uint64_t>(); }, std::nullopt, {}};
}

inline ConfigField make_real(std::string key, std::function<double&(TrainerConfig&)> ref,
                             std::optional<std::string> full = {}, std::string note = {}) {
  return {std::move(key), FieldKind::Real,
          [ref](const TrainerConfig& c) { return Json(ref(const_cast<TrainerConfig&>(c))); },
          [ref](TrainerConfig& c, const Json& j) { ref(c) = j.get<double>(); }, std::move(full), std::move(note)};
}

inline ConfigField make_bool(std::string key, std::function<bool&(TrainerConfig&)> ref) {
  return {std::move(key), FieldKind::Boolean,
          [ref](const TrainerConfig& c) { return Json(ref(const_cast<TrainerConfig&>(c))); },
          [ref](TrainerConfig& c, const Json& j) { ref(c) = j.get<bool>(); }, std::nullopt, {}};
}

}  // namespace detail

inline const std::vector<ConfigField>& config_schema() {
  using namespace detail;
  using C = TrainerConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(make_int("ensemble.K", [](C& c) -> std::size_t& { return c.arch.ensemble_size; }));
    f.push_back(make_int("ensemble.rank", [](C& c) -> std::size_t& { return c.arch.adapter_rank; }, "16",
                         "toy feature width"));
    f.push_back(make_real("ensemble.lora_scale", [](C& c) -> double& { return c.arch.lora_scale; }));
    f.push_back({"ensemble.init", FieldKind::Text,
                 [](const C& c) { return Json(c.arch.init == AdapterInit::Tied ? "tied" : "independent"); },
                 [](C& c, const Json& j) {
                   const auto s = j.get<std::string>();
                   if (s == "tied") c.arch.init = AdapterInit::Tied;
                   else if (s == "independent") c.arch.init = AdapterInit::Independent;
                   else throw ConfigError("ensemble.init: expected 'independent' or 'tied', got '" + s + "'");
                 },
                 std::nullopt, {}});
    f.push_back(make_int("model.feature_dim", [](C& c) -> std::size_t& { return c.arch.feature_dim; }, "4096",
                         "toy encoder width"));
    f.push_back(make_int("model.tracked_layers", [](C& c) -> std::size_t& { return c.arch.tracked_layers; }));
    f.push_back(make_u64("model.encoder_seed", [](C& c) -> std::uint64_t& { return c.arch.encoder_seed; }));
    f.push_back(make_int("model.hash_width", [](C& c) -> std::size_t& { return c.arch.hash_width; }));
    f.push_back(make_int("model.length_buckets", [](C& c) -> std::size_t& { return c.arch.length_buckets; }));
    f.push_back(make_real("model.encoder_gain", [](C& c) -> double& { return c.arch.encoder_gain; }));
    f.push_back(make_real("model.base_init_std", [](C& c) -> double& { return c.arch.base_init_std; }));
    f.push_back(make_real("model.adapter_init_std", [](C& c) -> double& { return c.arch.adapter_init_std; }));
    f.push_back(make_int("group.size", [](C& c) -> std::size_t& { return c.group_size; }));
    f.push_back(make_int("group.count", [](C& c) -> std::size_t& { return c.groups_per_batch; }));
    f.push_back(make_int("train.epochs", [](C& c) -> std::size_t& { return c.epochs; }));
    f.push_back(make_bool("train.remove_constant_reward_groups",
                          [](C& c) -> bool& { return c.remove_constant_reward_groups; }));
    f.push_back(make_real("optim.lr", [](C& c) -> double& { return c.optimizer.lr; }, "4e-5",
                          "toy policy has no pretrained prior to protect"));
    f.push_back(make_real("optim.beta1", [](C& c) -> double& { return c.optimizer.beta1; }));
    f.push_back(make_real("optim.beta2", [](C& c) -> double& { return c.optimizer.beta2; }));
    f.push_back(make_real("optim.eps", [](C& c) -> double& { return c.optimizer.eps; }));
    f.push_back(make_real("optim.weight_decay", [](C& c) -> double& { return c.optimizer.weight_decay; }));
    f.push_back(make_real("loss.eps_clip", [](C& c) -> double& { return c.eps_clip; }));
    f.push_back(make_real("loss.kl_coef", [](C& c) -> double& { return c.kl_coef; }));
    f.push_back(make_real("loss.nnm_coef", [](C& c) -> double& { return c.nnm_coef; }));
    f.push_back(make_real("mi.alpha", [](C& c) -> double& { return c.advantage.mi_coef; }));
    f.push_back(make_real("mi.beta_ref", [](C& c) -> double& { return c.advantage.beta_ref; }));
    f.push_back(make_real("mi.gamma_max", [](C& c) -> double& { return c.advantage.gamma_max; }));
    f.push_back(make_real("mi.clip", [](C& c) -> double& { return c.advantage.mi_clip; }));
    f.push_back(make_real("mi.top_fraction", [](C& c) -> double& { return c.mi_top_fraction; }));
    f.push_back(make_real("beta_solver.kl_target", [](C& c) -> double& { return c.advantage.beta_solver.kl_target; }));
    f.push_back(make_real("beta_solver.high", [](C& c) -> double& { return c.advantage.beta_solver.bracket_high; }));
    f.push_back({"beta_solver.iterations", FieldKind::Integer,
                 [](const C& c) { return Json(c.advantage.beta_solver.iterations); },
                 [](C& c, const Json& j) { c.advantage.beta_solver.iterations = j.get<int>(); }, std::nullopt, {}});
    f.push_back(make_bool("streaming.enabled", [](C& c) -> bool& { return c.streaming.enabled; }));
    f.push_back(make_int("streaming.window", [](C& c) -> std::size_t& { return c.streaming.window; }, "4096",
                         "toy rollouts are tens of tokens"));
    f.push_back(make_int("streaming.check_interval", [](C& c) -> std::size_t& { return c.streaming.check_interval; },
                         "2048", "toy rollouts are tens of tokens"));
    f.push_back(make_int("streaming.min_tokens", [](C& c) -> std::size_t& { return c.streaming.min_tokens_before_check; },
                         "4096", "toy rollouts are tens of tokens"));
    f.push_back(make_real("streaming.percentile", [](C& c) -> double& { return c.streaming.percentile; }));
    f.push_back(make_int("streaming.warmup_epochs", [](C& c) -> std::size_t& { return c.streaming.warmup_epochs; }));
    f.push_back(make_int("rollout.max_tokens", [](C& c) -> std::size_t& { return c.limits.max_tokens; }));
    f.push_back(make_int("rollout.phase1_cap", [](C& c) -> std::size_t& { return c.limits.phase1_cap; }, "4096",
                         "toy rollouts are tens of tokens"));
    f.push_back(make_int("rollout.phase2_budget", [](C& c) -> std::size_t& { return c.limits.phase2_budget; }));
    f.push_back(make_u64("run.seed", [](C& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(make_int("run.workers", [](C& c) -> std::size_t& { return c.workers; }));
    f.push_back(make_int("run.chunk_size", [](C& c) -> std::size_t& { return c.chunk_size; }, "256",
                         "toy vocabulary is tiny"));
    f.push_back({"parent.strategy", FieldKind::Text, [](const C& c) { return Json(to_string(c.parent_strategy)); },
                 [](C& c, const Json& j) { c.parent_strategy = parse_parent_strategy(j.get<std::string>()); },
                 std::nullopt, {}});
    f.push_back(make_int("parent.capacity", [](C& c) -> std::size_t& { return c.parent_capacity; }));
    f.push_back(make_int("parent.prompt_tokens", [](C& c) -> std::size_t& { return c.prompt_tokens; }));
    return f;
  }();
  return fields;
}

inline const ConfigField* find_field(const std::string& key) {
  for (const auto& f : config_schema())
    if (f.key == key) return &f;
  return nullptr;
}

/// Type-checked assignment of one dotted key.
inline void set_config_value(TrainerConfig& cfg, const std::string& key, const Json& value) {
  const ConfigField* f = find_field(key);
  if (!f) throw ConfigError("unknown configuration key '" + key + "'");
  const bool ok = [&] {
    switch (f->kind) {
      case FieldKind::Integer: return value.is_number_integer() && (value.is_number_unsigned() || value.get<long long>() >= 0);
      case FieldKind::Real: return value.is_number();
      case FieldKind::Boolean: return value.is_boolean();
      case FieldKind::Text: return value.is_string();
    }
    return false;
  }();
  if (!ok) {
    static const char* names[] = {"a non-negative integer", "a number", "a boolean", "a string"};
    throw ConfigError("configuration key '" + key + "': expected " + names[static_cast<int>(f->kind)] + ", got " +
                      value.dump());
  }
  f->set(cfg, value);
}

namespace detail {

inline void flatten(const Json& j, const std::string& prefix, std::vector<std::pair<std::string, Json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object())
      flatten(*it, key, out);
    else
      out.emplace_back(key, *it);
  }
}

}  // namespace detail

/// Applies a config object; nested objects and dotted keys are equivalent.
/// Any unknown key is an error.
inline void apply_config_json(TrainerConfig& cfg, const Json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  std::vector<std::pair<std::string, Json>> flat;
  detail::flatten(j, "", flat);
  for (const auto& [k, v] : flat) set_config_value(cfg, k, v);
}

inline Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  try {
    return Json::parse(is, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
inline void apply_override(TrainerConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;
  }
  set_config_value(cfg, key, value);
}

inline Json config_to_json(const TrainerConfig& cfg) {
  Json j = Json::object();
  for (const auto& f : config_schema()) {
    std::string pointer = "/" + f.key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    j[Json::json_pointer(pointer)] = f.get(cfg);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Modes and manifests

enum class RunMode { Method, BaselineK1, AblateNoNnm, AblateNoMi };

inline const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::Method: return "method";
    case RunMode::BaselineK1: return "baseline-K1";
    case RunMode::AblateNoNnm: return "ablate-no-NNM";
    case RunMode::AblateNoMi: return "ablate-no-MI";
  }
  return "?";
}

inline RunMode parse_run_mode(const std::string& s) {
  for (RunMode m : {RunMode::Method, RunMode::BaselineK1, RunMode::AblateNoNnm, RunMode::AblateNoMi})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown mode '" + s + "' (expected method, baseline-K1, ablate-no-NNM or ablate-no-MI)");
}

/// Mode overrides are applied last and always win.
inline void apply_mode(TrainerConfig& cfg, RunMode mode) {
  switch (mode) {
    case RunMode::Method: break;
    case RunMode::BaselineK1:
      cfg.arch.ensemble_size = 1;
      cfg.advantage.mi_coef = 0.0;
      cfg.nnm_coef = 0.0;
      cfg.streaming.enabled = false;
      break;
    case RunMode::AblateNoNnm: cfg.nnm_coef = 0.0; break;
    case RunMode::AblateNoMi: cfg.advantage.mi_coef = 0.0; break;
  }
}

struct RunManifest {
  std::string config_path;
  std::string env;
  RunMode mode = RunMode::Method;
  std::optional<bool> streaming;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir;
  Json config_overrides = Json::object();  // inline "config" block
};

inline RunManifest parse_manifest(const Json& j) {
  if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
  RunManifest m;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const Json& v = *it;
    auto expect = [&](bool ok, const char* what) {
      if (!ok) throw ConfigError("manifest field '" + k + "': expected " + what);
    };
    if (k == "config_path") { expect(v.is_string(), "a string"); m.config_path = v.get<std::string>(); }
    else if (k == "env") { expect(v.is_string(), "a string"); m.env = v.get<std::string>(); }
    else if (k == "mode") { expect(v.is_string(), "a string"); m.mode = parse_run_mode(v.get<std::string>()); }
    else if (k == "streaming") { expect(v.is_boolean(), "a boolean"); m.streaming = v.get<bool>(); }
    else if (k == "seeds") {
      expect(v.is_array() && !v.empty(), "a non-empty array of seeds");
      m.seeds.clear();
      for (const auto& s : v) {
        expect(s.is_number_unsigned(), "a non-empty array of non-negative integers");
        m.seeds.push_back(s.get<std::uint64_t>());
      }
    }
    else if (k == "output_dir") { expect(v.is_string(), "a string"); m.output_dir = v.get<std::string>(); }
    else if (k == "config") { expect(v.is_object(), "an object"); m.config_overrides = v; }
    else throw ConfigError("unknown manifest field '" + k + "'");
  }
  return m;
}

/// Command-line settings; each one that is set beats the manifest.
struct CliOverrides {
  std::optional<std::string> env;
  std::optional<RunMode> mode;
  std::optional<bool> streaming;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::string> output_dir;
  std::vector<std::string> assignments;  // key=value
};

struct ResolvedRun {
  RunManifest manifest;
  TrainerConfig config;  // seed taken from manifest.seeds.front()
};

/// defaults < config file < manifest inline config < manifest flags < CLI,
/// then the mode's forced values.
inline ResolvedRun resolve_run(RunManifest manifest, const CliOverrides& cli) {
  TrainerConfig cfg;
  if (!manifest.config_path.empty()) apply_config_json(cfg, read_json_file(manifest.config_path));
  apply_config_json(cfg, manifest.config_overrides);
  if (manifest.streaming) cfg.streaming.enabled = *manifest.streaming;
  if (cli.env) manifest.env = *cli.env;
  if (cli.mode) manifest.mode = *cli.mode;
  if (cli.streaming) manifest.streaming = cli.streaming;
  if (cli.seeds) manifest.seeds = *cli.seeds;
  if (cli.output_dir) manifest.output_dir = *cli.output_dir;
  for (const auto& a : cli.assignments) apply_override(cfg, a);
  if (cli.streaming) cfg.streaming.enabled = *cli.streaming;
  apply_mode(cfg, manifest.mode);
  if (!manifest.seeds.empty()) cfg.seed = manifest.seeds.front();
  return {std::move(manifest), cfg};
}

/// One `key = value` line per field. Scaled defaults carry their full-scale
/// value and the reason.
inline std::string format_config(const TrainerConfig& cfg, const RunManifest* manifest = nullptr) {
  std::ostringstream os;
  if (manifest) {
    os << "env = " << (manifest->env.empty() ? "<unset>" : manifest->env) << "\n";
    os << "mode = " << to_string(manifest->mode) << "\n";
    os << "seeds = [";
    for (std::size_t i = 0; i < manifest->seeds.size(); ++i) os << (i ? ", " : "") << manifest->seeds[i];
    os << "]\n";
  }
  os << "arch.vocab_size = " << cfg.arch.vocab_size << "  # set by the environment\n";
  for (const auto& f : config_schema()) {
    os << f.key << " = " << f.get(cfg).dump();
    if (f.full_scale_value) os << "  # SCALED (full scale: " << *f.full_scale_value << "; " << f.note << ")";
    os << "\n";
  }
  return os.str();
}

}  // namespace ugttt
