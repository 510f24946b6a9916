#pragma once

/**
 * @file config.hpp
 *
 * @brief TOML run configuration and evaluation scenarios.
 *
 * Run configuration keys (all optional):
 *
 *     norm = "l2"                       # l1 | l2 | linf
 *     history = "history.jsonl"
 *     [thresholds]  theta, eta, k_sigma
 *     [[extractors]] id, kind, [extractors.params] key = "value"
 *     [weights.<profile>] <dim> = <weight>
 *     [backend]  kind (mock|remote), endpoint, model, auth_env, temperature,
 *                max_retries, timeout_s, script
 *     [provider] kind (deterministic_hash|table|remote), dimension, endpoint,
 *                model, auth_env, table, timeout_s
 *     [templates.<id>] method, turns = [{ role, text, attach }]
 *     [partition.<attribute>] dim, unit
 *     [eval] trials, alpha
 *
 * A scenario file accepts every run configuration key (overriding the run
 * configuration) plus:
 *
 *     name, reference, trials, alpha
 *     [[methods]] method, template
 *     [context] attachments = [uri, ...], description, states = "file.jsonl",
 *               [context.vars] key = "value"
 *
 * Relative paths resolve against the directory of the file naming them.
 * Unknown keys are rejected.
 */

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "toml.hpp"

#include "diffreason/anomaly.hpp"
#include "diffreason/backends.hpp"
#include "diffreason/diff_engine.hpp"
#include "diffreason/error.hpp"
#include "diffreason/eval_harness.hpp"
#include "diffreason/feature_space.hpp"
#include "diffreason/llm_gateway.hpp"

namespace diffreason {

struct RunConfig {
  ExtractorRegistry extractors = ExtractorRegistry::with_defaults();
  Norm norm = Norm::L2;
  std::map<std::string, WeightProfile, std::less<>> weights{{"unit", WeightProfile::unit()}};
  ThresholdSpec thresholds;
  BackendSpec backend;
  ProviderSpec provider;
  TemplateRegistry templates = TemplateRegistry::with_defaults();
  PartitionSchema partition;
  std::filesystem::path history = "history.jsonl";
  std::size_t trials = 20;
  double alpha = 0.05;

  const WeightProfile& weight_profile(std::string_view id) const {
    const auto it = weights.find(id);
    if (it == weights.end()) throw Error(Errc::ConfigError, "no weight profile '" + std::string(id) + "'");
    return it->second;
  }
};

namespace detail {

inline void only_keys(const toml::table& t, std::string_view where, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : t) {
    if (std::find(allowed.begin(), allowed.end(), key.str()) == allowed.end()) {
      throw Error(Errc::ConfigError, "unknown key '" + std::string(key.str()) + "' in " + std::string(where));
    }
  }
}

inline std::string get_string(const toml::table& t, std::string_view key, std::string_view where) {
  const auto v = t[key].value<std::string>();
  if (!v) throw Error(Errc::ConfigError, std::string(where) + "." + std::string(key) + " must be a string");
  return *v;
}

inline std::optional<std::string> opt_string(const toml::table& t, std::string_view key, std::string_view where) {
  if (!t.contains(key)) return std::nullopt;
  return get_string(t, key, where);
}

inline std::optional<double> opt_number(const toml::table& t, std::string_view key, std::string_view where) {
  if (!t.contains(key)) return std::nullopt;
  const auto v = t[key].value<double>();
  if (!v) throw Error(Errc::ConfigError, std::string(where) + "." + std::string(key) + " must be a number");
  return *v;
}

inline std::optional<std::int64_t> opt_integer(const toml::table& t, std::string_view key, std::string_view where) {
  if (!t.contains(key)) return std::nullopt;
  const auto* node = t.get(key);
  if (!node->is_integer()) throw Error(Errc::ConfigError, std::string(where) + "." + std::string(key) + " must be an integer");
  return node->value<std::int64_t>();
}

inline const toml::table& as_table(const toml::node& node, std::string_view where) {
  const auto* t = node.as_table();
  if (t == nullptr) throw Error(Errc::ConfigError, std::string(where) + " must be a table");
  return *t;
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

inline std::size_t positive_count(std::int64_t v, std::string_view where) {
  if (v < 1) throw Error(Errc::ConfigError, std::string(where) + " must be >= 1");
  return std::size_t(v);
}

inline double unit_interval(double v, std::string_view where) {
  if (!(v > 0.0 && v < 1.0)) throw Error(Errc::ConfigError, std::string(where) + " must lie in (0, 1)");
  return v;
}

}  // namespace detail

inline Norm parse_norm_or_throw(std::string_view s) {
  const auto n = parse_norm(s);
  if (!n) throw Error(Errc::ConfigError, "unknown norm '" + std::string(s) + "' (l1, l2, linf)");
  return *n;
}

inline void apply_config(const toml::table& root, const std::filesystem::path& base, RunConfig& cfg,
                         std::initializer_list<std::string_view> extra_keys = {}) {
  using namespace detail;
  for (const auto& [key, _] : root) {
    static constexpr std::string_view known[] = {"norm",    "history",  "thresholds", "extractors", "weights",
                                                 "backend", "provider", "templates",  "partition",  "eval"};
    const auto k = key.str();
    if (std::find(std::begin(known), std::end(known), k) == std::end(known) &&
        std::find(extra_keys.begin(), extra_keys.end(), k) == extra_keys.end()) {
      throw Error(Errc::ConfigError, "unknown top-level key '" + std::string(k) + "'");
    }
  }

  if (const auto n = opt_string(root, "norm", "config")) cfg.norm = parse_norm_or_throw(*n);
  if (const auto h = opt_string(root, "history", "config")) cfg.history = resolve(base, *h);

  if (root.contains("thresholds")) {
    const auto& t = as_table(*root.get("thresholds"), "thresholds");
    only_keys(t, "thresholds", {"theta", "eta", "k_sigma"});
    if (const auto v = opt_number(t, "theta", "thresholds")) cfg.thresholds.theta = *v;
    if (const auto v = opt_number(t, "eta", "thresholds")) cfg.thresholds.eta = *v;
    if (const auto v = opt_number(t, "k_sigma", "thresholds")) cfg.thresholds.k_sigma = *v;
    cfg.thresholds.validate();
  }

  if (root.contains("extractors")) {
    const auto* arr = root.get("extractors")->as_array();
    if (arr == nullptr) throw Error(Errc::ConfigError, "extractors must be an array of tables");
    for (const auto& node : *arr) {
      const auto& t = as_table(node, "extractors[]");
      only_keys(t, "extractors[]", {"id", "kind", "params"});
      ExtractorSpec spec;
      spec.id = get_string(t, "id", "extractors[]");
      const auto kind = parse_extractor_kind(get_string(t, "kind", "extractors[]"));
      if (!kind) throw Error(Errc::ConfigError, "extractor '" + spec.id + "' has an unknown kind");
      spec.kind = *kind;
      if (t.contains("params")) {
        for (const auto& [k, v] : as_table(*t.get("params"), "extractors[].params")) {
          const auto s = v.value<std::string>();
          if (!s) throw Error(Errc::ConfigError, "extractor params must be strings");
          spec.params[std::string(k.str())] = *s;
        }
      }
      cfg.extractors.put(std::move(spec));
    }
  }

  if (root.contains("weights")) {
    for (const auto& [id, node] : as_table(*root.get("weights"), "weights")) {
      WeightProfile profile;
      profile.id = std::string(id.str());
      for (const auto& [dim, w] : as_table(node, "weights." + profile.id)) {
        const auto v = w.value<double>();
        if (!v) throw Error(Errc::ConfigError, "weight " + profile.id + "." + std::string(dim.str()) + " must be numeric");
        profile.weights[std::string(dim.str())] = *v;
      }
      profile.validate();
      cfg.weights.insert_or_assign(profile.id, std::move(profile));
    }
  }

  if (root.contains("backend")) {
    const auto& t = as_table(*root.get("backend"), "backend");
    only_keys(t, "backend",
              {"kind", "endpoint", "model", "auth_env", "temperature", "max_retries", "timeout_s", "script"});
    if (const auto k = opt_string(t, "kind", "backend")) {
      if (*k == "mock") cfg.backend.kind = BackendKind::Mock;
      else if (*k == "remote") cfg.backend.kind = BackendKind::Remote;
      else throw Error(Errc::ConfigError, "backend.kind must be mock or remote");
    }
    if (const auto v = opt_string(t, "endpoint", "backend")) cfg.backend.endpoint = *v;
    if (const auto v = opt_string(t, "model", "backend")) cfg.backend.model_name = *v;
    if (const auto v = opt_string(t, "auth_env", "backend")) cfg.backend.auth_env = *v;
    if (const auto v = opt_number(t, "temperature", "backend")) cfg.backend.temperature = *v;
    if (const auto v = opt_integer(t, "max_retries", "backend")) {
      if (*v < 0) throw Error(Errc::ConfigError, "backend.max_retries must be >= 0");
      cfg.backend.max_retries = int(*v);
    }
    if (const auto v = opt_number(t, "timeout_s", "backend")) cfg.backend.timeout_s = *v;
    if (const auto v = opt_string(t, "script", "backend")) cfg.backend.script = resolve(base, *v);
  }

  if (root.contains("provider")) {
    const auto& t = as_table(*root.get("provider"), "provider");
    only_keys(t, "provider", {"kind", "dimension", "endpoint", "model", "auth_env", "table", "timeout_s"});
    if (const auto k = opt_string(t, "kind", "provider")) {
      if (*k == "deterministic_hash") cfg.provider.kind = ProviderKind::DeterministicHash;
      else if (*k == "table") cfg.provider.kind = ProviderKind::Table;
      else if (*k == "remote") cfg.provider.kind = ProviderKind::Remote;
      else throw Error(Errc::ConfigError, "provider.kind must be deterministic_hash, table or remote");
    }
    if (const auto v = opt_integer(t, "dimension", "provider")) cfg.provider.dimension = positive_count(*v, "provider.dimension");
    if (const auto v = opt_string(t, "endpoint", "provider")) cfg.provider.endpoint = *v;
    if (const auto v = opt_string(t, "model", "provider")) cfg.provider.model_name = *v;
    if (const auto v = opt_string(t, "auth_env", "provider")) cfg.provider.auth_env = *v;
    if (const auto v = opt_string(t, "table", "provider")) cfg.provider.table = resolve(base, *v);
    if (const auto v = opt_number(t, "timeout_s", "provider")) cfg.provider.timeout_s = *v;
  }

  if (root.contains("templates")) {
    for (const auto& [id, node] : as_table(*root.get("templates"), "templates")) {
      const auto where = "templates." + std::string(id.str());
      const auto& t = as_table(node, where);
      only_keys(t, where, {"method", "turns"});
      PromptTemplate tpl;
      tpl.id = std::string(id.str());
      const auto m = parse_method(get_string(t, "method", where));
      if (!m) throw Error(Errc::ConfigError, where + ".method must be direct or difference");
      tpl.method = *m;
      const auto* turns = t.contains("turns") ? t.get("turns")->as_array() : nullptr;
      if (turns == nullptr) throw Error(Errc::ConfigError, where + ".turns must be an array of tables");
      for (const auto& tn : *turns) {
        const auto& tt = as_table(tn, where + ".turns[]");
        only_keys(tt, where + ".turns[]", {"role", "text", "attach"});
        TurnTemplate turn;
        if (const auto r = opt_string(tt, "role", where)) {
          const auto role = parse_role(*r);
          if (!role) throw Error(Errc::ConfigError, where + ": role must be system or user");
          turn.role = *role;
        }
        turn.text = get_string(tt, "text", where + ".turns[]");
        turn.attach = tt["attach"].value_or(false);
        tpl.turns.push_back(std::move(turn));
      }
      cfg.templates.put(std::move(tpl));
    }
  }

  if (root.contains("partition")) {
    for (const auto& [attr, node] : as_table(*root.get("partition"), "partition")) {
      const auto where = "partition." + std::string(attr.str());
      const auto& t = as_table(node, where);
      only_keys(t, where, {"dim", "unit"});
      cfg.partition.attributes[std::string(attr.str())] = {get_string(t, "dim", where), opt_string(t, "unit", where)};
    }
  }

  if (root.contains("eval")) {
    const auto& t = as_table(*root.get("eval"), "eval");
    only_keys(t, "eval", {"trials", "alpha"});
    if (const auto v = opt_integer(t, "trials", "eval")) cfg.trials = positive_count(*v, "eval.trials");
    if (const auto v = opt_number(t, "alpha", "eval")) cfg.alpha = unit_interval(*v, "eval.alpha");
  }
}

inline toml::table parse_toml_file(const std::filesystem::path& path) {
  try {
    return toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + std::string(e.description()));
  }
}

/// Built-in defaults, overlaid with `path` when given.
inline RunConfig load_config(const std::optional<std::filesystem::path>& path) {
  RunConfig cfg;
  if (path) apply_config(parse_toml_file(*path), path->parent_path(), cfg);
  return cfg;
}

inline std::vector<StateRecord> read_states_jsonl(std::istream& in) {
  std::vector<StateRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    out.push_back(state_from_json(parse_json(line)));
  }
  return out;
}

/// Reads a scenario; its run configuration keys are applied on top of `cfg`.
inline Scenario load_scenario(const std::filesystem::path& path, RunConfig& cfg) {
  using namespace detail;
  const auto root = parse_toml_file(path);
  const auto base = path.parent_path();
  apply_config(root, base, cfg, {"name", "reference", "trials", "alpha", "methods", "context"});

  Scenario s;
  s.name = root["name"].value_or(path.stem().string());
  s.reference = get_string(root, "reference", "scenario");
  s.trials = cfg.trials;
  s.alpha = cfg.alpha;
  if (const auto v = opt_integer(root, "trials", "scenario")) s.trials = positive_count(*v, "trials");
  if (const auto v = opt_number(root, "alpha", "scenario")) s.alpha = unit_interval(*v, "alpha");

  const auto* methods = root.contains("methods") ? root.get("methods")->as_array() : nullptr;
  if (methods == nullptr || methods->empty()) throw Error(Errc::MissingMethod, "scenario needs [[methods]] entries");
  for (const auto& node : *methods) {
    const auto& t = as_table(node, "methods[]");
    only_keys(t, "methods[]", {"method", "template"});
    const auto m = parse_method(get_string(t, "method", "methods[]"));
    if (!m) throw Error(Errc::ConfigError, "methods[].method must be direct or difference");
    s.methods.push_back({*m, get_string(t, "template", "methods[]")});
  }

  if (root.contains("context")) {
    const auto& t = as_table(*root.get("context"), "context");
    only_keys(t, "context", {"attachments", "description", "states", "vars"});
    if (t.contains("attachments")) {
      const auto* arr = t.get("attachments")->as_array();
      if (arr == nullptr) throw Error(Errc::ConfigError, "context.attachments must be an array of strings");
      for (const auto& a : *arr) {
        const auto uri = a.value<std::string>();
        if (!uri) throw Error(Errc::ConfigError, "context.attachments must be an array of strings");
        s.context.attachments.push_back(RawRef::uri(*uri));
      }
    }
    if (const auto d = opt_string(t, "description", "context")) s.context.vars["description"] = *d;
    if (const auto f = opt_string(t, "states", "context")) {
      std::ifstream in(resolve(base, *f));
      if (!in) throw Error(Errc::ConfigError, "cannot read context states " + *f);
      s.context.states = read_states_jsonl(in);
    }
    if (t.contains("vars")) {
      for (const auto& [k, v] : as_table(*t.get("vars"), "context.vars")) {
        const auto str = v.value<std::string>();
        if (!str) throw Error(Errc::ConfigError, "context.vars values must be strings");
        s.context.vars[std::string(k.str())] = *str;
      }
    }
  }
  return s;
}

}  // namespace diffreason
