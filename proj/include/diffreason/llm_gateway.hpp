#pragma once

/**
 * @file llm_gateway.hpp
 *
 * @brief Prompt templates for the direct and difference prompting methods,
 * the chat backend interface with its scripted mock, and the LLM-summarized
 * spatial partition.
 */

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "diffreason/diff_engine.hpp"
#include "diffreason/error.hpp"
#include "diffreason/feature_space.hpp"

namespace diffreason {

enum class Method { Direct, Difference };

constexpr std::string_view to_string(Method m) noexcept { return m == Method::Direct ? "direct" : "difference"; }

inline std::optional<Method> parse_method(std::string_view s) {
  if (s == "direct") return Method::Direct;
  if (s == "difference") return Method::Difference;
  return std::nullopt;
}

enum class Role { System, User };

constexpr std::string_view to_string(Role r) noexcept { return r == Role::System ? "system" : "user"; }

inline std::optional<Role> parse_role(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  return std::nullopt;
}

struct Turn {
  Role role = Role::User;
  std::string text;
  std::vector<RawRef> attachments;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct PromptSpec {
  Method method = Method::Direct;
  std::vector<Turn> turns;
  std::string template_id;

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

inline Json to_json(const PromptSpec& p) {
  Json j;
  j["method"] = std::string(to_string(p.method));
  j["template_id"] = p.template_id;
  Json turns = Json::array();
  for (const auto& t : p.turns) {
    Json jt;
    jt["role"] = std::string(to_string(t.role));
    jt["text"] = t.text;
    Json att = Json::array();
    for (const auto& a : t.attachments) att.push_back(to_json(a));
    jt["attachments"] = std::move(att);
    turns.push_back(std::move(jt));
  }
  j["turns"] = std::move(turns);
  return j;
}

// ---------------------------------------------------------------------------
// Templates

/// One templated turn. `{{name}}` placeholders are expanded from the context;
/// `attach` places the context attachments on this turn.
struct TurnTemplate {
  Role role = Role::User;
  std::string text;
  bool attach = false;
};

struct PromptTemplate {
  std::string id;
  Method method = Method::Direct;
  std::vector<TurnTemplate> turns;
};

namespace detail {

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return out;
}

inline bool mentions_difference(std::string_view text) { return lowercase(text).find("differen") != std::string::npos; }

}  // namespace detail

// Verbatim prompt texts of the two evaluation scenarios.
inline constexpr std::string_view kTemporalStaging =
    "The above are two pictures. Please do not reply now; reply when required later. Is this OK?";
inline constexpr std::string_view kSpatialStaging =
    "Please do not reply now and reply only when required later. Is this OK?";
inline constexpr std::string_view kDirectQuestion = "How do you think of this picture?";
inline constexpr std::string_view kTemporalDifferenceQuestion =
    "These two images depict events that occurred sequentially. What is the difference between the two pictures?";
inline constexpr std::string_view kSpatialDifferenceQuestion =
    "Is there some difference in the carriages? If yes, why is there a difference?";

class TemplateRegistry {
 public:
  TemplateRegistry() = default;

  /**
   * Built-in templates:
   * - temporal_direct / temporal_difference: two sequential pictures;
   * - spatial_direct / spatial_difference: one picture of a partitioned object;
   * - difference_injected: embeds computed differences as JSON lines;
   * - adaptive_n: asks how many of the listed differences matter;
   * - summarize_partition: asks for per-region attribute values.
   */
  static TemplateRegistry with_defaults() {
    TemplateRegistry r;
    const auto user = [](std::string_view text, bool attach = false) {
      return TurnTemplate{Role::User, std::string(text), attach};
    };
    r.put({"temporal_direct", Method::Direct, {user(kTemporalStaging, true), user(kDirectQuestion)}});
    r.put({"temporal_difference", Method::Difference, {user(kTemporalStaging, true), user(kTemporalDifferenceQuestion)}});
    r.put({"spatial_direct", Method::Direct, {user(kSpatialStaging, true), user(kDirectQuestion)}});
    r.put({"spatial_difference", Method::Difference, {user(kSpatialStaging, true), user(kSpatialDifferenceQuestion)}});
    r.put({"difference_injected",
           Method::Difference,
           {user("The following differences were detected between observed states, one JSON object per line:\n"
                 "{{differences}}\n"
                 "What is the difference between the states, and what action should be taken?",
                 true)}});
    r.put({"adaptive_n",
           Method::Difference,
           {user("The following {{count}} differences were detected, one JSON object per line:\n"
                 "{{differences}}\n"
                 "How many of them matter for the next decision? Reply with a single integer.")}});
    r.put({"summarize_partition",
           Method::Difference,
           {user("Summarize the differences across the regions of the following object. Reply with one entry per region, "
                 "entries separated by semicolons, each in the form '<region> <attribute> <number>'.\n"
                 "{{description}}",
                 true)}});
    return r;
  }

  void put(PromptTemplate t) {
    if (t.id.empty()) throw Error(Errc::InvalidTemplate, "template id is empty");
    if (t.turns.empty()) throw Error(Errc::InvalidTemplate, "template '" + t.id + "' has no turns");
    if (t.method == Method::Direct) {
      for (const auto& turn : t.turns) {
        if (detail::mentions_difference(turn.text) || turn.text.find("{{differences}}") != std::string::npos) {
          throw Error(Errc::InvalidTemplate, "direct template '" + t.id + "' mentions differences");
        }
      }
    } else {
      const bool asks = std::any_of(t.turns.begin(), t.turns.end(), [](const TurnTemplate& turn) {
        return detail::mentions_difference(turn.text) || turn.text.find("{{differences}}") != std::string::npos;
      });
      if (!asks) throw Error(Errc::InvalidTemplate, "difference template '" + t.id + "' never asks for differences");
    }
    const auto id = t.id;
    templates_.insert_or_assign(id, std::move(t));
  }

  const PromptTemplate& find(std::string_view id) const {
    const auto it = templates_.find(std::string(id));
    if (it == templates_.end()) throw Error(Errc::UnknownTemplate, "no template named '" + std::string(id) + "'");
    return it->second;
  }

  bool contains(std::string_view id) const { return templates_.contains(std::string(id)); }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

/// What a prompt may refer to. `vars` supplies free-form placeholders such as `description`.
struct PromptContext {
  std::vector<StateRecord> states;
  std::vector<Difference> differences;
  std::vector<RawRef> attachments;
  std::map<std::string, std::string> vars;
};

namespace detail {

inline std::string join_lines(const auto& items) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += '\n';
    out += canonical(to_json(item));
  }
  return out;
}

inline std::string expand(std::string_view text, const std::map<std::string, std::string>& vars,
                          std::string_view template_id) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("{{", pos);
    if (open == std::string_view::npos) break;
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) {
      throw Error(Errc::InvalidTemplate, "unterminated placeholder in template '" + std::string(template_id) + "'");
    }
    out += text.substr(pos, open - pos);
    const auto name = std::string(trim(text.substr(open + 2, close - open - 2)));
    const auto it = vars.find(name);
    if (it == vars.end()) {
      throw Error(Errc::MissingContext, "template '" + std::string(template_id) + "' needs '" + name + "'");
    }
    out += it->second;
    pos = close + 2;
  }
  out += text.substr(pos);
  return out;
}

}  // namespace detail

/**
 * @brief Expands a registered template against a context. Pure: equal inputs
 * give equal PromptSpecs.
 *
 * Placeholders available to every template: `states`, `count`, `n` and the
 * context vars. `differences` is only available to difference-method templates,
 * and a direct-method prompt never contains a serialized difference.
 *
 * A difference-method prompt needs something to compare: at least one
 * Difference, at least two observed items (states plus attachments), or a
 * `description` of an object to be partitioned.
 */
inline PromptSpec build_prompt(Method method, const PromptContext& ctx, std::string_view template_id,
                               const TemplateRegistry& registry) {
  const auto& tpl = registry.find(template_id);
  if (tpl.method != method) {
    throw Error(Errc::UnknownTemplate, "template '" + tpl.id + "' is a " + std::string(to_string(tpl.method)) +
                                           " template, not " + std::string(to_string(method)));
  }
  if (method == Method::Difference) {
    const bool enough = !ctx.differences.empty() || ctx.states.size() + ctx.attachments.size() >= 2 ||
                        ctx.vars.contains("description");
    if (!enough) {
      throw Error(Errc::MissingContext, "difference prompt needs a difference, two observations or a description");
    }
  }

  auto vars = ctx.vars;
  vars["states"] = detail::join_lines(ctx.states);
  vars["count"] = std::to_string(ctx.differences.size());
  vars.try_emplace("n", std::to_string(ctx.differences.size()));
  if (method == Method::Difference) {
    vars["differences"] = detail::join_lines(ctx.differences);
  } else {
    vars.erase("differences");
  }

  PromptSpec spec{method, {}, tpl.id};
  for (const auto& t : tpl.turns) {
    Turn turn{t.role, detail::expand(t.text, vars, tpl.id), {}};
    if (t.attach) turn.attachments = ctx.attachments;
    spec.turns.push_back(std::move(turn));
  }

  if (method == Method::Direct) {
    for (const auto& d : ctx.differences) {
      const auto serialized = canonical(to_json(d));
      for (const auto& turn : spec.turns) {
        if (turn.text.find(serialized) != std::string::npos) {
          throw Error(Errc::InvalidTemplate, "direct prompt would leak a computed difference");
        }
      }
    }
  }
  return spec;
}

/// First positive integer in a reply to the adaptive_n template.
inline std::size_t parse_adaptive_n(std::string_view reply) {
  for (std::size_t i = 0; i < reply.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(reply[i]))) continue;
    std::size_t n = 0;
    const auto [end, ec] = std::from_chars(reply.data() + i, reply.data() + reply.size(), n);
    if (ec == std::errc() && n >= 1) return n;
    i = std::size_t(end - reply.data());
  }
  throw Error(Errc::UnparseableSummary, "reply names no positive count");
}

// ---------------------------------------------------------------------------
// Backends

struct Completion {
  std::string text;
  Json usage = Json::object();
  int retries = 0;
};

/// Receives one JSON object per request/response exchange when tracing is on.
using TraceSink = std::function<void(const Json&)>;

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  /// Runs the prompt and returns the reply to its final turn. `trial` tags
  /// repeated runs of the same prompt.
  virtual Completion complete(const PromptSpec& prompt, std::size_t trial) = 0;

  void set_trace(TraceSink sink) { trace_ = std::move(sink); }

 protected:
  void trace(const Json& event) const {
    if (trace_) trace_(event);
  }

 private:
  TraceSink trace_;
};

inline Completion complete(const PromptSpec& prompt, ChatBackend& backend, std::size_t trial = 0) {
  return backend.complete(prompt, trial);
}

/**
 * @brief Replays scripted replies keyed by (template id, trial index).
 *
 * An entry without a trial index answers every trial of its template that has
 * no specific entry. Lookups are read-only and safe from concurrent trials.
 *
 * Script file: JSON lines `{"template": ..., "trial": ..., "response": ...}`.
 */
class MockBackend : public ChatBackend {
 public:
  MockBackend() = default;

  void add(std::string template_id, std::optional<std::size_t> trial, std::string response) {
    script_[{std::move(template_id), trial}] = std::move(response);
  }

  static MockBackend from_jsonl(std::istream& in) {
    MockBackend mock;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      const auto j = parse_json(line);
      if (!j.is_object() || !j.contains("template") || !j["template"].is_string() || !j.contains("response") ||
          !j["response"].is_string()) {
        throw Error(Errc::ConfigError, "mock script line " + std::to_string(line_no) + " needs template and response");
      }
      std::optional<std::size_t> trial;
      if (j.contains("trial") && !j["trial"].is_null()) {
        if (!j["trial"].is_number_unsigned()) {
          throw Error(Errc::ConfigError, "mock script line " + std::to_string(line_no) + ": bad trial");
        }
        trial = j["trial"].get<std::size_t>();
      }
      mock.add(j["template"].get<std::string>(), trial, j["response"].get<std::string>());
    }
    return mock;
  }

  static MockBackend from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::ConfigError, "cannot read mock script " + path.string());
    return from_jsonl(in);
  }

  Completion complete(const PromptSpec& prompt, std::size_t trial) override {
    auto it = script_.find({prompt.template_id, trial});
    if (it == script_.end()) it = script_.find({prompt.template_id, std::nullopt});
    if (it == script_.end()) {
      throw Error(Errc::ScriptMiss,
                  "no scripted reply for template '" + prompt.template_id + "' trial " + std::to_string(trial));
    }
    Completion c;
    c.text = it->second;
    c.usage["turns"] = prompt.turns.size();
    c.usage["response_chars"] = c.text.size();
    Json event;
    event["backend"] = "mock";
    event["template_id"] = prompt.template_id;
    event["trial"] = trial;
    event["request"] = to_json(prompt);
    event["response"] = c.text;
    trace(event);
    return c;
  }

 private:
  std::map<std::pair<std::string, std::optional<std::size_t>>, std::string> script_;
};

// ---------------------------------------------------------------------------
// Summarized spatial partition

struct AttributeSpec {
  std::string dim;
  std::optional<std::string> unit;
};

/// Maps attribute words in a reply (matched case-insensitively) to feature dimensions.
struct PartitionSchema {
  std::map<std::string, AttributeSpec> attributes;
};

/**
 * Parses entries of the form `<region words> <attribute> <number> [<attribute>
 * <number> ...]`, separated by semicolons or newlines. Every entry must parse;
 * a reply with no entries is rejected.
 */
inline std::vector<StateRecord> parse_partition_summary(std::string_view reply, const PartitionSchema& schema) {
  std::map<std::string, const AttributeSpec*> attrs;
  for (const auto& [word, spec] : schema.attributes) attrs[detail::lowercase(word)] = &spec;

  std::string normalized(reply);
  std::replace(normalized.begin(), normalized.end(), '\n', ';');
  std::vector<StateRecord> out;
  std::set<std::string> seen;
  for (const auto& entry : detail::split_list(normalized, ';')) {
    std::istringstream tokens(entry);
    std::vector<std::string> words;
    for (std::string w; tokens >> w;) {
      while (!w.empty() && (w.back() == '.' || w.back() == ',' || w.back() == ':')) w.pop_back();
      if (!w.empty()) words.push_back(std::move(w));
    }
    std::size_t i = 0;
    std::string region;
    while (i < words.size() && !attrs.contains(detail::lowercase(words[i]))) {
      if (!region.empty()) region += ' ';
      region += words[i++];
    }
    if (region.empty() || i == words.size()) {
      throw Error(Errc::UnparseableSummary, "entry '" + entry + "' has no region or no known attribute");
    }
    std::vector<Dim> dims;
    while (i < words.size()) {
      const auto it = attrs.find(detail::lowercase(words[i]));
      if (it == attrs.end() || i + 1 >= words.size()) {
        throw Error(Errc::UnparseableSummary, "entry '" + entry + "': expected '<attribute> <number>'");
      }
      const auto& num = words[i + 1];
      double value = 0.0;
      const auto [end, ec] = std::from_chars(num.data(), num.data() + num.size(), value);
      if (ec != std::errc() || end != num.data() + num.size()) {
        throw Error(Errc::UnparseableSummary, "entry '" + entry + "': '" + num + "' is not a number");
      }
      dims.push_back({it->second->dim, value, it->second->unit});
      i += 2;
    }
    if (!seen.insert(region).second) throw Error(Errc::UnparseableSummary, "region '" + region + "' listed twice");
    StateRecord s;
    s.id = "region:" + region;
    s.region_label = region;
    s.extractor_id = "llm_summary";
    s.raw_ref = RawRef::inline_bytes(entry);
    try {
      s.features = FeatureVector(std::move(dims));
    } catch (const Error& e) {
      throw Error(Errc::UnparseableSummary, "entry '" + entry + "': " + e.detail());
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error(Errc::UnparseableSummary, "reply contains no region entries");
  return out;
}

/// Asks the backend to summarize an object's regions and parses the reply into region-labeled states.
inline std::vector<StateRecord> summarize_partition(std::string_view object_description, ChatBackend& backend,
                                                    const PartitionSchema& schema, const TemplateRegistry& registry,
                                                    std::string_view template_id = "summarize_partition",
                                                    std::vector<RawRef> attachments = {}) {
  PromptContext ctx;
  ctx.vars["description"] = std::string(object_description);
  ctx.attachments = std::move(attachments);
  const auto prompt = build_prompt(Method::Difference, ctx, template_id, registry);
  return parse_partition_summary(backend.complete(prompt, 0).text, schema);
}

}  // namespace diffreason
