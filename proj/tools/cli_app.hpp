#pragma once

// Command-line front end. Every subcommand parses its inputs, delegates to one
// library operation and prints the canonical serialization of the result.
//
// Exit codes: 0 success, 1 operation error (JSON on stderr), 2 usage error.

#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "diffreason/diffreason.hpp"

namespace diffreason::cli {

namespace detail {

inline std::string read_all(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::UnparseablePayload, "cannot read " + path);
  return read_all(in);
}

/// Contents of `path`, or of `in` when the path is empty or "-".
inline std::string read_input(const std::string& path, std::istream& in) {
  return path.empty() || path == "-" ? read_all(in) : read_file(path);
}

inline std::vector<Json> json_lines(const std::string& text) {
  std::vector<Json> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!diffreason::detail::trim(line).empty()) out.push_back(parse_json(line));
  }
  return out;
}

inline std::vector<StateRecord> states_from(const std::string& text) {
  std::vector<StateRecord> out;
  for (const auto& j : json_lines(text)) out.push_back(state_from_json(j));
  return out;
}

inline StateRecord single_state(const std::string& text) {
  auto states = states_from(text);
  if (states.size() != 1) throw Error(Errc::UnparseablePayload, "expected exactly one state, got " + std::to_string(states.size()));
  return std::move(states.front());
}

inline std::vector<EvidenceRecord> evidence_from(const std::string& text) {
  std::vector<EvidenceRecord> out;
  for (const auto& j : json_lines(text)) out.push_back(evidence_from_json(j));
  return out;
}

inline std::vector<Difference> differences_from(const std::string& text) {
  std::vector<Difference> out;
  for (const auto& j : json_lines(text)) out.push_back(difference_from_json(j));
  return out;
}

inline Label label_or_throw(const std::string& s) {
  const auto l = parse_label(s);
  if (!l) throw Error(Errc::InvalidArgument, "unknown label '" + s + "'");
  return *l;
}

inline ReferenceKind strategy_or_throw(const std::string& s) {
  const auto k = parse_reference_kind(s);
  if (!k) throw Error(Errc::InvalidArgument, "unknown reference strategy '" + s + "'");
  return *k;
}

}  // namespace detail

/// Runs the CLI with the given argument vector (argv[0] included).
inline int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Difference-guided reasoning: state differences, anomaly detection, history and prompt evaluation",
               "diffreason"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  std::string config_path;
  app.add_option("--config", config_path, "Run configuration file (TOML)")->check(CLI::ExistingFile);

  // Shared option storage; each subcommand binds what it needs.
  std::string in_path, norm_name, weights_id = "unit", history_path, strategy = "latest", label = "unlabeled";
  std::string state_path, evidence_path, prev_path, prev_evidence_path, id, mode, metric;
  std::size_t top_n = 0;
  bool latest_only = false, variability = false, estimate = false, current_only = false, raw_bytes = false;
  std::optional<double> theta, eta;

  const auto add_norm = [&](CLI::App* sub) {
    sub->add_option("--norm", norm_name, "Norm for magnitudes: l1, l2 or linf (default from config)")
        ->check(CLI::IsMember({"l1", "l2", "linf"}));
  };
  const auto add_in = [&](CLI::App* sub, const std::string& what) {
    sub->add_option("--in", in_path, what + " (JSON lines; default standard input)");
  };
  const auto add_history = [&](CLI::App* sub) {
    sub->add_option("--history", history_path, "History file (default from config)");
  };

  // diff ---------------------------------------------------------------------
  auto* diff = app.add_subcommand("diff", "Compute differences between states");
  diff->require_subcommand(1);
  auto* diff_temporal = diff->add_subcommand("temporal", "Later-minus-earlier deltas between consecutive states");
  add_in(diff_temporal, "Time-ordered states");
  add_norm(diff_temporal);
  diff_temporal->add_flag("--latest", latest_only, "Only the delta between the last two states");
  auto* diff_latest = diff->add_subcommand("latest", "Delta between the last two states of a stream");
  add_in(diff_latest, "Time-ordered states");
  add_norm(diff_latest);
  auto* diff_spatial = diff->add_subcommand("spatial", "Pairwise differences between region-labeled sub-objects");
  add_in(diff_spatial, "Region-labeled states");
  add_norm(diff_spatial);
  diff_spatial->add_flag("--variability", variability, "Print the mean pairwise magnitude instead");
  auto* diff_pair = diff->add_subcommand("pair", "First-minus-second difference of exactly two states");
  add_in(diff_pair, "Two states");
  add_norm(diff_pair);
  auto* diff_topn = diff->add_subcommand("topn", "Select the n differences with the largest total impact");
  auto* topn = app.add_subcommand("topn", "Select the n differences with the largest total impact");
  for (auto* sub : {diff_topn, topn}) {
    add_in(sub, "Differences");
    sub->add_option("--n", top_n, "Number of differences to keep")->required()->check(CLI::PositiveNumber);
    sub->add_option("--weights", weights_id, "Weight profile id (default unit)");
  }
  auto* diff_internal = diff->add_subcommand("internal", "Current-minus-previous difference of two states");
  auto* diff_external = diff->add_subcommand("external", "Current-minus-previous difference of evidence-fused states");
  for (auto* sub : {diff_internal, diff_external}) {
    sub->add_option("--state", state_path, "Current state file")->required();
    sub->add_option("--prev", prev_path, "Previous state file")->required();
    add_norm(sub);
  }
  diff_external->add_option("--evidence", evidence_path, "Evidence at the current instant (JSON lines)");
  diff_external->add_option("--prev-evidence", prev_evidence_path, "Evidence at the previous instant (JSON lines)");

  // detect -------------------------------------------------------------------
  auto* detect = app.add_subcommand("detect", "Classify differences or states as normal or abnormal");
  detect->add_option("--mode", mode, "threshold (differences in) or history (states in)")
      ->required()
      ->check(CLI::IsMember({"threshold", "history"}));
  detect->add_option("--theta", theta, "Magnitude threshold (default from config)");
  detect->add_flag("--estimate", estimate, "Estimate theta from normal history as mean + k_sigma * std");
  detect->add_option("--eta", eta, "History distance tolerance (default from config)");
  detect->add_option("--metric", metric, "History distance metric: l1, l2 or linf")
      ->check(CLI::IsMember({"l1", "l2", "linf"}));
  add_in(detect, "Differences (threshold) or states (history)");
  add_history(detect);

  // history ------------------------------------------------------------------
  auto* history = app.add_subcommand("history", "Append-only state history");
  history->require_subcommand(1);
  auto* history_add = history->add_subcommand("add", "Append one state with a label");
  add_in(history_add, "State to append");
  history_add->add_option("--label", label, "normal, abnormal or unlabeled")
      ->check(CLI::IsMember({"normal", "abnormal", "unlabeled"}));
  add_history(history_add);
  auto* history_relabel = history->add_subcommand("relabel", "Append a record superseding a state's label");
  history_relabel->add_option("--id", id, "State id")->required();
  history_relabel->add_option("--label", label, "normal, abnormal or unlabeled")
      ->required()
      ->check(CLI::IsMember({"normal", "abnormal", "unlabeled"}));
  add_history(history_relabel);
  auto* history_list = history->add_subcommand("list", "Print stored records in append order");
  history_list->add_flag("--current", current_only, "One record per state with its current label");
  add_history(history_list);
  auto* history_ref = history->add_subcommand("ref", "Print the reference state");
  auto* history_compare = history->add_subcommand("compare", "Difference of a state from the reference state");
  for (auto* sub : {history_ref, history_compare}) {
    sub->add_option("--strategy", strategy, "latest, mean or medoid")->check(CLI::IsMember({"latest", "mean", "medoid"}));
    add_history(sub);
  }
  add_in(history_compare, "Current state");
  add_norm(history_compare);
  auto* history_raw = history->add_subcommand("raw", "Print the stored raw payload of a state");
  history_raw->add_option("--id", id, "State id")->required();
  history_raw->add_flag("--bytes", raw_bytes, "Write inline payload bytes instead of the JSON locator");
  add_history(history_raw);

  // fuse ---------------------------------------------------------------------
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse a state with evidence observed at the same instant");
  fuse_cmd->add_option("--state", state_path, "State file")->required();
  fuse_cmd->add_option("--evidence", evidence_path, "Evidence (JSON lines)");

  // extract ------------------------------------------------------------------
  std::string extractor_id = "passthrough", payload_path, region;
  std::optional<double> timestamp;
  auto* extract_cmd = app.add_subcommand("extract", "Map a raw payload to features with a configured extractor");
  extract_cmd->add_option("--extractor", extractor_id, "Extractor id (default passthrough)");
  extract_cmd->add_option("--payload", payload_path, "Payload file (default standard input)");
  extract_cmd->add_option("--id", id, "Emit a state with this id instead of a bare feature vector");
  extract_cmd->add_option("--timestamp", timestamp, "State timestamp");
  extract_cmd->add_option("--region", region, "State region label");

  // prompt -------------------------------------------------------------------
  std::string method_name, template_id, diffs_path, states_path;
  std::vector<std::string> attachments, vars;
  auto* prompt_cmd = app.add_subcommand("prompt", "Expand a prompt template");
  prompt_cmd->add_option("--method", method_name, "direct or difference")
      ->required()
      ->check(CLI::IsMember({"direct", "difference"}));
  prompt_cmd->add_option("--template", template_id, "Template id")->required();
  prompt_cmd->add_option("--diffs", diffs_path, "Differences to include (JSON lines)");
  prompt_cmd->add_option("--states", states_path, "States to include (JSON lines)");
  prompt_cmd->add_option("--attach", attachments, "Attachment URI (repeatable)");
  prompt_cmd->add_option("--var", vars, "Template variable key=value (repeatable)");

  // partition ----------------------------------------------------------------
  std::string description, backend_kind;
  auto* partition_cmd = app.add_subcommand("partition", "Ask the backend for a per-region summary and parse it into states");
  partition_cmd->add_option("--description", description, "Object description")->required();
  partition_cmd->add_option("--backend", backend_kind, "mock or remote (default from config)")
      ->check(CLI::IsMember({"mock", "remote"}));
  partition_cmd->add_option("--template", template_id, "Template id (default summarize_partition)");
  partition_cmd->add_option("--attach", attachments, "Attachment URI (repeatable)");

  // eval ---------------------------------------------------------------------
  std::string scenario_path, trail_path, csv_out, trace_path;
  std::optional<double> alpha;
  bool csv = false;
  std::size_t parallel = 1;
  auto* eval = app.add_subcommand("eval", "Compare direct and difference prompting over repeated trials");
  eval->require_subcommand(1);
  auto* eval_run = eval->add_subcommand("run", "Run a scenario and print the report");
  eval_run->add_option("--scenario", scenario_path, "Scenario file (TOML)")->required()->check(CLI::ExistingFile);
  eval_run->add_option("--backend", backend_kind, "mock or remote (default from scenario/config)")
      ->check(CLI::IsMember({"mock", "remote"}));
  eval_run->add_option("--trail", trail_path, "Trial record file (default <scenario name>.trail.jsonl)");
  eval_run->add_option("--parallel", parallel, "Concurrent trials (default 1)")->check(CLI::PositiveNumber);
  eval_run->add_option("--trace", trace_path, "Log backend requests and responses as JSON lines");
  auto* eval_report = eval->add_subcommand("report", "Recompute the report from a trial record file");
  eval_report->add_option("--trail", trail_path, "Trial record file")->required()->check(CLI::ExistingFile);
  eval_report->add_option("--alpha", alpha, "Significance level (default from config)");
  for (auto* sub : {eval_run, eval_report}) {
    sub->add_flag("--csv", csv, "Print method,trial,similarity CSV instead of the JSON report");
    sub->add_option("--csv-out", csv_out, "Also write the CSV to this file");
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  const auto emit = [&](const Json& j) { out << canonical(j) << '\n'; };

  try {
    const auto config = load_config(config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path));
    const Norm norm = norm_name.empty() ? config.norm : parse_norm_or_throw(norm_name);
    DiffEngine engine(norm);
    const auto history_file = history_path.empty() ? config.history : std::filesystem::path(history_path);
    const auto input = [&] { return detail::read_input(in_path, in); };

    if (diff_temporal->parsed() || diff_latest->parsed()) {
      const auto states = detail::states_from(input());
      if (latest_only || diff_latest->parsed()) {
        emit(to_json(engine.latest_difference(states)));
      } else {
        for (const auto& d : engine.consecutive_deltas(states)) emit(to_json(d));
      }
    } else if (diff_spatial->parsed()) {
      const auto states = detail::states_from(input());
      if (variability) {
        Json j;
        j["norm"] = std::string(to_string(norm));
        j["m"] = states.size();
        j["variability"] = engine.spatial_variability(states);
        emit(j);
      } else {
        for (const auto& d : engine.pairwise_spatial_differences(states)) emit(to_json(d));
      }
    } else if (diff_pair->parsed()) {
      const auto states = detail::states_from(input());
      if (states.size() != 2) throw Error(Errc::InvalidArgument, "diff pair needs exactly two states");
      emit(to_json(engine.compute_difference(states[0], states[1])));
    } else if (diff_topn->parsed() || topn->parsed()) {
      const auto diffs = detail::differences_from(input());
      for (const auto& d : select_main_differences(diffs, top_n, config.weight_profile(weights_id))) emit(to_json(d));
    } else if (diff_internal->parsed()) {
      const auto now = detail::single_state(detail::read_file(state_path));
      const auto prev = detail::single_state(detail::read_file(prev_path));
      emit(to_json(internal_difference(engine, now, prev)));
    } else if (diff_external->parsed()) {
      const auto now = detail::single_state(detail::read_file(state_path));
      const auto prev = detail::single_state(detail::read_file(prev_path));
      const auto e_now = evidence_path.empty() ? std::vector<EvidenceRecord>{} : detail::evidence_from(detail::read_file(evidence_path));
      const auto e_prev = prev_evidence_path.empty() ? std::vector<EvidenceRecord>{}
                                                     : detail::evidence_from(detail::read_file(prev_evidence_path));
      emit(to_json(external_difference(engine, now, e_now, prev, e_prev)));
    } else if (detect->parsed()) {
      if (mode == "threshold") {
        double bound = theta.value_or(config.thresholds.theta);
        if (estimate) {
          const auto store = HistoryStore::open(history_file, HistoryStore::Mode::ReadOnly);
          bound = estimate_threshold(store, norm, config.thresholds.k_sigma);
        }
        for (const auto& d : detail::differences_from(input())) emit(to_json(detect_threshold(d, bound)));
      } else {
        const Norm m = metric.empty() ? norm : parse_norm_or_throw(metric);
        const auto store = HistoryStore::open(history_file, HistoryStore::Mode::ReadOnly);
        const auto rows = store.current();
        for (const auto& s : detail::states_from(input())) {
          emit(to_json(detect_history(s, rows, eta.value_or(config.thresholds.eta), m)));
        }
      }
    } else if (history_add->parsed()) {
      auto store = HistoryStore::open(history_file, HistoryStore::Mode::ReadWrite);
      Json j;
      j["appended_at"] = store.append(detail::single_state(input()), detail::label_or_throw(label));
      emit(j);
    } else if (history_relabel->parsed()) {
      auto store = HistoryStore::open(history_file, HistoryStore::Mode::ReadWrite);
      Json j;
      j["appended_at"] = store.relabel(id, detail::label_or_throw(label));
      emit(j);
    } else if (history_list->parsed()) {
      const auto store = HistoryStore::open(history_file, HistoryStore::Mode::ReadOnly);
      if (current_only) {
        for (const auto& r : store.current()) emit(to_json(r));
      } else {
        for (const auto& r : store.records()) emit(to_json(r));
      }
    } else if (history_ref->parsed()) {
      const auto store = HistoryStore::open(history_file, HistoryStore::Mode::ReadOnly);
      emit(to_json(select_reference(store, detail::strategy_or_throw(strategy))));
    } else if (history_compare->parsed()) {
      const auto store = HistoryStore::open(history_file, HistoryStore::Mode::ReadOnly);
      const auto current = detail::single_state(input());
      emit(to_json(compare_with_history(engine, current, store, detail::strategy_or_throw(strategy))));
    } else if (history_raw->parsed()) {
      const auto store = HistoryStore::open(history_file, HistoryStore::Mode::ReadOnly);
      const auto raw = store.raw_lookup(id);
      if (raw_bytes && raw.kind == RawRef::Kind::Inline) {
        out << raw.data;
      } else {
        emit(to_json(raw));
      }
    } else if (fuse_cmd->parsed()) {
      const auto state = detail::single_state(detail::read_file(state_path));
      const auto ev = evidence_path.empty() ? std::vector<EvidenceRecord>{} : detail::evidence_from(detail::read_file(evidence_path));
      emit(to_json(fuse(state, ev)));
    } else if (extract_cmd->parsed()) {
      const auto payload = detail::read_input(payload_path, in);
      auto features = extract(payload, config.extractors, extractor_id);
      if (id.empty()) {
        emit(to_json(features));
      } else {
        StateRecord s;
        s.id = id;
        s.timestamp = timestamp;
        if (!region.empty()) s.region_label = region;
        s.extractor_id = extractor_id;
        s.raw_ref = RawRef::inline_bytes(payload);
        s.features = std::move(features);
        validate_state(s);
        emit(to_json(s));
      }
    } else if (prompt_cmd->parsed()) {
      PromptContext ctx;
      if (!diffs_path.empty()) ctx.differences = detail::differences_from(detail::read_file(diffs_path));
      if (!states_path.empty()) ctx.states = detail::states_from(detail::read_file(states_path));
      for (const auto& a : attachments) ctx.attachments.push_back(RawRef::uri(a));
      for (const auto& kv : vars) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error(Errc::InvalidArgument, "--var expects key=value, got '" + kv + "'");
        ctx.vars[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      emit(to_json(build_prompt(*parse_method(method_name), ctx, template_id, config.templates)));
    } else if (partition_cmd->parsed()) {
      auto spec = config.backend;
      if (!backend_kind.empty()) spec.kind = backend_kind == "remote" ? BackendKind::Remote : BackendKind::Mock;
      auto backend = make_backend(spec);
      std::vector<RawRef> refs;
      for (const auto& a : attachments) refs.push_back(RawRef::uri(a));
      const auto states = summarize_partition(description, *backend, config.partition, config.templates,
                                              template_id.empty() ? "summarize_partition" : template_id, refs);
      for (const auto& s : states) emit(to_json(s));
    } else if (eval_run->parsed()) {
      auto cfg = config;
      const auto scenario = load_scenario(scenario_path, cfg);
      if (!backend_kind.empty()) cfg.backend.kind = backend_kind == "remote" ? BackendKind::Remote : BackendKind::Mock;
      auto backend = make_backend(cfg.backend);
      auto provider = make_provider(cfg.provider);

      std::ofstream trace_file;
      std::mutex trace_mutex;
      if (!trace_path.empty()) {
        trace_file.open(trace_path, std::ios::binary | std::ios::trunc);
        if (!trace_file) throw Error(Errc::StorageFailure, "cannot write " + trace_path);
        backend->set_trace([&](const Json& event) {
          std::lock_guard lock(trace_mutex);
          trace_file << canonical(event) << '\n';
          trace_file.flush();
        });
      }

      const auto trail_file = trail_path.empty() ? scenario.name + ".trail.jsonl" : trail_path;
      std::ofstream trail(trail_file, std::ios::binary | std::ios::trunc);
      if (!trail) throw Error(Errc::StorageFailure, "cannot write " + trail_file);
      const auto results = run_trials(
          scenario, cfg.templates, *backend, *provider,
          [&](const TrialResult& r) {
            trail << canonical(to_json(r)) << '\n';
            trail.flush();
          },
          parallel);
      const auto report = make_report(results, scenario.alpha);
      if (!csv_out.empty()) {
        std::ofstream f(csv_out, std::ios::binary | std::ios::trunc);
        f << to_csv(results);
      }
      if (csv) {
        out << to_csv(results);
      } else {
        emit(to_json(report));
      }
    } else if (eval_report->parsed()) {
      std::vector<TrialResult> results;
      for (const auto& j : detail::json_lines(detail::read_file(trail_path))) results.push_back(trial_result_from_json(j));
      const auto report = make_report(results, alpha.value_or(config.alpha));
      if (!csv_out.empty()) {
        std::ofstream f(csv_out, std::ios::binary | std::ios::trunc);
        f << to_csv(results);
      }
      if (csv) {
        out << to_csv(results);
      } else {
        emit(to_json(report));
      }
    }
  } catch (const TrialError& e) {
    Json j;
    j["error"] = std::string(e.name());
    j["message"] = e.detail();
    j["method"] = std::string(to_string(e.method()));
    j["trial_index"] = e.trial_index();
    err << canonical(j) << '\n';
    return 1;
  } catch (const Error& e) {
    Json j;
    j["error"] = std::string(e.name());
    j["message"] = e.detail();
    err << canonical(j) << '\n';
    return 1;
  } catch (const std::exception& e) {
    Json j;
    j["error"] = "InternalError";
    j["message"] = e.what();
    err << canonical(j) << '\n';
    return 1;
  }
  out.flush();
  return 0;
}

}  // namespace diffreason::cli
