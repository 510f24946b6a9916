#pragma once

/**
 * @file eval_harness.hpp
 *
 * @brief Repeated-trial comparison of the direct and difference prompting
 * methods: each response is embedded, scored by cosine similarity against a
 * reference statement, and the two methods' similarity samples are compared
 * with Welch's t-test.
 *
 * Trial indices are 0-based in records and rendered 1-based in reports.
 */

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "diffreason/error.hpp"
#include "diffreason/feature_space.hpp"
#include "diffreason/llm_gateway.hpp"
#include "diffreason/statistics.hpp"

namespace diffreason {

// ---------------------------------------------------------------------------
// Embedding providers

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<double> embed(std::string_view text) = 0;
  virtual std::size_t dimension() const = 0;
};

/**
 * @brief Signed feature hashing of lowercase alphanumeric tokens.
 *
 * Each token is hashed with 64-bit FNV-1a; the hash selects a bucket and its
 * top bit a sign. The embedding is a pure function of the text.
 */
class HashEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(std::size_t dimension = 256) : dimension_(dimension) {
    if (dimension_ == 0) throw Error(Errc::ConfigError, "embedding dimension must be positive");
  }

  std::vector<double> embed(std::string_view text) override {
    std::vector<double> v(dimension_, 0.0);
    std::string token;
    const auto flush = [&] {
      if (token.empty()) return;
      std::uint64_t h = 14695981039346656037ull;
      for (unsigned char c : token) {
        h ^= c;
        h *= 1099511628211ull;
      }
      v[h % dimension_] += (h >> 63) ? -1.0 : 1.0;
      token.clear();
    };
    for (unsigned char c : text) {
      if (std::isalnum(c)) {
        token += char(std::tolower(c));
      } else {
        flush();
      }
    }
    flush();
    return v;
  }

  std::size_t dimension() const override { return dimension_; }

 private:
  std::size_t dimension_;
};

/**
 * @brief Looks embeddings up by exact text. Used to replay fixed similarity
 * series; a text missing from the table is an EmbeddingMiss.
 *
 * Table file: JSON lines `{"text": ..., "embedding": [...]}`.
 */
class TableEmbeddingProvider : public EmbeddingProvider {
 public:
  void add(std::string text, std::vector<double> embedding) {
    if (dimension_ == 0) dimension_ = embedding.size();
    if (embedding.size() != dimension_ || dimension_ == 0) {
      throw Error(Errc::DimensionMismatch, "embedding for '" + text + "' has the wrong size");
    }
    table_.insert_or_assign(std::move(text), std::move(embedding));
  }

  static TableEmbeddingProvider from_jsonl(std::istream& in) {
    TableEmbeddingProvider p;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      const auto j = parse_json(line);
      if (!j.is_object() || !j.contains("text") || !j["text"].is_string() || !j.contains("embedding") ||
          !j["embedding"].is_array()) {
        throw Error(Errc::ConfigError, "embedding table line " + std::to_string(line_no) + " needs text and embedding");
      }
      std::vector<double> e;
      for (const auto& x : j["embedding"]) {
        if (!x.is_number()) throw Error(Errc::ConfigError, "embedding table line " + std::to_string(line_no));
        e.push_back(x.get<double>());
      }
      p.add(j["text"].get<std::string>(), std::move(e));
    }
    return p;
  }

  static TableEmbeddingProvider from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::ConfigError, "cannot read embedding table " + path.string());
    return from_jsonl(in);
  }

  std::vector<double> embed(std::string_view text) override {
    const auto it = table_.find(std::string(text));
    if (it == table_.end()) throw Error(Errc::EmbeddingMiss, "no embedding for text '" + std::string(text) + "'");
    return it->second;
  }

  std::size_t dimension() const override { return dimension_; }

 private:
  std::unordered_map<std::string, std::vector<double>> table_;
  std::size_t dimension_ = 0;
};

// ---------------------------------------------------------------------------
// Trials

struct MethodPlan {
  Method method = Method::Direct;
  std::string template_id;
};

struct Scenario {
  std::string name;
  std::string reference;
  std::size_t trials = 20;
  double alpha = 0.05;
  std::vector<MethodPlan> methods;
  PromptContext context;
};

struct TrialResult {
  Method method = Method::Direct;
  std::size_t trial_index = 0;
  std::string response_text;
  std::vector<double> embedding;
  double similarity = 0.0;

  friend bool operator==(const TrialResult&, const TrialResult&) = default;
};

/// Key order: method, trial_index, similarity, response, embedding.
inline Json to_json(const TrialResult& r) {
  Json j;
  j["method"] = std::string(to_string(r.method));
  j["trial_index"] = r.trial_index;
  j["similarity"] = r.similarity;
  j["response"] = r.response_text;
  j["embedding"] = r.embedding;
  return j;
}

inline TrialResult trial_result_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("method") || !j["method"].is_string() || !j.contains("trial_index") ||
      !j["trial_index"].is_number_unsigned() || !j.contains("similarity") || !j["similarity"].is_number()) {
    throw Error(Errc::UnparseablePayload, "trial record needs method, trial_index and similarity");
  }
  TrialResult r;
  const auto m = parse_method(j["method"].get<std::string>());
  if (!m) throw Error(Errc::UnparseablePayload, "unknown method in trial record");
  r.method = *m;
  r.trial_index = j["trial_index"].get<std::size_t>();
  r.similarity = j["similarity"].get<double>();
  if (j.contains("response") && j["response"].is_string()) r.response_text = j["response"].get<std::string>();
  if (j.contains("embedding") && j["embedding"].is_array()) r.embedding = j["embedding"].get<std::vector<double>>();
  return r;
}

/// An error raised while running one trial, tagged with where it happened.
class TrialError : public Error {
 public:
  TrialError(const Error& cause, Method method, std::size_t trial_index)
      : Error(cause.code(), std::string(to_string(method)) + " trial " + std::to_string(trial_index) + ": " +
                                cause.detail()),
        method_(method),
        trial_index_(trial_index) {}

  Method method() const noexcept { return method_; }
  std::size_t trial_index() const noexcept { return trial_index_; }

 private:
  Method method_;
  std::size_t trial_index_;
};

/// Called once per completed trial, in (method plan, trial index) order.
using TrialSink = std::function<void(const TrialResult&)>;

/**
 * @brief Runs `scenario.trials` trials of every method plan.
 *
 * The reference statement is embedded once per run. With `parallel > 1`,
 * trials run concurrently in batches of that size; the backend and provider
 * must then tolerate concurrent calls. Results reach `sink` in index order.
 * On failure, the results preceding the failing trial are delivered to `sink`
 * and a TrialError naming the trial is thrown.
 */
inline std::vector<TrialResult> run_trials(const Scenario& scenario, const TemplateRegistry& registry,
                                           ChatBackend& backend, EmbeddingProvider& provider,
                                           const TrialSink& sink = {}, std::size_t parallel = 1) {
  if (scenario.reference.empty()) throw Error(Errc::ConfigError, "scenario has no reference statement");
  if (scenario.methods.empty()) throw Error(Errc::MissingMethod, "scenario lists no methods");
  if (scenario.trials == 0) throw Error(Errc::InvalidArgument, "trial count must be positive");
  parallel = std::max<std::size_t>(parallel, 1);

  const auto reference = provider.embed(scenario.reference);
  std::vector<PromptSpec> prompts;
  for (const auto& plan : scenario.methods) {
    prompts.push_back(build_prompt(plan.method, scenario.context, plan.template_id, registry));
  }

  struct Job {
    std::size_t plan;
    std::size_t trial;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < scenario.methods.size(); ++p) {
    for (std::size_t t = 0; t < scenario.trials; ++t) jobs.push_back({p, t});
  }

  const auto run_one = [&](const Job& job) -> TrialResult {
    const auto method = scenario.methods[job.plan].method;
    try {
      TrialResult r;
      r.method = method;
      r.trial_index = job.trial;
      r.response_text = backend.complete(prompts[job.plan], job.trial).text;
      r.embedding = provider.embed(r.response_text);
      r.similarity = cosine_similarity(r.embedding, reference);
      return r;
    } catch (const Error& e) {
      throw TrialError(e, method, job.trial);
    }
  };

  std::vector<TrialResult> results;
  results.reserve(jobs.size());
  for (std::size_t start = 0; start < jobs.size(); start += parallel) {
    const auto end = std::min(jobs.size(), start + parallel);
    std::vector<std::future<TrialResult>> batch;
    if (parallel == 1) {
      std::promise<TrialResult> done;
      try {
        done.set_value(run_one(jobs[start]));
      } catch (...) {
        done.set_exception(std::current_exception());
      }
      batch.push_back(done.get_future());
    } else {
      for (auto i = start; i < end; ++i) batch.push_back(std::async(std::launch::async, run_one, jobs[i]));
    }
    std::exception_ptr failure;
    for (auto& f : batch) {
      try {
        auto r = f.get();
        if (!failure) {
          if (sink) sink(r);
          results.push_back(std::move(r));
        }
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  return results;
}

// ---------------------------------------------------------------------------
// Report

struct MethodSummary {
  Method method = Method::Direct;
  std::vector<double> samples;  // ordered by trial index
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t argmin = 0;  // 0-based trial index
  std::size_t argmax = 0;
};

struct EvalReport {
  MethodSummary difference;
  MethodSummary direct;
  WelchResult welch;  // difference sample first, so t > 0 favors the difference method
  double alpha = 0.05;
};

namespace detail {

inline MethodSummary summarize(Method method, std::span<const TrialResult> results) {
  std::vector<const TrialResult*> rows;
  for (const auto& r : results) {
    if (r.method == method) rows.push_back(&r);
  }
  std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->trial_index < b->trial_index; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i]->trial_index == rows[i - 1]->trial_index) {
      throw Error(Errc::InvalidArgument, std::string(to_string(method)) + " trial " +
                                             std::to_string(rows[i]->trial_index) + " appears twice");
    }
  }
  MethodSummary s;
  s.method = method;
  if (rows.empty()) throw Error(Errc::MissingMethod, "no " + std::string(to_string(method)) + " trials");
  if (rows.size() < 2) throw Error(Errc::SampleTooSmall, std::string(to_string(method)) + " has fewer than 2 trials");
  for (const auto* r : rows) s.samples.push_back(r->similarity);
  s.mean = sample_mean(s.samples);
  s.min = s.max = s.samples.front();
  s.argmin = s.argmax = rows.front()->trial_index;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (s.samples[i] < s.min) {
      s.min = s.samples[i];
      s.argmin = rows[i]->trial_index;
    }
    if (s.samples[i] > s.max) {
      s.max = s.samples[i];
      s.argmax = rows[i]->trial_index;
    }
  }
  return s;
}

inline Json to_json(const MethodSummary& s) {
  Json j;
  j["n"] = s.samples.size();
  j["mean"] = s.mean;
  j["min"] = s.min;
  j["min_trial"] = s.argmin + 1;
  j["max"] = s.max;
  j["max_trial"] = s.argmax + 1;
  j["samples"] = s.samples;
  return j;
}

}  // namespace detail

/// Per-method statistics and the Welch test of difference vs direct.
inline EvalReport make_report(std::span<const TrialResult> results, double alpha) {
  EvalReport report;
  report.difference = detail::summarize(Method::Difference, results);
  report.direct = detail::summarize(Method::Direct, results);
  report.alpha = alpha;
  report.welch = welch_t_test(report.difference.samples, report.direct.samples, alpha);
  return report;
}

/// Trial numbers in the report are 1-based.
inline Json to_json(const EvalReport& r) {
  Json j;
  j["difference"] = detail::to_json(r.difference);
  j["direct"] = detail::to_json(r.direct);
  j["t_statistic"] = r.welch.t;
  j["degrees_of_freedom"] = r.welch.dof;
  j["p_value"] = r.welch.p;
  j["alpha"] = r.alpha;
  j["reject_null"] = r.welch.reject;
  return j;
}

/// Columns: method, trial (1-based), similarity with 10 decimals.
inline std::string to_csv(std::span<const TrialResult> results) {
  std::string out = "method,trial,similarity\n";
  char buf[64];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%.10f", r.similarity);
    out += std::string(to_string(r.method)) + "," + std::to_string(r.trial_index + 1) + "," + buf + "\n";
  }
  return out;
}

}  // namespace diffreason
