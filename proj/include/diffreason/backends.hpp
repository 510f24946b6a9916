#pragma once

/**
 * @file backends.hpp
 *
 * @brief HTTP chat and embedding backends, and factories that build any
 * backend or provider from its configuration.
 *
 * The chat backend speaks the common chat-completion contract: POST
 * `{"model", "temperature", "messages": [{"role", "content"}]}` and read
 * `choices[0].message.content`. The embedding provider POSTs
 * `{"model", "input"}` and reads `data[0].embedding`. Both send
 * `Authorization: Bearer <token>` where the token comes from a named
 * environment variable.
 */

#include <chrono>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "httplib.h"

#include "diffreason/detail/base64.hpp"
#include "diffreason/error.hpp"
#include "diffreason/eval_harness.hpp"
#include "diffreason/llm_gateway.hpp"

namespace diffreason {

enum class BackendKind { Mock, Remote };

struct BackendSpec {
  BackendKind kind = BackendKind::Mock;
  std::string endpoint;
  std::string model_name;
  std::string auth_env;
  double temperature = 1.0;
  int max_retries = 2;
  double timeout_s = 60.0;
  std::string script;  // mock script path
};

enum class ProviderKind { DeterministicHash, Table, Remote };

struct ProviderSpec {
  ProviderKind kind = ProviderKind::DeterministicHash;
  std::size_t dimension = 256;
  std::string endpoint;
  std::string model_name;
  std::string auth_env;
  std::string table;  // table provider path
  double timeout_s = 60.0;
};

namespace detail {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(Errc::ConfigError, "endpoint '" + url + "' has no scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::string require_token(const std::string& auth_env) {
  if (auth_env.empty()) throw Error(Errc::AuthMissing, "no auth environment variable configured");
  const char* token = std::getenv(auth_env.c_str());
  if (token == nullptr || *token == '\0') throw Error(Errc::AuthMissing, "environment variable " + auth_env + " is unset");
  return token;
}

struct HttpReply {
  Json body;
  int retries = 0;
};

/// POSTs JSON with retries on transport errors, 429 and 5xx.
inline HttpReply post_json(const Endpoint& ep, const std::string& token, const Json& body, int max_retries,
                           double timeout_s) {
  httplib::Client client(ep.origin);
  if (!client.is_valid()) throw Error(Errc::BackendUnreachable, "unsupported endpoint " + ep.origin);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(timeout_s));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const httplib::Headers headers{{"Authorization", "Bearer " + token}};
  const auto payload = canonical(body);

  std::string last_error;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 * (1 << std::min(attempt, 6))));
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(Errc::BackendUnreachable, "HTTP " + std::to_string(res->status) + " from " + ep.origin + ep.path +
                                                " after " + std::to_string(attempt) + " retries");
    }
    try {
      return {Json::parse(res->body), attempt};
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::BackendUnreachable, std::string("malformed response body: ") + e.what());
    }
  }
  throw Error(Errc::BackendUnreachable, ep.origin + ep.path + ": " + last_error + " after " +
                                            std::to_string(max_retries) + " retries");
}

inline Json message_content(const Turn& turn) {
  if (turn.attachments.empty()) return turn.text;
  Json parts = Json::array();
  parts.push_back({{"type", "text"}, {"text", turn.text}});
  for (const auto& a : turn.attachments) {
    const auto url = a.kind == RawRef::Kind::Uri ? a.data
                                                 : "data:application/octet-stream;base64," + base64_encode(a.data);
    parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
  }
  return parts;
}

}  // namespace detail

/**
 * @brief Chat backend over HTTP.
 *
 * Multi-turn prompts are played as a conversation: every user turn but the
 * last is sent and its reply appended as an assistant message before the next
 * turn. The returned text is the reply to the final turn. The auth variable is
 * checked before any network traffic.
 */
class RemoteBackend : public ChatBackend {
 public:
  explicit RemoteBackend(BackendSpec spec) : spec_(std::move(spec)) {
    if (spec_.endpoint.empty()) throw Error(Errc::ConfigError, "remote backend needs an endpoint");
    if (spec_.auth_env.empty()) throw Error(Errc::ConfigError, "remote backend needs an auth environment variable");
  }

  Completion complete(const PromptSpec& prompt, std::size_t trial) override {
    const auto token = detail::require_token(spec_.auth_env);
    const auto ep = detail::split_endpoint(spec_.endpoint);
    Json messages = Json::array();
    Completion out;
    out.usage = Json::object();
    int calls = 0;
    for (std::size_t i = 0; i < prompt.turns.size(); ++i) {
      const auto& turn = prompt.turns[i];
      messages.push_back({{"role", std::string(to_string(turn.role))}, {"content", detail::message_content(turn)}});
      const bool last = i + 1 == prompt.turns.size();
      if (turn.role == Role::System && !last) continue;

      Json request;
      request["model"] = spec_.model_name;
      request["temperature"] = spec_.temperature;
      request["messages"] = messages;
      const auto reply = detail::post_json(ep, token, request, spec_.max_retries, spec_.timeout_s);
      ++calls;
      out.retries += reply.retries;
      Json event;
      event["backend"] = "remote";
      event["template_id"] = prompt.template_id;
      event["trial"] = trial;
      event["request"] = request;
      event["response"] = reply.body;
      trace(event);

      const auto& body = reply.body;
      if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty() ||
          !body["choices"][0].contains("message") || !body["choices"][0]["message"].contains("content") ||
          !body["choices"][0]["message"]["content"].is_string()) {
        throw Error(Errc::BackendUnreachable, "response has no choices[0].message.content");
      }
      const auto text = body["choices"][0]["message"]["content"].get<std::string>();
      if (body.contains("usage") && body["usage"].is_object()) {
        for (const auto& [k, v] : body["usage"].items()) {
          if (v.is_number()) out.usage[k] = out.usage.value(k, 0.0) + v.get<double>();
        }
      }
      if (last) {
        out.text = text;
      } else {
        messages.push_back({{"role", "assistant"}, {"content", text}});
      }
    }
    out.usage["calls"] = calls;
    out.usage["retries"] = out.retries;
    return out;
  }

 private:
  BackendSpec spec_;
};

class RemoteEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit RemoteEmbeddingProvider(ProviderSpec spec) : spec_(std::move(spec)) {
    if (spec_.endpoint.empty()) throw Error(Errc::ConfigError, "remote provider needs an endpoint");
  }

  std::vector<double> embed(std::string_view text) override {
    const auto token = detail::require_token(spec_.auth_env);
    Json request;
    request["model"] = spec_.model_name;
    request["input"] = std::string(text);
    const auto reply = detail::post_json(detail::split_endpoint(spec_.endpoint), token, request, 2, spec_.timeout_s);
    const auto& body = reply.body;
    if (!body.contains("data") || !body["data"].is_array() || body["data"].empty() ||
        !body["data"][0].contains("embedding") || !body["data"][0]["embedding"].is_array()) {
      throw Error(Errc::BackendUnreachable, "embedding response has no data[0].embedding");
    }
    auto v = body["data"][0]["embedding"].get<std::vector<double>>();
    if (spec_.dimension != 0 && v.size() != spec_.dimension) {
      throw Error(Errc::DimensionMismatch, "remote embedding has " + std::to_string(v.size()) +
                                               " dims, configured " + std::to_string(spec_.dimension));
    }
    return v;
  }

  std::size_t dimension() const override { return spec_.dimension; }

 private:
  ProviderSpec spec_;
};

inline std::unique_ptr<ChatBackend> make_backend(const BackendSpec& spec) {
  if (spec.kind == BackendKind::Remote) return std::make_unique<RemoteBackend>(spec);
  if (spec.script.empty()) throw Error(Errc::ConfigError, "mock backend needs a script file");
  return std::make_unique<MockBackend>(MockBackend::from_file(spec.script));
}

inline std::unique_ptr<EmbeddingProvider> make_provider(const ProviderSpec& spec) {
  switch (spec.kind) {
    case ProviderKind::DeterministicHash:
      return std::make_unique<HashEmbeddingProvider>(spec.dimension);
    case ProviderKind::Table:
      if (spec.table.empty()) throw Error(Errc::ConfigError, "table provider needs a table file");
      return std::make_unique<TableEmbeddingProvider>(TableEmbeddingProvider::from_file(spec.table));
    case ProviderKind::Remote:
      return std::make_unique<RemoteEmbeddingProvider>(spec);
  }
  throw Error(Errc::ConfigError, "unknown provider kind");
}

}  // namespace diffreason
