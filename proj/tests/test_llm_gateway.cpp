#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "diffreason/backends.hpp"
#include "diffreason/llm_gateway.hpp"
#include "support.hpp"

using namespace diffreason;
using dr_test::at_time;
using dr_test::fv;

namespace {

PromptContext two_pictures() {
  PromptContext ctx;
  ctx.attachments = {RawRef::uri("road_t0.png"), RawRef::uri("road_t1.png")};
  return ctx;
}

Difference road_difference() {
  DiffEngine engine;
  return engine.temporal_delta(at_time("t0", 0, fv({{"gap_m", 30}})), at_time("t1", 1, fv({{"gap_m", 15}})));
}

}  // namespace

TEST(BuildPrompt, TemporalDirect) {
  const auto reg = TemplateRegistry::with_defaults();
  const auto p = build_prompt(Method::Direct, two_pictures(), "temporal_direct", reg);
  ASSERT_EQ(p.turns.size(), 2u);
  EXPECT_EQ(p.turns[0].text, "The above are two pictures. Please do not reply now; reply when required later. Is this OK?");
  EXPECT_EQ(p.turns[0].attachments.size(), 2u);
  EXPECT_EQ(p.turns[1].text, "How do you think of this picture?");
  EXPECT_TRUE(p.turns[1].attachments.empty());
  EXPECT_EQ(p.method, Method::Direct);
}

TEST(BuildPrompt, TemporalDifference) {
  const auto reg = TemplateRegistry::with_defaults();
  const auto p = build_prompt(Method::Difference, two_pictures(), "temporal_difference", reg);
  ASSERT_EQ(p.turns.size(), 2u);
  EXPECT_NE(p.turns[1].text.find("What is the difference between the two pictures?"), std::string::npos);
}

TEST(BuildPrompt, SpatialDifferenceCarriages) {
  const auto reg = TemplateRegistry::with_defaults();
  PromptContext ctx;
  ctx.attachments = {RawRef::uri("metro.png")};
  ctx.vars["description"] = "a train";
  const auto p = build_prompt(Method::Difference, ctx, "spatial_difference", reg);
  EXPECT_EQ(p.turns.back().text, "Is there some difference in the carriages? If yes, why is there a difference?");
}

TEST(BuildPrompt, PureFunction) {
  const auto reg = TemplateRegistry::with_defaults();
  auto ctx = two_pictures();
  ctx.differences = {road_difference()};
  const auto a = build_prompt(Method::Difference, ctx, "difference_injected", reg);
  const auto b = build_prompt(Method::Difference, ctx, "difference_injected", reg);
  EXPECT_EQ(a, b);
  EXPECT_EQ(canonical(to_json(a)), canonical(to_json(b)));
  EXPECT_NE(a.turns[0].text.find(canonical(to_json(ctx.differences[0]))), std::string::npos);
}

TEST(BuildPrompt, DirectNeverSeesDifferences) {
  auto reg = TemplateRegistry::with_defaults();
  auto ctx = two_pictures();
  ctx.differences = {road_difference()};
  const auto p = build_prompt(Method::Direct, ctx, "temporal_direct", reg);
  for (const auto& t : p.turns) EXPECT_EQ(t.text.find("gap_m"), std::string::npos);

  reg.put({"sneaky", Method::Direct, {{Role::User, "Look at {{states}}", false}}});
  ctx.states = {at_time("t0", 0, fv({{"gap_m", 30}}))};
  EXPECT_NO_THROW(build_prompt(Method::Direct, ctx, "sneaky", reg));
  EXPECT_ERRC(reg.put({"leaky", Method::Direct, {{Role::User, "{{differences}}", false}}}), Errc::InvalidTemplate);
  EXPECT_ERRC(reg.put({"vague", Method::Difference, {{Role::User, "Describe it.", false}}}), Errc::InvalidTemplate);
}

TEST(BuildPrompt, Errors) {
  const auto reg = TemplateRegistry::with_defaults();
  EXPECT_ERRC(build_prompt(Method::Direct, two_pictures(), "no_such_template", reg), Errc::UnknownTemplate);
  EXPECT_ERRC(build_prompt(Method::Direct, two_pictures(), "temporal_difference", reg), Errc::UnknownTemplate);
  PromptContext one;
  one.attachments = {RawRef::uri("only.png")};
  EXPECT_ERRC(build_prompt(Method::Difference, one, "temporal_difference", reg), Errc::MissingContext);
  EXPECT_ERRC(build_prompt(Method::Difference, two_pictures(), "summarize_partition", reg), Errc::MissingContext);
}

TEST(AdaptiveN, ParsesFirstPositiveInteger) {
  EXPECT_EQ(parse_adaptive_n("I think 2 of them matter."), 2u);
  EXPECT_EQ(parse_adaptive_n("0 or maybe 3"), 3u);
  EXPECT_ERRC(parse_adaptive_n("none of them"), Errc::UnparseableSummary);
}

TEST(MockBackend, ScriptedAndWildcard) {
  std::istringstream script(
      R"({"template":"temporal_difference","trial":0,"response":"The car is closer."})"
      "\n"
      R"({"template":"temporal_difference","response":"fallback"})"
      "\n");
  auto mock = MockBackend::from_jsonl(script);
  const auto reg = TemplateRegistry::with_defaults();
  const auto p = build_prompt(Method::Difference, two_pictures(), "temporal_difference", reg);
  EXPECT_EQ(complete(p, mock, 0).text, "The car is closer.");
  EXPECT_EQ(complete(p, mock, 7).text, "fallback");
  const auto direct = build_prompt(Method::Direct, two_pictures(), "temporal_direct", reg);
  EXPECT_ERRC(complete(direct, mock, 0), Errc::ScriptMiss);
}

TEST(MockBackend, TraceReceivesExchange) {
  MockBackend mock;
  mock.add("temporal_direct", 0, "A road.");
  std::vector<Json> events;
  mock.set_trace([&](const Json& e) { events.push_back(e); });
  const auto reg = TemplateRegistry::with_defaults();
  mock.complete(build_prompt(Method::Direct, two_pictures(), "temporal_direct", reg), 0);
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0]["response"], "A road.");
}

TEST(MockBackend, BadScriptLine) {
  std::istringstream script(R"({"trial":0,"response":"x"})");
  EXPECT_ERRC(MockBackend::from_jsonl(script), Errc::ConfigError);
}

TEST(RemoteBackend, MissingTokenFailsBeforeNetwork) {
  ::unsetenv("DIFFREASON_TEST_UNSET_TOKEN");
  // Port 9 on a reserved address: any connection attempt would surface as BackendUnreachable.
  RemoteBackend backend({BackendKind::Remote, "http://192.0.2.1:9/v1/chat/completions", "m",
                         "DIFFREASON_TEST_UNSET_TOKEN", 1.0, 0, 0.2, ""});
  const auto reg = TemplateRegistry::with_defaults();
  EXPECT_ERRC(backend.complete(build_prompt(Method::Direct, two_pictures(), "temporal_direct", reg), 0),
              Errc::AuthMissing);
}

TEST(RemoteBackend, ConversationAgainstLocalServer) {
  httplib::Server server;
  std::atomic<int> calls{0};
  std::vector<Json> requests;
  std::mutex mu;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++calls;
    if (n == 1) {
      res.status = 503;
      return;
    }
    {
      std::lock_guard lock(mu);
      requests.push_back(Json::parse(req.body));
    }
    EXPECT_EQ(req.get_header_value("Authorization"), "Bearer secret");
    const std::string reply = n == 2 ? "OK." : "The red car is closer.";
    res.set_content(Json{{"choices", Json::array({{{"message", {{"role", "assistant"}, {"content", reply}}}}})},
                         {"usage", {{"total_tokens", 10}}}}
                        .dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("DIFFREASON_TEST_TOKEN", "secret", 1);
  RemoteBackend backend({BackendKind::Remote, "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions",
                         "vision-model", "DIFFREASON_TEST_TOKEN", 1.0, 2, 5.0, ""});
  const auto reg = TemplateRegistry::with_defaults();
  const auto c = backend.complete(build_prompt(Method::Difference, two_pictures(), "temporal_difference", reg), 0);
  server.stop();
  t.join();

  EXPECT_EQ(c.text, "The red car is closer.");
  EXPECT_EQ(c.retries, 1);
  EXPECT_EQ(c.usage["calls"], 2);
  EXPECT_EQ(c.usage["total_tokens"], 20.0);
  ASSERT_EQ(requests.size(), 2u);
  EXPECT_EQ(requests[0]["model"], "vision-model");
  EXPECT_EQ(requests[0]["messages"].size(), 1u);
  EXPECT_EQ(requests[0]["messages"][0]["content"][1]["image_url"]["url"], "road_t0.png");
  ASSERT_EQ(requests[1]["messages"].size(), 3u);
  EXPECT_EQ(requests[1]["messages"][1]["role"], "assistant");
  EXPECT_EQ(requests[1]["messages"][1]["content"], "OK.");
}

TEST(RemoteBackend, ClientErrorIsNotRetried) {
  httplib::Server server;
  std::atomic<int> calls{0};
  server.Post("/chat", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 401;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  ::setenv("DIFFREASON_TEST_TOKEN", "secret", 1);
  RemoteBackend backend({BackendKind::Remote, "http://127.0.0.1:" + std::to_string(port) + "/chat", "m",
                         "DIFFREASON_TEST_TOKEN", 1.0, 3, 5.0, ""});
  const auto reg = TemplateRegistry::with_defaults();
  EXPECT_ERRC(backend.complete(build_prompt(Method::Direct, two_pictures(), "temporal_direct", reg), 0),
              Errc::BackendUnreachable);
  server.stop();
  t.join();
  EXPECT_EQ(calls.load(), 1);
}

TEST(Partition, ParsesRegions) {
  PartitionSchema schema;
  schema.attributes["width"] = {"lane_width", "m"};
  const auto states = parse_partition_summary("segment A width 3.5; segment B width 2.8", schema);
  ASSERT_EQ(states.size(), 2u);
  EXPECT_EQ(states[0].region_label, "segment A");
  EXPECT_EQ(states[0].id, "region:segment A");
  EXPECT_EQ(states[0].features, FeatureVector({{"lane_width", 3.5, "m"}}));
  EXPECT_EQ(states[1].features[0].value, 2.8);
  EXPECT_EQ(states[1].raw_ref->data, "segment B width 2.8");
}

TEST(Partition, SingleRegionAndMultipleAttributes) {
  PartitionSchema schema;
  schema.attributes["length"] = {"length_m", "m"};
  schema.attributes["seats"] = {"seats", std::nullopt};
  const auto one = parse_partition_summary("Car 1: length 10.2, seats 40.", schema);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].region_label, "Car 1");
  EXPECT_EQ(one[0].features, FeatureVector({{"length_m", 10.2, "m"}, {"seats", 40.0, std::nullopt}}));
}

TEST(Partition, MalformedReplies) {
  PartitionSchema schema;
  schema.attributes["width"] = {"lane_width", "m"};
  EXPECT_ERRC(parse_partition_summary("The road looks fine.", schema), Errc::UnparseableSummary);
  EXPECT_ERRC(parse_partition_summary("segment A width wide", schema), Errc::UnparseableSummary);
  EXPECT_ERRC(parse_partition_summary("", schema), Errc::UnparseableSummary);
  EXPECT_ERRC(parse_partition_summary("A width 1; A width 2", schema), Errc::UnparseableSummary);
  EXPECT_ERRC(parse_partition_summary("width 1", schema), Errc::UnparseableSummary);
}

TEST(Partition, SummarizeThroughMock) {
  MockBackend mock;
  mock.add("summarize_partition", 0, "segment A width 3.5; segment B width 2.8");
  PartitionSchema schema;
  schema.attributes["width"] = {"lane_width", "m"};
  const auto reg = TemplateRegistry::with_defaults();
  const auto states = summarize_partition("A two-lane road.", mock, schema, reg);
  ASSERT_EQ(states.size(), 2u);
  DiffEngine engine;
  EXPECT_NEAR(engine.spatial_variability(states), 0.7, 1e-12);
}
