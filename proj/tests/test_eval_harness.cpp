#include <gtest/gtest.h>

#include <cmath>
#include <mutex>

#include "diffreason/config.hpp"
#include "diffreason/eval_harness.hpp"
#include "support.hpp"

using namespace diffreason;

namespace {

Scenario small_scenario(std::size_t trials) {
  Scenario s;
  s.name = "small";
  s.reference = "the red car is closer to the car ahead";
  s.trials = trials;
  s.methods = {{Method::Direct, "temporal_direct"}, {Method::Difference, "temporal_difference"}};
  s.context.attachments = {RawRef::uri("t0.png"), RawRef::uri("t1.png")};
  return s;
}

MockBackend varied_mock(std::size_t trials) {
  MockBackend mock;
  for (std::size_t t = 0; t < trials; ++t) {
    mock.add("temporal_direct", t, "a road with cars number " + std::string(t + 1, 'x'));
    mock.add("temporal_difference", t, "the red car is closer " + std::string(t + 1, 'y'));
  }
  return mock;
}

/// Fails on one text; otherwise hashes.
class FailingProvider : public EmbeddingProvider {
 public:
  explicit FailingProvider(std::string poison) : poison_(std::move(poison)) {}
  std::vector<double> embed(std::string_view text) override {
    if (text == poison_) throw Error(Errc::BackendUnreachable, "provider down");
    std::lock_guard lock(mu_);
    return inner_.embed(text);
  }
  std::size_t dimension() const override { return inner_.dimension(); }

 private:
  std::string poison_;
  std::mutex mu_;
  HashEmbeddingProvider inner_;
};

TrialResult trial(Method m, std::size_t i, double s) { return {m, i, "", {}, s}; }

}  // namespace

TEST(HashProvider, DeterministicAndCaseInsensitive) {
  HashEmbeddingProvider p(64);
  EXPECT_EQ(p.embed("The Red car!"), p.embed("the red CAR"));
  EXPECT_EQ(p.embed("x").size(), 64u);
  EXPECT_NEAR(cosine_similarity(p.embed("alpha beta"), p.embed("beta alpha")), 1.0, 1e-15);
  EXPECT_ERRC(cosine_similarity(p.embed("..."), p.embed("a")), Errc::ZeroVector);
}

TEST(TableProvider, LookupAndMiss) {
  std::istringstream in(R"({"text":"a","embedding":[1,0]})" "\n" R"({"text":"b","embedding":[0.6,0.8]})" "\n");
  auto p = TableEmbeddingProvider::from_jsonl(in);
  EXPECT_NEAR(cosine_similarity(p.embed("a"), p.embed("b")), 0.6, 1e-15);
  EXPECT_ERRC(p.embed("c"), Errc::EmbeddingMiss);
  EXPECT_ERRC(p.add("d", {1, 2, 3}), Errc::DimensionMismatch);
}

TEST(RunTrials, ThreeTrialsTwoMethodsDeterministic) {
  const auto reg = TemplateRegistry::with_defaults();
  auto mock = varied_mock(3);
  HashEmbeddingProvider provider;
  const auto a = run_trials(small_scenario(3), reg, mock, provider);
  const auto b = run_trials(small_scenario(3), reg, mock, provider);
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0].method, Method::Direct);
  EXPECT_EQ(a[3].method, Method::Difference);
  EXPECT_EQ(a[4].trial_index, 1u);
}

TEST(RunTrials, ParallelMatchesSequentialOrder) {
  const auto reg = TemplateRegistry::with_defaults();
  auto mock = varied_mock(7);
  HashEmbeddingProvider provider;
  std::vector<TrialResult> streamed;
  const auto seq = run_trials(small_scenario(7), reg, mock, provider);
  const auto par = run_trials(small_scenario(7), reg, mock, provider, [&](const TrialResult& r) { streamed.push_back(r); }, 4);
  EXPECT_EQ(seq, par);
  EXPECT_EQ(streamed, par);
}

TEST(RunTrials, FailureKeepsEarlierTrialsAndTagsError) {
  const auto reg = TemplateRegistry::with_defaults();
  auto mock = varied_mock(8);
  auto scenario = small_scenario(8);
  scenario.methods = {{Method::Difference, "temporal_difference"}};
  FailingProvider provider("the red car is closer " + std::string(6, 'y'));
  std::vector<TrialResult> persisted;
  try {
    run_trials(scenario, reg, mock, provider, [&](const TrialResult& r) { persisted.push_back(r); });
    FAIL() << "expected a TrialError";
  } catch (const TrialError& e) {
    EXPECT_EQ(e.trial_index(), 5u);
    EXPECT_EQ(e.method(), Method::Difference);
    EXPECT_EQ(e.code(), Errc::BackendUnreachable);
  }
  ASSERT_EQ(persisted.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(persisted[i].trial_index, i);
}

TEST(RunTrials, ScriptMissIsTagged) {
  const auto reg = TemplateRegistry::with_defaults();
  auto mock = varied_mock(2);
  HashEmbeddingProvider provider;
  try {
    run_trials(small_scenario(3), reg, mock, provider);
    FAIL() << "expected a TrialError";
  } catch (const TrialError& e) {
    EXPECT_EQ(e.code(), Errc::ScriptMiss);
    EXPECT_EQ(e.method(), Method::Direct);
    EXPECT_EQ(e.trial_index(), 2u);
  }
}

TEST(RunTrials, PreconditionErrors) {
  const auto reg = TemplateRegistry::with_defaults();
  auto mock = varied_mock(1);
  HashEmbeddingProvider provider;
  auto s = small_scenario(1);
  s.methods.clear();
  EXPECT_ERRC(run_trials(s, reg, mock, provider), Errc::MissingMethod);
  s = small_scenario(0);
  EXPECT_ERRC(run_trials(s, reg, mock, provider), Errc::InvalidArgument);
  s = small_scenario(1);
  s.context.attachments.resize(1);
  EXPECT_ERRC(run_trials(s, reg, mock, provider), Errc::MissingContext);
}

TEST(Report, StatisticsAndOneBasedTrials) {
  const std::vector<TrialResult> results{trial(Method::Difference, 0, 0.6), trial(Method::Difference, 1, 0.8),
                                         trial(Method::Difference, 2, 0.7), trial(Method::Direct, 0, 0.3),
                                         trial(Method::Direct, 1, 0.2), trial(Method::Direct, 2, 0.4)};
  const auto r = make_report(results, 0.05);
  EXPECT_NEAR(r.difference.mean, 0.7, 1e-15);
  EXPECT_EQ(r.difference.argmax, 1u);
  EXPECT_EQ(r.direct.argmin, 1u);
  EXPECT_GT(r.welch.t, 0.0);
  const auto j = to_json(r);
  EXPECT_EQ(j["difference"]["max_trial"], 2);
  EXPECT_EQ(j["direct"]["min_trial"], 2);
  EXPECT_EQ(j.begin().key(), "difference");
}

TEST(Report, IdenticalSetsDoNotReject) {
  std::vector<TrialResult> results;
  for (std::size_t i = 0; i < 4; ++i) {
    results.push_back(trial(Method::Difference, i, 0.1 * double(i + 1)));
    results.push_back(trial(Method::Direct, i, 0.1 * double(i + 1)));
  }
  const auto r = make_report(results, 0.05);
  EXPECT_EQ(r.difference.mean, r.direct.mean);
  EXPECT_FALSE(r.welch.reject);
}

TEST(Report, Errors) {
  const std::vector<TrialResult> only_direct{trial(Method::Direct, 0, 0.3), trial(Method::Direct, 1, 0.2)};
  EXPECT_ERRC(make_report(only_direct, 0.05), Errc::MissingMethod);
  const std::vector<TrialResult> tiny{trial(Method::Direct, 0, 0.3), trial(Method::Direct, 1, 0.2),
                                      trial(Method::Difference, 0, 0.5)};
  EXPECT_ERRC(make_report(tiny, 0.05), Errc::SampleTooSmall);
  const std::vector<TrialResult> dup{trial(Method::Direct, 0, 0.3), trial(Method::Direct, 0, 0.2),
                                     trial(Method::Difference, 0, 0.5), trial(Method::Difference, 1, 0.5)};
  EXPECT_ERRC(make_report(dup, 0.05), Errc::InvalidArgument);
}

TEST(Report, CsvColumns) {
  const std::vector<TrialResult> results{trial(Method::Direct, 0, 0.25), trial(Method::Difference, 19, 1.0 / 3.0)};
  EXPECT_EQ(to_csv(results), "method,trial,similarity\ndirect,1,0.2500000000\ndifference,20,0.3333333333\n");
}

TEST(TrialRecord, JsonRoundTrip) {
  const TrialResult r{Method::Difference, 4, "text \"quoted\"", {0.5, -0.25}, 0.123456789012345};
  const auto line = canonical(to_json(r));
  EXPECT_EQ(line.rfind(R"({"method":"difference","trial_index":4,"similarity":)", 0), 0u);
  EXPECT_EQ(trial_result_from_json(parse_json(line)), r);
  EXPECT_ERRC(trial_result_from_json(parse_json(R"({"method":"other","trial_index":0,"similarity":1})")),
              Errc::UnparseablePayload);
}

TEST(Scenario, LoadsReplayFixture) {
  RunConfig cfg;
  const auto s = load_scenario(dr_test::fixtures_dir() / "spatial" / "scenario.toml", cfg);
  EXPECT_EQ(s.name, "spatial");
  EXPECT_EQ(s.trials, 20u);
  ASSERT_EQ(s.methods.size(), 2u);
  EXPECT_EQ(s.context.states.size(), 4u);
  EXPECT_EQ(cfg.backend.kind, BackendKind::Mock);
  EXPECT_EQ(cfg.provider.kind, ProviderKind::Table);
  EXPECT_TRUE(std::filesystem::path(cfg.provider.table).is_absolute() ||
              std::filesystem::exists(cfg.provider.table));
}

TEST(Config, OverlayAndErrors) {
  dr_test::TempDir dir;
  dr_test::spit(dir / "run.toml", R"(norm = "l1"
history = "h.jsonl"

[thresholds]
theta = 10.0

[weights.road]
gap_m = 2.0

[[extractors]]
id = "pick"
kind = "select_dims"
params = { dims = "gap_m" }

[partition.width]
dim = "lane_width"
unit = "m"
)");
  const auto cfg = load_config(dir / "run.toml");
  EXPECT_EQ(cfg.norm, Norm::L1);
  EXPECT_EQ(cfg.history, dir / "h.jsonl");
  EXPECT_EQ(cfg.thresholds.theta, 10.0);
  EXPECT_EQ(cfg.weight_profile("road").weight("gap_m"), 2.0);
  EXPECT_EQ(cfg.weight_profile("unit").weight("gap_m"), 1.0);
  EXPECT_TRUE(cfg.extractors.contains("pick"));
  EXPECT_EQ(cfg.partition.attributes.at("width").dim, "lane_width");
  EXPECT_ERRC(cfg.weight_profile("missing"), Errc::ConfigError);

  dr_test::spit(dir / "bad.toml", "colour = \"red\"\n");
  EXPECT_ERRC(load_config(dir / "bad.toml"), Errc::ConfigError);
  dr_test::spit(dir / "neg.toml", "[weights.w]\nx = -1.0\n");
  EXPECT_ERRC(load_config(dir / "neg.toml"), Errc::NegativeWeight);
  dr_test::spit(dir / "broken.toml", "norm = \n");
  EXPECT_ERRC(load_config(dir / "broken.toml"), Errc::ConfigError);
}

TEST(Config, CustomTemplateObeysMethodRules) {
  dr_test::TempDir dir;
  dr_test::spit(dir / "t.toml", R"([templates.mine]
method = "direct"
turns = [{ role = "user", text = "What is the difference here?" }]
)");
  EXPECT_ERRC(load_config(dir / "t.toml"), Errc::InvalidTemplate);
}
