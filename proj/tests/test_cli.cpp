#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "cli_app.hpp"
#include "support.hpp"

using namespace diffreason;
using dr_test::at_time;
using dr_test::fv;
using dr_test::in_region;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args, const std::string& stdin_text = "") {
  args.insert(args.begin(), "diffreason");
  std::istringstream in(stdin_text);
  std::ostringstream out, err;
  const int code = cli::run(args, in, out, err);
  return {code, out.str(), err.str()};
}

std::string lines(const std::vector<StateRecord>& states) {
  std::string out;
  for (const auto& s : states) out += canonical(to_json(s)) + "\n";
  return out;
}

std::vector<StateRecord> road() {
  return {at_time("t0", 0, fv({{"gap_m", 30}})), at_time("t1", 1, fv({{"gap_m", 20}})),
          at_time("t2", 2, fv({{"gap_m", 15}}))};
}

const std::vector<std::vector<std::string>> kHelpPaths{
    {},
    {"diff"},
    {"diff", "temporal"},
    {"diff", "latest"},
    {"diff", "spatial"},
    {"diff", "pair"},
    {"diff", "topn"},
    {"diff", "internal"},
    {"diff", "external"},
    {"topn"},
    {"detect"},
    {"history"},
    {"history", "add"},
    {"history", "relabel"},
    {"history", "list"},
    {"history", "ref"},
    {"history", "compare"},
    {"history", "raw"},
    {"fuse"},
    {"extract"},
    {"prompt"},
    {"partition"},
    {"eval"},
    {"eval", "run"},
    {"eval", "report"},
};

std::string golden_name(const std::vector<std::string>& path) {
  std::string name = "diffreason";
  for (const auto& p : path) name += "_" + p;
  return name + ".txt";
}

}  // namespace

TEST(CliHelp, MatchesGoldenFiles) {
  const std::filesystem::path dir = DIFFREASON_GOLDEN_DIR;
  const bool update = std::getenv("DIFFREASON_UPDATE_GOLDEN") != nullptr;
  for (const auto& path : kHelpPaths) {
    auto args = path;
    args.push_back("--help");
    const auto r = run_cli(args);
    EXPECT_EQ(r.code, 0) << golden_name(path);
    const auto file = dir / golden_name(path);
    if (update) dr_test::spit(file, r.out);
    ASSERT_TRUE(std::filesystem::exists(file)) << file;
    EXPECT_EQ(r.out, dr_test::slurp(file)) << golden_name(path);
  }
}

TEST(CliDelegation, TemporalLatestEqualsLibrary) {
  const auto states = road();
  DiffEngine engine;
  const auto expected = canonical(to_json(engine.latest_difference(states))) + "\n";
  const auto r = run_cli({"diff", "temporal", "--latest"}, lines(states));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, expected);
  EXPECT_EQ(run_cli({"diff", "latest"}, lines(states)).out, expected);
}

TEST(CliDelegation, TemporalStreamAndNorm) {
  const auto states = road();
  DiffEngine engine(Norm::L1);
  std::string expected;
  for (const auto& d : engine.consecutive_deltas(states)) expected += canonical(to_json(d)) + "\n";
  EXPECT_EQ(run_cli({"diff", "temporal", "--norm", "l1"}, lines(states)).out, expected);
}

TEST(CliDelegation, SpatialVariability) {
  const std::vector<StateRecord> cars{in_region("c1", "c1", fv({{"z", 1}})), in_region("c2", "c2", fv({{"z", 3}})),
                                      in_region("c3", "c3", fv({{"z", 7}}))};
  const auto r = run_cli({"diff", "spatial", "--variability"}, lines(cars));
  EXPECT_EQ(r.out, "{\"norm\":\"l2\",\"m\":3,\"variability\":4.0}\n");
  const auto pairs = run_cli({"diff", "spatial"}, lines(cars)).out;
  EXPECT_EQ(std::count(pairs.begin(), pairs.end(), '\n'), 6);
}

TEST(CliDelegation, TopnPipeline) {
  const auto deltas = run_cli({"diff", "temporal"}, lines(road())).out;
  const auto r = run_cli({"topn", "--n", "1"}, deltas);
  EXPECT_EQ(r.code, 0) << r.err;
  const auto top = difference_from_json(parse_json(r.out));
  EXPECT_EQ(top.seq, 0u);
  EXPECT_EQ(top.delta[0].value, -10.0);
  EXPECT_EQ(run_cli({"diff", "topn", "--n", "1"}, deltas).out, r.out);
}

TEST(CliDelegation, DetectThreshold) {
  const auto latest = run_cli({"diff", "latest"}, lines(road())).out;
  EXPECT_EQ(run_cli({"detect", "--mode", "threshold", "--theta", "4"}, latest).out,
            "{\"abnormal\":true,\"statistic\":5.0,\"bound\":4.0,\"method\":\"threshold\"}\n");
  EXPECT_EQ(run_cli({"detect", "--mode", "threshold", "--theta", "5"}, latest).out,
            "{\"abnormal\":false,\"statistic\":5.0,\"bound\":5.0,\"method\":\"threshold\"}\n");
}

TEST(CliDelegation, HistoryRoundTrip) {
  dr_test::TempDir dir;
  const auto h = (dir / "h.jsonl").string();
  auto img = at_time("frame", 0, fv({{"gap_m", 30}}));
  img.raw_ref = RawRef::inline_bytes("raw frame bytes");
  EXPECT_EQ(run_cli({"history", "add", "--history", h, "--label", "normal"}, lines({img})).out, "{\"appended_at\":0}\n");
  const auto raw = run_cli({"history", "raw", "--history", h, "--id", "frame", "--bytes"});
  EXPECT_EQ(raw.out, "raw frame bytes");
  EXPECT_EQ(run_cli({"history", "raw", "--history", h, "--id", "frame"}).out, "{\"inline\":\"raw frame bytes\"}\n");
  EXPECT_EQ(run_cli({"history", "add", "--history", h}, lines({img})).code, 1);
  const auto cmp = run_cli({"history", "compare", "--history", h}, lines({at_time("now", 1, fv({{"gap_m", 15}}))}));
  EXPECT_EQ(difference_from_json(parse_json(cmp.out)).delta[0].value, -15.0);
}

TEST(CliDelegation, PromptIsPure) {
  const auto a = run_cli({"prompt", "--method", "difference", "--template", "temporal_difference", "--attach", "a.png",
                          "--attach", "b.png"});
  const auto b = run_cli({"prompt", "--method", "difference", "--template", "temporal_difference", "--attach", "a.png",
                          "--attach", "b.png"});
  EXPECT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  PromptContext ctx;
  ctx.attachments = {RawRef::uri("a.png"), RawRef::uri("b.png")};
  EXPECT_EQ(a.out, canonical(to_json(build_prompt(Method::Difference, ctx, "temporal_difference",
                                                  TemplateRegistry::with_defaults()))) +
                       "\n");
}

TEST(CliErrors, OperationErrorIsJsonOnStderr) {
  const auto r = run_cli({"diff", "latest"}, lines({road()[0]}));
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(r.out.empty());
  const auto j = parse_json(r.err);
  EXPECT_EQ(j["error"], "InsufficientHistory");
  EXPECT_TRUE(j["message"].is_string());
}

TEST(CliErrors, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"diff"}).code, 2);
  EXPECT_EQ(run_cli({"topn"}).code, 2);
  EXPECT_EQ(run_cli({"diff", "temporal", "--norm", "l3"}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
}

TEST(CliErrors, TrialErrorCarriesTrialIndex) {
  dr_test::TempDir dir;
  dr_test::spit(dir / "script.jsonl", R"({"template":"temporal_direct","trial":0,"response":"a road"})" "\n");
  dr_test::spit(dir / "s.toml", R"(name = "short"
reference = "a road with cars"
trials = 2
[[methods]]
method = "direct"
template = "temporal_direct"
[context]
attachments = ["a.png"]
[backend]
kind = "mock"
script = "script.jsonl"
)");
  const auto trail = (dir / "t.jsonl").string();
  const auto r = run_cli({"eval", "run", "--scenario", (dir / "s.toml").string(), "--trail", trail});
  EXPECT_EQ(r.code, 1);
  const auto j = parse_json(r.err);
  EXPECT_EQ(j["error"], "ScriptMiss");
  EXPECT_EQ(j["method"], "direct");
  EXPECT_EQ(j["trial_index"], 1);
  const auto kept = dr_test::slurp(trail);
  EXPECT_EQ(std::count(kept.begin(), kept.end(), '\n'), 1);
}

TEST(CliEval, ReportFromTrailMatchesRun) {
  dr_test::TempDir dir;
  const auto trail = (dir / "t.jsonl").string();
  const auto scenario = (dr_test::fixtures_dir() / "determinism" / "scenario.toml").string();
  const auto run = run_cli({"eval", "run", "--scenario", scenario, "--trail", trail});
  ASSERT_EQ(run.code, 0) << run.err;
  EXPECT_EQ(run_cli({"eval", "report", "--trail", trail}).out, run.out);
  const auto csv = run_cli({"eval", "report", "--trail", trail, "--csv"});
  EXPECT_EQ(csv.out.rfind("method,trial,similarity\ndirect,1,", 0), 0u);
  EXPECT_EQ(std::count(csv.out.begin(), csv.out.end(), '\n'), 7);
}

TEST(CliBinary, ExitCodesFromProcess) {
  const std::string exe = DIFFREASON_CLI;
  const auto status = [&](const std::string& args) {
    const int rc = std::system((exe + " " + args + " >/dev/null 2>&1 </dev/null").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("diff"), 2);
  EXPECT_EQ(status("diff latest"), 1);
}
