#include <algorithm>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "campaign_oracle.hpp"
#include "common.hpp"
#include "hostile/campaign.hpp"

using namespace hostile;
using hostile::testing::board;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("hostile_campaign_" + name);
  fs::remove_all(d);
  return d;
}

nlohmann::json small_config_json(const std::string& profile = "pi3-like") {
  nlohmann::json suts = nlohmann::json::array();
  const std::vector<std::array<double, 3>> sens{{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, {0.2, 0.5, 0.3}, {0.0, 0.0, 0.0}};
  for (std::size_t i = 0; i < sens.size(); ++i)
    suts.push_back({{"alias", std::string(1, static_cast<char>('a' + i))},
                    {"name", "sut" + std::to_string(i)},
                    {"command", "true"},
                    {"synthetic",
                     {{"baseline_ns", 1e6 * static_cast<double>(i + 1)},
                      {"sensitivity", {{"cache", sens[i][0]}, {"bus", sens[i][1]}, {"memory", sens[i][2]}}}}}});
  return {{"platform", board()},
          {"synthetic_profile", profile},
          {"noise_free", true},
          {"comparison_budget", "8evals"},
          {"long_budget", "20evals"},
          {"seeds", {1, 2, 3}},
          {"long_seed", 7},
          {"seed", 3},
          {"quantile_study", {{"sets", 4}, {"set_size", 50}, {"levels", {0.5, 0.9, 1.0}}}},
          {"suts", suts}};
}

CampaignConfig small_config(const std::string& profile = "pi3-like") {
  return campaign_config_from_json(small_config_json(profile));
}

CampaignOutcome run(const CampaignConfig& c, const fs::path& dir, std::size_t stop_after = 5) {
  SyntheticBackend backend(c.synthetic_profile());
  return run_full_campaign(c, backend, dir, {stop_after});
}

}  // namespace

TEST(CampaignConfig, BundledConfigsLoad) {
  for (const auto& f : fs::directory_iterator(fs::path(HOSTILE_CONFIG_DIR) / "campaigns")) {
    const auto c = load_campaign_config(f.path().string());
    EXPECT_EQ(c.platform.core_count >= 2, true) << f.path();
    EXPECT_FALSE(c.suts.empty()) << f.path();
    if (c.platform.backend == BackendKind::Synthetic) {
      EXPECT_NO_THROW(c.synthetic_profile()) << f.path();
    }
  }
}

TEST(CampaignConfig, SyntheticConfigUsesTheProfileFile) {
  const auto c = load_campaign_config((fs::path(HOSTILE_CONFIG_DIR) / "campaigns" / "pi3-synthetic.json").string());
  EXPECT_EQ(nlohmann::json(c.synthetic_profile()), nlohmann::json(reference_profile("pi3-like")));
  EXPECT_EQ(c.long_budget, Budget::evals(150));
  EXPECT_EQ(c.suts.size(), 21u);
}

TEST(CampaignConfig, RejectsBadInput) {
  auto j = small_config_json();
  j["suts"][1]["alias"] = "a";
  EXPECT_THROW(campaign_config_from_json(j), ConfigError);
  j = small_config_json();
  j["suts"][1]["alias"] = "x/y";
  EXPECT_THROW(campaign_config_from_json(j), ConfigError);
  j = small_config_json();
  j["comparison_budget"] = "soon";
  EXPECT_THROW(campaign_config_from_json(j), ConfigError);
  j = small_config_json();
  j["platform"]["core_count"] = 1;
  EXPECT_THROW(campaign_config_from_json(j), ConfigError);
  j = small_config_json();
  j.erase("platform");
  EXPECT_THROW(campaign_config_from_json(j), ConfigError);
  j = small_config_json();
  j["init_points"] = 1;
  EXPECT_THROW(campaign_config_from_json(j), ConfigError);
}

TEST(CampaignConfig, JsonRoundTrip) {
  const auto c = small_config();
  const nlohmann::json j = c;
  const auto back = campaign_config_from_json(j);
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Campaign, EndToEndMatchesBruteForceOracle) {
  const auto c = small_config();
  const auto dir = fresh_dir("e2e");
  const auto out = run(c, dir);
  EXPECT_EQ(out.phases_run, 5u);
  EXPECT_TRUE(out.traceability_problems.empty());
  const auto tuned = tuned_from_json(read_json(dir / kLongTuneDir / "tuned.json"));
  ASSERT_EQ(tuned.size(), 3u);
  EXPECT_EQ(out.selection.environment.label, hostile::testing::brute_force_choice(c, tuned));
  // every artifact the report is built from exists
  for (const char* f : {"01-comparison/verdicts.json", "02-long-tune/tuned.json", "03-environment/rankings.csv",
                        "03-environment/environment.json", "04-bench/summary.json", "05-quantile-study/variance.csv",
                        "report/report.json", "report/table_comparison.csv", "report/table_tuning.csv",
                        "report/rankings_snippet.csv", "report/table_bench.csv", "report/plot_quantile_variance.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  fs::remove_all(dir);
}

TEST(Campaign, BenchNumbersAreConsistent) {
  const auto c = small_config();
  const auto dir = fresh_dir("bench");
  const auto out = run(c, dir);
  ASSERT_EQ(out.bench.entries.size(), 4u);
  std::vector<double> s;
  for (const auto& e : out.bench.entries) {
    EXPECT_DOUBLE_EQ(e.slowdown, static_cast<double>(e.contended.metric_value_ns) /
                                     static_cast<double>(e.isolated.metric_value_ns));
    s.push_back(e.slowdown);
  }
  EXPECT_DOUBLE_EQ(out.bench.geometric_mean, stats::geometric_mean(s));
  // SUT d has no sensitivity at all
  EXPECT_EQ(out.bench.entries[3].slowdown, 1.0);
  EXPECT_FALSE(out.bench.entries[3].significant);
  EXPECT_EQ(out.bench.unconverged, 0u);
  fs::remove_all(dir);
}

TEST(Campaign, ZeroCouplingGivesNoSlowdown) {
  const auto c = small_config("zero-coupling");
  const auto dir = fresh_dir("zero");
  const auto out = run(c, dir);
  for (const auto& e : out.bench.entries) {
    EXPECT_EQ(e.slowdown, 1.0) << e.alias;
    EXPECT_FALSE(e.significant) << e.alias;
  }
  EXPECT_EQ(out.bench.geometric_mean, 1.0);
  // all environments tie, so the lexicographically first wins
  EXPECT_EQ(out.selection.environment.label, "BBB");
  const auto tuned = tuned_from_json(read_json(dir / kLongTuneDir / "tuned.json"));
  for (const auto& [r, t] : tuned) EXPECT_EQ(t.slowdown, 1.0);
  fs::remove_all(dir);
}

TEST(Campaign, ResumesToTheSameReport) {
  const auto c = small_config();
  const auto ref_dir = fresh_dir("resume_ref");
  run(c, ref_dir);
  const std::string reference = read_file((ref_dir / "report" / "report.json").string());
  for (std::size_t stop = 1; stop <= 4; ++stop) {
    const auto dir = fresh_dir("resume_" + std::to_string(stop));
    EXPECT_EQ(run(c, dir, stop).phases_run, stop);
    EXPECT_FALSE(fs::exists(dir / "report" / "report.json"));
    run(c, dir);
    EXPECT_EQ(read_file((dir / "report" / "report.json").string()), reference) << "stopped after " << stop;
    fs::remove_all(dir);
  }
  fs::remove_all(ref_dir);
}

TEST(Campaign, ResumesFromPartialArtifacts) {
  const auto c = small_config();
  const auto ref_dir = fresh_dir("partial_ref");
  run(c, ref_dir);
  const std::string reference = read_file((ref_dir / "report" / "report.json").string());

  // drop DONE markers and some outputs, tear a score file
  const auto dir = fresh_dir("partial");
  fs::copy(ref_dir, dir, fs::copy_options::recursive);
  fs::remove(dir / kEnvironmentDir / "DONE");
  fs::remove(dir / kEnvironmentDir / "rankings.csv");
  const auto scores = dir / kEnvironmentDir / "scores-bus.jsonl";
  const std::string text = read_file(scores.string());
  write_file(scores.string(), text.substr(0, text.size() / 2));
  fs::remove(dir / kBenchDir / "DONE");
  fs::remove(dir / kBenchDir / "sut-b.json");
  fs::remove(dir / kComparisonDir / "DONE");
  fs::remove(dir / kComparisonDir / "results" / "test-board" / "memory" / "SA" / "2.jsonl");
  fs::remove_all(dir / "report");
  run(c, dir);
  EXPECT_EQ(read_file((dir / "report" / "report.json").string()), reference);
  fs::remove_all(dir);
  fs::remove_all(ref_dir);
}

TEST(Campaign, ChangedInputsInvalidateDownstreamPhases) {
  auto c = small_config();
  const auto dir = fresh_dir("invalidate");
  run(c, dir);
  const std::string marker = read_file((dir / kLongTuneDir / "DONE").string());
  c.long_seed = 8;
  run(c, dir);
  EXPECT_NE(read_file((dir / kLongTuneDir / "DONE").string()), marker);
  // old seed's result file was discarded with the stale phase
  EXPECT_FALSE(fs::exists(tuning_result_path((dir / kLongTuneDir).string(), "test-board", ResourceKind::Cache,
                                             tuned_from_json(read_json(dir / kLongTuneDir / "tuned.json"))
                                                 .at(ResourceKind::Cache)
                                                 .strategy,
                                             7)));
  fs::remove_all(dir);
}

TEST(Campaign, DeterministicAcrossDirectories) {
  const auto c = small_config();
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  run(c, a);
  run(c, b);
  for (const char* f : {"report/report.json", "03-environment/rankings.csv", "04-bench/sut-c.json"})
    EXPECT_EQ(read_file((a / f).string()), read_file((b / f).string())) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Traceability, ReportResolvesAndTamperingIsCaught) {
  const auto c = small_config();
  const auto dir = fresh_dir("trace");
  const auto out = run(c, dir);
  ASSERT_TRUE(out.traceability_problems.empty());
  const auto report = read_json(dir / "report" / "report.json");
  EXPECT_TRUE(verify_traceability(report, dir).empty());
  EXPECT_TRUE(report.contains("comparison"));
  EXPECT_TRUE(report.contains("tuning"));
  EXPECT_TRUE(report.contains("rankings"));
  EXPECT_TRUE(report.contains("environment"));
  EXPECT_TRUE(report.contains("bench"));
  EXPECT_TRUE(report.contains("quantile_variance"));

  auto tampered = report;
  tampered["bench"]["suts"]["a"]["slowdown"]["value"] = 42.0;
  EXPECT_FALSE(verify_traceability(tampered, dir).empty());
  auto bare = report;
  bare["extra"] = 3.5;
  const auto problems = verify_traceability(bare, dir);
  ASSERT_EQ(problems.size(), 1u);
  EXPECT_NE(problems[0].find("untraced"), std::string::npos);
  auto dangling = report;
  dangling["tuning"]["cache"]["max_slowdown"]["pointer"] = "/0/nope";
  EXPECT_FALSE(verify_traceability(dangling, dir).empty());
  // editing an artifact after the fact is also caught
  auto summary = read_json(dir / kBenchDir / "summary.json");
  summary["geometric_mean"] = 9.0;
  write_json(dir / kBenchDir / "summary.json", summary);
  EXPECT_FALSE(verify_traceability(report, dir).empty());
  fs::remove_all(dir);
}

TEST(Artifacts, LoadersByExtension) {
  const auto dir = fresh_dir("artifacts");
  fs::create_directories(dir);
  write_file((dir / "a.csv").string(), "x,y\n1.5,foo\n");
  write_file((dir / "b.jsonl").string(), "{\"k\":1}\n{\"k\":2}\n");
  const auto csv = load_artifact(dir / "a.csv");
  EXPECT_EQ(csv[0]["x"], 1.5);
  EXPECT_EQ(csv[0]["y"], "foo");
  EXPECT_EQ(load_artifact(dir / "b.jsonl")[1]["k"], 2);
  write_file((dir / "c.txt").string(), "");
  EXPECT_THROW(load_artifact(dir / "c.txt"), ConfigError);
  fs::remove_all(dir);
}

TEST(Phase, HashMismatchWipesDirectory) {
  const auto dir = fresh_dir("phase");
  {
    Phase p(dir, {{"a", 1}});
    write_file((dir / "data").string(), "x");
    p.mark_done();
    EXPECT_TRUE(p.done());
  }
  EXPECT_TRUE(Phase(dir, {{"a", 1}}).done());
  EXPECT_TRUE(fs::exists(dir / "data"));
  Phase q(dir, {{"a", 2}});
  EXPECT_FALSE(q.done());
  EXPECT_FALSE(fs::exists(dir / "data"));
  fs::remove_all(dir);
}

TEST(Comparison, VerdictsForEveryResource) {
  const auto c = small_config();
  const auto dir = fresh_dir("comparison");
  SyntheticBackend backend(c.synthetic_profile());
  const auto out = run_strategy_comparison(c, backend, dir);
  ASSERT_EQ(out.verdicts.size(), 3u);
  for (const auto& [r, v] : out.verdicts) {
    EXPECT_EQ(v.ordering.size(), 3u);
    EXPECT_EQ(out.runs.at(r).at(Strategy::BO).size(), 3u);
  }
  EXPECT_EQ(load_verdicts(dir).size(), 3u);
  fs::remove_all(dir);
}
