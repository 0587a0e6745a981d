// hostile: tune enemy processes, build hostile environments, benchmark SUTs.
//
// Exit codes: 0 ok, 2 configuration error, 3 environment/hardware error,
// 4 finished but some measurement did not converge.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "hostile/campaign.hpp"
#include "hostile/environment.hpp"
#include "hostile/real_backend.hpp"
#include "hostile/tuning.hpp"

namespace fs = std::filesystem;
using namespace hostile;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitEnvironment = 3;
constexpr int kExitUnconverged = 4;

struct Globals {
  std::string platform;
  std::string config;
  std::string backend;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string budget;
  std::string out = "out";
  std::string metric;
  std::string log_level = "info";
};

// Campaign config from --config, or defaults around --platform, with the
// global overrides applied.
CampaignConfig resolve_config(const Globals& g) {
  nlohmann::json j = nlohmann::json::object();
  fs::path base;
  if (!g.config.empty()) {
    try {
      j = nlohmann::json::parse(read_file(g.config));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad config " + g.config + ": " + e.what());
    }
    base = fs::path(g.config).parent_path();
  }
  if (!g.platform.empty()) j["platform"] = fs::absolute(g.platform).string();
  if (!j.contains("platform")) throw ConfigError("need --platform <file> or --config <file>");
  if (!g.profile.empty()) j["synthetic_profile"] = g.profile;
  if (!g.metric.empty()) j["metric"] = g.metric;
  if (!g.backend.empty()) {
    // resolve the platform first so that the override can be applied to it
    auto c = campaign_config_from_json(j, base);
    c.platform.backend = backend_from_string(g.backend);
    j["platform"] = c.platform;
  }
  auto c = campaign_config_from_json(j, base);
  if (g.seed) {
    c.seed = *g.seed;
    c.long_seed = *g.seed;
  }
  if (!g.budget.empty()) {
    c.comparison_budget = Budget::parse(g.budget);
    c.long_budget = c.comparison_budget;
  }
  c.validate();
  return c;
}

std::unique_ptr<Backend> make_campaign_backend(const CampaignConfig& c) {
  if (c.platform.backend == BackendKind::Real) return std::make_unique<RealBackend>(c.platform);
  return std::make_unique<SyntheticBackend>(c.synthetic_profile());
}

std::vector<ResourceKind> parse_resources(const std::vector<std::string>& names, const CampaignConfig& c) {
  if (names.empty()) return c.resources;
  std::vector<ResourceKind> out;
  for (const auto& n : names) out.push_back(resource_from_string(n));
  return out;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Auto-tuned hostile environments for multi-core interference testing"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "master seed");
  app.add_option("--platform", g.platform, "platform descriptor JSON");
  app.add_option("--config", g.config, "campaign config JSON");
  app.add_option("--backend", g.backend, "real|synthetic (overrides the platform)")
      ->check(CLI::IsMember({"real", "synthetic"}));
  app.add_option("--profile", g.profile, "synthetic profile name or JSON file");
  app.add_option("--budget", g.budget, "search budget: seconds, 30m, 2h, or Nevals");
  app.add_option("--metric", g.metric, "median | max | quantile[:q]");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error")->capture_default_str();

  // tune
  auto* tune = app.add_subcommand("tune", "tune one enemy template");
  std::string tune_resource, tune_strategy = "BO";
  tune->add_option("--resource", tune_resource, "cache|bus|memory")->required();
  tune->add_option("--strategy", tune_strategy, "RAN|SA|BO")->capture_default_str();

  // compare-strategies
  auto* compare = app.add_subcommand("compare-strategies", "seeded tuning runs per strategy plus rank-sum verdicts");
  std::vector<std::string> cmp_resources, cmp_strategies;
  std::size_t repetitions = 0;
  double threshold = -1;
  compare->add_option("--resource", cmp_resources, "resources (default: all)");
  compare->add_option("--strategies", cmp_strategies, "strategies (default: RAN SA BO)");
  compare->add_option("--repetitions", repetitions, "runs per strategy, seeds seed..seed+k-1");
  compare->add_option("--threshold", threshold, "p-value cut for '<' (default 0.05)");

  // rank-env
  auto* rank = app.add_subcommand("rank-env", "rank all hostile environments against each victim");
  std::string tuned_file;
  std::vector<std::string> rank_resources;
  rank->add_option("--tuned", tuned_file, "tuned enemies JSON (as written by campaign phase 2)")->required();
  rank->add_option("--resource", rank_resources, "victims to rank against (default: all tuned)");

  // select-env
  auto* select = app.add_subcommand("select-env", "pick a Pareto-optimal environment from rankings");
  std::string rankings_file;
  select->add_option("--rankings", rankings_file, "rankings CSV")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "benchmark SUTs alone and in the selected environment");
  std::string env_file, bench_tuned;
  bench->add_option("--environment", env_file, "environment.json")->required();
  bench->add_option("--tuned", bench_tuned, "tuned enemies JSON")->required();

  // report
  auto* report = app.add_subcommand("report", "rebuild and verify the report of a campaign directory");

  // campaign run
  auto* campaign = app.add_subcommand("campaign", "full methodology");
  campaign->require_subcommand(1);
  auto* campaign_run = campaign->add_subcommand("run", "run (or resume) every phase");
  std::size_t stop_after = 5;
  campaign_run->add_option("--stop-after", stop_after, "stop after N phases (1-5)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  if (*seed_opt) g.seed = seed_value;
  spdlog::set_default_logger(spdlog::stderr_color_mt("hostile"));
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    const fs::path out = g.out;

    if (*report) {
      const auto r = write_report(out);
      const auto problems = verify_traceability(r, out);
      for (const auto& p : problems) spdlog::error("traceability: {}", p);
      std::cout << (out / kReportDir / "report.json").string() << "\n";
      return problems.empty() ? 0 : kExitConfig;
    }

    if (*select) {
      const auto rankings = parse_rankings_csv(read_file(rankings_file));
      const auto choice = pareto_choose(rankings);
      write_json(out / "environment.json", environment_json(choice));
      print_json(environment_json(choice));
      return 0;
    }

    auto config = resolve_config(g);
    auto backend = make_campaign_backend(config);

    if (*tune) {
      const auto r = resource_from_string(tune_resource);
      const auto s = strategy_from_string(tune_strategy);
      if (g.budget.empty()) throw ConfigError("tune needs --budget");
      const auto seed = g.seed.value_or(1);
      const auto result = tune_enemy(*backend, r, s, config.platform, Budget::parse(g.budget), config.metric, seed,
                                     config.tune);
      const auto path = tuning_result_path(out.string(), config.platform.name, r, s, seed);
      save_tuning_result(path, result);
      print_json({{"resource", to_string(r)},
                  {"strategy", to_string(s)},
                  {"best_value", result.best_value},
                  {"best_params", result.best_params},
                  {"evaluations", result.history.size()},
                  {"file", path}});
      return 0;
    }

    if (*compare) {
      config.resources = parse_resources(cmp_resources, config);
      if (!cmp_strategies.empty()) {
        config.strategies.clear();
        for (const auto& s : cmp_strategies) config.strategies.push_back(strategy_from_string(s));
      }
      if (repetitions > 0) {
        config.seeds.clear();
        for (std::size_t i = 0; i < repetitions; ++i) config.seeds.push_back(g.seed.value_or(1) + i);
      }
      if (threshold >= 0) config.wilcoxon_threshold = threshold;
      const auto outcome = run_strategy_comparison(config, *backend, out);
      nlohmann::json j = nlohmann::json::object();
      for (const auto& [r, v] : outcome.verdicts) j[to_string(r)] = v;
      print_json(j);
      return 0;
    }

    if (*rank) {
      const auto tuned = tuned_from_json(read_json(tuned_file));
      std::vector<ResourceKind> victims;
      if (rank_resources.empty())
        for (const auto& [r, _] : tuned) victims.push_back(r);
      else
        victims = parse_resources(rank_resources, config);
      std::set<ResourceKind> letters;
      for (const auto& [r, _] : tuned) letters.insert(r);
      const auto envs = enumerate_environments(config.platform.core_count, letters, config.platform.sut_core);
      std::vector<RankedEnvironments> rankings;
      for (auto r : victims)
        rankings.push_back(rank_environments(*backend, r, envs, tuned_params(tuned), config.platform, config.metric,
                                             config.measure, {}, {},
                                             derive_seed(config.seed, {3, static_cast<std::uint64_t>(r)})));
      fs::create_directories(out);
      write_file((out / "rankings.csv").string(), rankings_csv(rankings));
      std::cout << rankings_csv(rankings);
      return 0;
    }

    if (*bench) {
      const auto env = read_json(env_file).get<HostileEnvironment>();
      const auto tuned = tuned_from_json(read_json(bench_tuned));
      if (config.suts.empty()) throw ConfigError("bench needs SUTs (the \"suts\" list of --config)");
      const auto summary = run_bench(config, *backend, env, tuned, out, "standalone");
      nlohmann::json j = nlohmann::json::object();
      for (const auto& e : summary.entries) j[e.alias] = {{"slowdown", e.slowdown}, {"significant", e.significant}};
      j["geometric_mean"] = summary.geometric_mean;
      print_json(j);
      return summary.unconverged ? kExitUnconverged : 0;
    }

    if (*campaign_run) {
      const auto outcome = run_full_campaign(config, *backend, out, {stop_after});
      if (outcome.phases_run < 5) {
        spdlog::info("stopped after {} phases", outcome.phases_run);
        return 0;
      }
      std::cout << (out / kReportDir / "report.json").string() << "\n";
      if (!outcome.traceability_problems.empty()) return kExitConfig;
      return outcome.bench.unconverged ? kExitUnconverged : 0;
    }
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kExitConfig;
  } catch (const InputError& e) {
    spdlog::error("input error: {}", e.what());
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("configuration error: {}", e.what());
    return kExitConfig;
  } catch (const EnvironmentError& e) {
    spdlog::error("environment error: {}", e.what());
    return kExitEnvironment;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("environment error: {}", e.what());
    return kExitEnvironment;
  }
  return 0;
}
