#pragma once

// Whole-methodology driver: strategy comparison, long tuning with the
// winners, environment selection, SUT benchmarking, report. Each phase owns a
// directory under the output root and is skipped when its inputs hash
// matches a completed earlier run.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"

#include "hostile/backend.hpp"
#include "hostile/environment.hpp"
#include "hostile/errors.hpp"
#include "hostile/harness.hpp"
#include "hostile/params.hpp"
#include "hostile/platform.hpp"
#include "hostile/search.hpp"
#include "hostile/stats.hpp"
#include "hostile/tuning.hpp"
#include "hostile/util.hpp"

namespace hostile {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const SutSpec& s) {
  nlohmann::json sens = nlohmann::json::object();
  for (auto r : kAllResources) sens[to_string(r)] = s.synthetic.sensitivity[index(r)];
  j = nlohmann::json{{"alias", s.alias},
                     {"name", s.name},
                     {"command", s.command},
                     {"synthetic", {{"baseline_ns", s.synthetic.baseline_ns}, {"sensitivity", sens}}}};
}

inline void from_json(const nlohmann::json& j, SutSpec& s) {
  s = SutSpec{};
  s.alias = j.at("alias").get<std::string>();
  s.name = j.value("name", s.alias);
  s.command = j.value("command", std::string{});
  if (j.contains("synthetic")) {
    const auto& syn = j["synthetic"];
    s.synthetic.baseline_ns = syn.value("baseline_ns", s.synthetic.baseline_ns);
    if (syn.contains("sensitivity"))
      for (auto r : kAllResources) s.synthetic.sensitivity[index(r)] = syn["sensitivity"].value(to_string(r), 0.0);
  }
}

inline void to_json(nlohmann::json& j, const MeasureOptions& o) {
  j = nlohmann::json{{"initial_samples", o.initial_samples}, {"batch", o.batch},
                     {"max_valid", o.max_valid},             {"max_attempts", o.max_attempts},
                     {"tolerance", o.tolerance},             {"confidence", o.confidence},
                     {"max_consecutive_start_failures", o.max_consecutive_start_failures}};
}

inline void from_json(const nlohmann::json& j, MeasureOptions& o) {
  o = MeasureOptions{};
  o.initial_samples = j.value("initial_samples", o.initial_samples);
  o.batch = j.value("batch", o.batch);
  o.max_valid = j.value("max_valid", o.max_valid);
  o.max_attempts = j.value("max_attempts", o.max_attempts);
  o.tolerance = j.value("tolerance", o.tolerance);
  o.confidence = j.value("confidence", o.confidence);
  o.max_consecutive_start_failures = j.value("max_consecutive_start_failures", o.max_consecutive_start_failures);
}

struct QuantileStudy {
  std::size_t sets = 40;
  std::size_t set_size = 250;
  std::vector<double> levels{0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.99, 1.0};
};

struct CampaignConfig {
  PlatformDescriptor platform;
  std::optional<SyntheticProfile> profile;  // overrides platform.synthetic_profile
  SlowdownMetric metric = SlowdownMetric::quantile(0.90);
  std::vector<ResourceKind> resources{kAllResources.begin(), kAllResources.end()};
  std::vector<Strategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
  Budget comparison_budget = Budget::wall(2 * 3600);
  Budget long_budget = Budget::wall(8 * 3600);
  std::vector<std::uint64_t> seeds{1, 2, 3};  // one comparison run per seed
  std::uint64_t long_seed = 1;
  std::uint64_t seed = 1;  // environment, bench and study phases
  double wilcoxon_threshold = 0.05;
  TuneOptions tune;
  MeasureOptions measure;  // environment ranking and bench
  QuantileStudy quantile_study;
  std::vector<SutSpec> suts;

  void validate() const {
    platform.validate();
    if (profile) profile->validate();
    if (!comparison_budget.valid() || !long_budget.valid()) throw ConfigError("campaign budgets must be > 0");
    if (resources.empty()) throw ConfigError("campaign needs at least one resource");
    if (strategies.empty()) throw ConfigError("campaign needs at least one strategy");
    if (seeds.empty()) throw ConfigError("campaign needs at least one comparison seed");
    if (!(wilcoxon_threshold > 0.0 && wilcoxon_threshold <= 1.0))
      throw ConfigError("wilcoxon_threshold must be in (0, 1]");
    if (tune.bayes.init_points < 2) throw ConfigError("init_points must be >= 2");
    std::set<std::string> aliases;
    for (const auto& s : suts) {
      if (s.alias.empty()) throw ConfigError("SUT alias must not be empty");
      if (s.alias.find_first_of("/\\ ,") != std::string::npos) throw ConfigError("SUT alias '" + s.alias + "' has / , or space");
      if (!aliases.insert(s.alias).second) throw ConfigError("duplicate SUT alias '" + s.alias + "'");
    }
    if (quantile_study.sets == 1) throw ConfigError("quantile_study.sets must be 0 (off) or >= 2");
  }

  SyntheticProfile synthetic_profile() const {
    return profile ? *profile : load_synthetic_profile(platform.synthetic_profile);
  }
};

inline void to_json(nlohmann::json& j, const CampaignConfig& c) {
  std::vector<std::string> resources, strategies;
  for (auto r : c.resources) resources.push_back(to_string(r));
  for (auto s : c.strategies) strategies.push_back(to_string(s));
  j = nlohmann::json{{"platform", c.platform},
                     {"metric", c.metric.to_string()},
                     {"resources", resources},
                     {"strategies", strategies},
                     {"comparison_budget", c.comparison_budget.to_string()},
                     {"long_budget", c.long_budget.to_string()},
                     {"seeds", c.seeds},
                     {"long_seed", c.long_seed},
                     {"seed", c.seed},
                     {"wilcoxon_threshold", c.wilcoxon_threshold},
                     {"init_points", c.tune.bayes.init_points},
                     {"tuning_measure", c.tune.measure},
                     {"measure", c.measure},
                     {"quantile_study",
                      {{"sets", c.quantile_study.sets},
                       {"set_size", c.quantile_study.set_size},
                       {"levels", c.quantile_study.levels}}},
                     {"suts", c.suts}};
  if (c.profile) j["synthetic_profile"] = *c.profile;
}

inline bool is_bundled_profile(const std::string& name) {
  return name == "pi3-like" || name == "410c-like" || name == "zero-coupling";
}

// A platform's profile file is relative to the file that names it.
inline void resolve_profile_path(PlatformDescriptor& p, const fs::path& dir) {
  const fs::path path = p.synthetic_profile;
  if (!is_bundled_profile(p.synthetic_profile) && path.is_relative() && !dir.empty())
    p.synthetic_profile = fs::absolute(dir / path).lexically_normal().string();
}

// `base_dir` resolves relative file paths in the config.
inline CampaignConfig campaign_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  CampaignConfig c;
  try {
    const auto& p = j.at("platform");
    if (p.is_string()) {
      fs::path path = p.get<std::string>();
      if (path.is_relative()) path = base_dir / path;
      c.platform = nlohmann::json::parse(read_file(path.string())).get<PlatformDescriptor>();
      resolve_profile_path(c.platform, path.parent_path());
    } else {
      c.platform = p.get<PlatformDescriptor>();
      resolve_profile_path(c.platform, base_dir);
    }
    if (j.contains("synthetic_profile")) {
      const auto& sp = j["synthetic_profile"];
      if (sp.is_string()) {
        fs::path path = sp.get<std::string>();
        const std::string name = path.string();
        const bool bundled = is_bundled_profile(name);
        if (!bundled && path.is_relative()) path = base_dir / path;
        c.profile = load_synthetic_profile(bundled ? name : path.string());
      } else {
        c.profile = sp.get<SyntheticProfile>();
      }
    }
    if (j.value("noise_free", false)) c.profile = c.synthetic_profile().noise_free();
    c.metric = SlowdownMetric::parse(j.value("metric", std::string("quantile:0.9")));
    if (j.contains("resources")) {
      c.resources.clear();
      for (const auto& r : j["resources"]) c.resources.push_back(resource_from_string(r.get<std::string>()));
    }
    if (j.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : j["strategies"]) c.strategies.push_back(strategy_from_string(s.get<std::string>()));
    }
    if (j.contains("comparison_budget")) c.comparison_budget = Budget::parse(j["comparison_budget"].get<std::string>());
    if (j.contains("long_budget")) c.long_budget = Budget::parse(j["long_budget"].get<std::string>());
    c.seeds = j.value("seeds", c.seeds);
    c.long_seed = j.value("long_seed", c.long_seed);
    c.seed = j.value("seed", c.seed);
    c.wilcoxon_threshold = j.value("wilcoxon_threshold", c.wilcoxon_threshold);
    c.tune.bayes.init_points = j.value("init_points", c.tune.bayes.init_points);
    if (j.contains("tuning_measure")) c.tune.measure = j["tuning_measure"].get<MeasureOptions>();
    if (j.contains("measure")) c.measure = j["measure"].get<MeasureOptions>();
    if (j.contains("quantile_study")) {
      const auto& q = j["quantile_study"];
      c.quantile_study.sets = q.value("sets", c.quantile_study.sets);
      c.quantile_study.set_size = q.value("set_size", c.quantile_study.set_size);
      c.quantile_study.levels = q.value("levels", c.quantile_study.levels);
    }
    c.suts = j.value("suts", std::vector<SutSpec>{});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad campaign config: ") + e.what());
  }
  c.validate();
  return c;
}

inline CampaignConfig load_campaign_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad campaign config " + path + ": " + e.what());
  }
  return campaign_config_from_json(j, fs::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Phase checkpoints
// ---------------------------------------------------------------------------

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path.string(), dump_json(j));
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad JSON in " + path.string() + ": " + e.what());
  }
}

// A phase directory keyed by the hash of everything the phase depends on.
// Stale contents (different hash) are wiped on open.
class Phase {
 public:
  Phase(const fs::path& dir, const nlohmann::json& inputs) : dir_(dir), hash_(hex64(fnv1a(inputs.dump()))) {
    const auto marker = dir_ / "inputs.json";
    if (fs::exists(marker)) {
      std::string old;
      try {
        old = read_json(marker).at("hash").get<std::string>();
      } catch (const std::exception&) {
      }
      if (old != hash_) {
        spdlog::info("inputs of {} changed; discarding previous results", dir_.filename().string());
        fs::remove_all(dir_);
      }
    }
    fs::create_directories(dir_);
    if (!fs::exists(marker)) write_json(marker, {{"hash", hash_}, {"inputs", inputs}});
  }

  bool done() const {
    const auto f = dir_ / "DONE";
    return fs::exists(f) && read_file(f.string()) == hash_;
  }
  void mark_done() const { write_file((dir_ / "DONE").string(), hash_); }

  const fs::path& dir() const { return dir_; }
  const std::string& hash() const { return hash_; }

 private:
  fs::path dir_;
  std::string hash_;
};

inline const char* kComparisonDir = "01-comparison";
inline const char* kLongTuneDir = "02-long-tune";
inline const char* kEnvironmentDir = "03-environment";
inline const char* kBenchDir = "04-bench";
inline const char* kQuantileStudyDir = "05-quantile-study";
inline const char* kReportDir = "report";

// Content hash of the backend model, so that switching profiles invalidates
// every phase.
inline nlohmann::json backend_identity(const CampaignConfig& c) {
  if (c.platform.backend == BackendKind::Real) return {{"kind", "real"}};
  return {{"kind", "synthetic"}, {"profile", c.synthetic_profile()}};
}

// ---------------------------------------------------------------------------
// Phase 1: strategy comparison
// ---------------------------------------------------------------------------

struct ComparisonOutcome {
  std::map<ResourceKind, stats::ComparisonVerdict> verdicts;
  std::map<ResourceKind, std::map<Strategy, std::vector<TuningResult>>> runs;
};

inline nlohmann::json comparison_inputs(const CampaignConfig& c) {
  std::vector<std::string> resources, strategies;
  for (auto r : c.resources) resources.push_back(to_string(r));
  for (auto s : c.strategies) strategies.push_back(to_string(s));
  return {{"phase", "comparison"},
          {"platform", c.platform},
          {"backend", backend_identity(c)},
          {"metric", c.metric.to_string()},
          {"resources", resources},
          {"strategies", strategies},
          {"budget", c.comparison_budget.to_string()},
          {"seeds", c.seeds},
          {"threshold", c.wilcoxon_threshold},
          {"init_points", c.tune.bayes.init_points},
          {"measure", c.tune.measure}};
}

// k seeded tuning runs per (resource, strategy); verdicts from the best
// values. Finished runs found on disk are reused.
inline ComparisonOutcome run_strategy_comparison(const CampaignConfig& c, Backend& backend, const fs::path& dir) {
  c.validate();
  Phase phase(dir, comparison_inputs(c));
  ComparisonOutcome out;
  nlohmann::json verdicts = nlohmann::json::object();
  for (auto r : c.resources) {
    std::vector<std::pair<std::string, std::vector<double>>> results;
    for (auto s : c.strategies) {
      std::vector<double> best;
      for (auto seed : c.seeds) {
        const auto path = tuning_result_path(dir.string(), c.platform.name, r, s, seed);
        TuningResult tr;
        if (fs::exists(path)) {
          tr = load_tuning_result(path);
        } else {
          tr = tune_enemy(backend, r, s, c.platform, c.comparison_budget, c.metric, seed, c.tune);
          save_tuning_result(path, tr);
        }
        best.push_back(tr.best_value);
        out.runs[r][s].push_back(std::move(tr));
      }
      results.emplace_back(to_string(s), std::move(best));
    }
    auto v = stats::compare_strategies(results, c.wilcoxon_threshold);
    spdlog::info("{}: {}", to_string(r), v.render());
    verdicts[to_string(r)] = v;
    out.verdicts[r] = std::move(v);
  }
  write_json(dir / "verdicts.json", verdicts);
  phase.mark_done();
  return out;
}

inline std::map<ResourceKind, stats::ComparisonVerdict> load_verdicts(const fs::path& dir) {
  std::map<ResourceKind, stats::ComparisonVerdict> out;
  const auto j = read_json(dir / "verdicts.json");
  for (const auto& [k, v] : j.items())
    out[resource_from_string(k)] = v.get<stats::ComparisonVerdict>();
  return out;
}

// ---------------------------------------------------------------------------
// Phase 2: long tuning with the winning strategies
// ---------------------------------------------------------------------------

struct TunedEnemy {
  Strategy strategy = Strategy::RAN;
  EnemyParams params;
  double slowdown = 0.0;
  std::string source;  // tuning result file, relative to the campaign root
};

using TunedSet = std::map<ResourceKind, TunedEnemy>;

inline std::map<ResourceKind, EnemyParams> tuned_params(const TunedSet& t) {
  std::map<ResourceKind, EnemyParams> m;
  for (const auto& [r, e] : t) m[r] = e.params;
  return m;
}

inline nlohmann::json tuned_json(const TunedSet& t) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [r, e] : t)
    j[to_string(r)] = {{"strategy", to_string(e.strategy)},
                       {"params", e.params},
                       {"slowdown", e.slowdown},
                       {"source", e.source}};
  return j;
}

inline TunedSet tuned_from_json(const nlohmann::json& j) {
  TunedSet t;
  try {
    for (const auto& [k, v] : j.items()) {
      const auto r = resource_from_string(k);
      TunedEnemy e;
      e.strategy = strategy_from_string(v.value("strategy", std::string("RAN")));
      e.params = enemy_params_from_json(v.at("params"), r);
      e.slowdown = v.value("slowdown", 0.0);
      e.source = v.value("source", std::string{});
      t[r] = e;
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad tuned-enemy file: ") + ex.what());
  }
  return t;
}

inline TunedSet run_long_tuning(const CampaignConfig& c, Backend& backend,
                                const std::map<ResourceKind, stats::ComparisonVerdict>& verdicts, const fs::path& root,
                                const std::string& upstream_hash) {
  const fs::path dir = root / kLongTuneDir;
  nlohmann::json winners = nlohmann::json::object();
  for (auto r : c.resources) winners[to_string(r)] = verdicts.at(r).winner();
  Phase phase(dir, {{"phase", "long-tune"},
                    {"upstream", upstream_hash},
                    {"winners", winners},
                    {"budget", c.long_budget.to_string()},
                    {"seed", c.long_seed}});
  if (phase.done()) return tuned_from_json(read_json(dir / "tuned.json"));
  TunedSet tuned;
  for (auto r : c.resources) {
    const auto s = strategy_from_string(verdicts.at(r).winner());
    const auto path = tuning_result_path(dir.string(), c.platform.name, r, s, c.long_seed);
    TuningResult tr;
    if (fs::exists(path)) {
      tr = load_tuning_result(path);
    } else {
      tr = tune_enemy(backend, r, s, c.platform, c.long_budget, c.metric, c.long_seed, c.tune);
      save_tuning_result(path, tr);
    }
    tuned[r] = {s, tr.best_params, tr.best_value, fs::relative(path, root).generic_string()};
  }
  write_json(dir / "tuned.json", tuned_json(tuned));
  phase.mark_done();
  return tuned;
}

// ---------------------------------------------------------------------------
// Phase 3: enumerate, rank, select
// ---------------------------------------------------------------------------

inline ParetoChoice run_environment_selection(const CampaignConfig& c, Backend& backend, const TunedSet& tuned,
                                              const fs::path& dir, const std::string& upstream_hash) {
  Phase phase(dir, {{"phase", "environment"},
                    {"upstream", upstream_hash},
                    {"tuned", tuned_json(tuned)},
                    {"seed", c.seed},
                    {"measure", c.measure}});
  if (phase.done()) {
    const auto rankings = parse_rankings_csv(read_file((dir / "rankings.csv").string()), c.platform.sut_core);
    return pareto_choose(rankings);
  }
  const std::set<ResourceKind> resources(c.resources.begin(), c.resources.end());
  const auto envs = enumerate_environments(c.platform.core_count, resources, c.platform.sut_core);
  const auto params = tuned_params(tuned);
  std::vector<RankedEnvironments> rankings;
  for (auto r : c.resources) {
    // scores of an interrupted run, one JSON object per line
    const fs::path scores_path = dir / ("scores-" + to_string(r) + ".jsonl");
    std::map<std::string, double> known;
    if (fs::exists(scores_path)) {
      std::istringstream in(read_file(scores_path.string()));
      std::string line;
      while (std::getline(in, line)) {
        try {
          const auto j = nlohmann::json::parse(line);
          known[j.at("label").get<std::string>()] = j.at("score").get<double>();
        } catch (const nlohmann::json::exception&) {
          break;  // torn last line
        }
      }
    }
    std::string log;
    for (const auto& [label, score] : known) log += nlohmann::json{{"label", label}, {"score", score}}.dump() + "\n";
    auto on_score = [&](const HostileEnvironment& e, double score) {
      log += nlohmann::json{{"label", e.label}, {"score", score}}.dump() + "\n";
      write_file(scores_path.string(), log);
    };
    rankings.push_back(rank_environments(backend, r, envs, params, c.platform, c.metric, c.measure, on_score, known,
                                         derive_seed(c.seed, {3, static_cast<std::uint64_t>(r)})));
  }
  write_file((dir / "rankings.csv").string(), rankings_csv(rankings));
  const auto choice = pareto_choose(rankings);
  write_json(dir / "environment.json", environment_json(choice));
  spdlog::info("selected environment {} ({})", choice.environment.label, choice.rule);
  phase.mark_done();
  return choice;
}

// ---------------------------------------------------------------------------
// Phase 4: SUT benchmarking
// ---------------------------------------------------------------------------

struct BenchEntry {
  std::string alias;
  MeasurementRun isolated;
  MeasurementRun contended;
  double slowdown = 1.0;
  bool significant = false;
};

struct BenchSummary {
  std::vector<BenchEntry> entries;
  double geometric_mean = 1.0;
  std::size_t unconverged = 0;
};

inline nlohmann::json bench_entry_json(const BenchEntry& e) {
  return {{"alias", e.alias},
          {"isolated", e.isolated},
          {"contended", e.contended},
          {"slowdown", e.slowdown},
          {"significant", e.significant}};
}

inline BenchEntry bench_entry_from_json(const nlohmann::json& j) {
  return {j.at("alias").get<std::string>(), j.at("isolated").get<MeasurementRun>(),
          j.at("contended").get<MeasurementRun>(), j.at("slowdown").get<double>(), j.at("significant").get<bool>()};
}

// Each SUT alone and under the environment. Significant = the two
// confidence intervals do not overlap.
inline BenchSummary run_bench(const CampaignConfig& c, Backend& backend, const HostileEnvironment& env,
                              const TunedSet& tuned, const fs::path& dir, const std::string& upstream_hash) {
  Phase phase(dir, {{"phase", "bench"},
                    {"upstream", upstream_hash},
                    {"environment", env},
                    {"tuned", tuned_json(tuned)},
                    {"suts", c.suts},
                    {"seed", c.seed},
                    {"metric", c.metric.to_string()},
                    {"measure", c.measure}});
  const auto deployment = to_deployment(env, tuned_params(tuned));
  BenchSummary summary;
  std::vector<double> slowdowns;
  for (std::size_t i = 0; i < c.suts.size(); ++i) {
    const auto& sut = c.suts[i];
    const fs::path path = dir / ("sut-" + sut.alias + ".json");
    BenchEntry e;
    if (fs::exists(path)) {
      e = bench_entry_from_json(read_json(path));
    } else {
      e.alias = sut.alias;
      backend.reseed(derive_seed(c.seed, {4, fnv1a(sut.alias), 0}));
      e.isolated = measure(backend, sut, {}, c.platform, c.metric, c.measure);
      backend.reseed(derive_seed(c.seed, {4, fnv1a(sut.alias), 1}));
      e.contended = measure(backend, sut, deployment, c.platform, c.metric, c.measure);
      e.slowdown = slowdown_ratio(e.isolated, e.contended);
      e.significant = ci_overlap_significant(e.isolated, e.contended);
      write_json(path, bench_entry_json(e));
    }
    summary.unconverged += !e.isolated.converged + !e.contended.converged;
    slowdowns.push_back(e.slowdown);
    summary.entries.push_back(std::move(e));
  }
  nlohmann::json sj{{"suts", nlohmann::json::array()}};
  std::size_t significant = 0;
  for (const auto& e : summary.entries) {
    sj["suts"].push_back(e.alias);
    significant += e.significant;
  }
  if (!slowdowns.empty()) {
    summary.geometric_mean = stats::geometric_mean(slowdowns);
    sj["geometric_mean"] = summary.geometric_mean;
    sj["significant_fraction"] = static_cast<double>(significant) / static_cast<double>(slowdowns.size());
  }
  write_json(dir / "summary.json", sj);
  phase.mark_done();
  return summary;
}

// ---------------------------------------------------------------------------
// Phase 5: quantile-variance study
// ---------------------------------------------------------------------------

// Isolated samples of the first resource's victim, chunked into sets; the
// variance of each quantile estimate across sets.
inline void run_quantile_study(const CampaignConfig& c, Backend& backend, const fs::path& dir,
                               const std::string& upstream_hash) {
  const auto& q = c.quantile_study;
  Phase phase(dir, {{"phase", "quantile-study"},
                    {"upstream", upstream_hash},
                    {"sets", q.sets},
                    {"set_size", q.set_size},
                    {"levels", q.levels},
                    {"seed", c.seed}});
  if (phase.done()) return;
  const Program victim = make_victim_config(c.resources.front(), c.platform);
  backend.reseed(derive_seed(c.seed, {5}));
  std::vector<double> samples;
  const std::size_t want = q.sets * q.set_size;
  std::size_t attempts = 0;
  while (samples.size() < want) {
    if (++attempts > 2 * want) throw EnvironmentError("quantile study: too many discarded samples");
    flush_cache_state(c.platform);
    const auto s = backend.execute(victim, {}, c.platform);
    if (s.discarded() || (s.end_temp_celsius && *s.end_temp_celsius > c.platform.temp_limit_celsius)) {
      if (!s.discarded()) backend.cool_down(c.platform);
      continue;
    }
    samples.push_back(static_cast<double>(s.duration_ns));
  }
  const auto variances = stats::quantile_variance_curve(samples, q.sets, q.set_size, q.levels);
  write_json(dir / "samples.json", {{"program", program_name(victim)}, {"samples", samples}});
  std::string csv = "quantile,variance\n";
  for (std::size_t i = 0; i < q.levels.size(); ++i) csv += fmt::format("{},{}\n", q.levels[i], variances[i]);
  write_file((dir / "variance.csv").string(), csv);
  phase.mark_done();
}

// ---------------------------------------------------------------------------
// Traceable report
// ---------------------------------------------------------------------------

// Any artifact as JSON: .json as is, .jsonl as an array of lines, .csv as an
// array of row objects (numeric cells parsed).
inline nlohmann::json load_artifact(const fs::path& path) {
  const std::string text = read_file(path.string());
  const auto ext = path.extension().string();
  try {
    if (ext == ".json") return nlohmann::json::parse(text);
    std::istringstream in(text);
    std::string line;
    nlohmann::json rows = nlohmann::json::array();
    if (ext == ".jsonl") {
      while (std::getline(in, line))
        if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
      return rows;
    }
    if (ext == ".csv") {
      auto split = [](const std::string& l) {
        std::vector<std::string> cells;
        std::istringstream row(l);
        std::string cell;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        return cells;
      };
      std::getline(in, line);
      const auto header = split(line);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        nlohmann::json obj = nlohmann::json::object();
        for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) {
          char* end = nullptr;
          const double v = std::strtod(cells[i].c_str(), &end);
          if (!cells[i].empty() && end && *end == '\0')
            obj[header[i]] = v;
          else
            obj[header[i]] = cells[i];
        }
        rows.push_back(obj);
      }
      return rows;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad artifact " + path.string() + ": " + e.what());
  }
  throw ConfigError("unknown artifact type " + path.string());
}

// Reads report values out of persisted artifacts, never from memory, so the
// report cannot say anything the artifacts do not.
class ArtifactReader {
 public:
  explicit ArtifactReader(fs::path root) : root_(std::move(root)) {}

  const nlohmann::json& artifact(const std::string& rel) {
    auto it = cache_.find(rel);
    if (it == cache_.end()) it = cache_.emplace(rel, load_artifact(root_ / rel)).first;
    return it->second;
  }

  nlohmann::json value(const std::string& rel, const std::string& pointer) {
    try {
      return artifact(rel).at(nlohmann::json::json_pointer(pointer));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot resolve " + rel + "#" + pointer + ": " + e.what());
    }
  }

  // {value, source, pointer}
  nlohmann::json traced(const std::string& rel, const std::string& pointer) {
    return {{"value", value(rel, pointer)}, {"source", rel}, {"pointer", pointer}};
  }

  // Traces every scalar leaf below `pointer`.
  nlohmann::json traced_tree(const std::string& rel, const std::string& pointer) {
    const auto v = value(rel, pointer);
    if (v.is_object()) {
      nlohmann::json out = nlohmann::json::object();
      for (const auto& [k, _] : v.items()) out[k] = traced_tree(rel, pointer + "/" + k);
      return out;
    }
    if (v.is_array()) {
      nlohmann::json out = nlohmann::json::array();
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(traced_tree(rel, pointer + "/" + std::to_string(i)));
      return out;
    }
    return traced(rel, pointer);
  }

  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  std::map<std::string, nlohmann::json> cache_;
};

inline bool is_traced(const nlohmann::json& j) {
  return j.is_object() && j.size() == 3 && j.contains("value") && j.contains("source") && j.contains("pointer");
}

// Problems found while resolving every number of `report` against the
// artifacts under `root`. Empty = fully traceable. Bare numbers outside a
// {value, source, pointer} record are problems too.
inline std::vector<std::string> verify_traceability(const nlohmann::json& report, const fs::path& root) {
  std::vector<std::string> problems;
  ArtifactReader reader(root);
  std::function<void(const nlohmann::json&, const std::string&)> walk = [&](const nlohmann::json& j,
                                                                            const std::string& where) {
    if (is_traced(j)) {
      try {
        const auto actual = reader.value(j["source"].get<std::string>(), j["pointer"].get<std::string>());
        if (actual != j["value"]) problems.push_back(where + ": report says " + j["value"].dump() + ", artifact has " + actual.dump());
      } catch (const std::exception& e) {
        problems.push_back(where + ": " + e.what());
      }
      return;
    }
    if (j.is_number()) {
      problems.push_back(where + ": untraced number " + j.dump());
    } else if (j.is_object()) {
      for (const auto& [k, v] : j.items()) walk(v, where + "/" + k);
    } else if (j.is_array()) {
      for (std::size_t i = 0; i < j.size(); ++i) walk(j[i], where + "/" + std::to_string(i));
    }
  };
  walk(report, "");

  // Derived numbers must also agree with what they are derived from.
  try {
    if (report.contains("bench") && report["bench"].contains("suts")) {
      std::vector<double> slowdowns;
      for (const auto& [alias, s] : report["bench"]["suts"].items()) {
        const double iso = s.at("isolated_ns").at("value").get<double>();
        const double con = s.at("contended_ns").at("value").get<double>();
        const double ratio = s.at("slowdown").at("value").get<double>();
        if (iso > 0 && std::abs(con / iso - ratio) > 1e-12 * std::max(1.0, ratio))
          problems.push_back("/bench/suts/" + alias + ": slowdown does not equal contended/isolated");
        slowdowns.push_back(ratio);
      }
      if (!slowdowns.empty() && report["bench"].contains("geometric_mean")) {
        const double gm = report["bench"]["geometric_mean"].at("value").get<double>();
        if (std::abs(stats::geometric_mean(slowdowns) - gm) > 1e-12 * gm)
          problems.push_back("/bench/geometric_mean: does not match the per-SUT slowdowns");
      }
    }
  } catch (const std::exception& e) {
    problems.push_back(std::string("derived-number check failed: ") + e.what());
  }
  return problems;
}

namespace detail {

inline std::string csv_cell(const nlohmann::json& traced_or_value) {
  const auto& v = is_traced(traced_or_value) ? traced_or_value["value"] : traced_or_value;
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) return fmt::format("{}", v.get<double>());
  return v.dump();
}

}  // namespace detail

// Builds report.json, the CSV tables and the plot-data files from the phase
// artifacts under `root`.
inline nlohmann::json write_report(const fs::path& root) {
  ArtifactReader rd(root);
  const auto rel = [&](const fs::path& p) { return fs::relative(p, root).generic_string(); };
  nlohmann::json report = nlohmann::json::object();
  const fs::path out = root / kReportDir;
  fs::create_directories(out);

  // Verdict per resource, per-seed best values per strategy.
  std::string t3 = "resource,verdict\n";
  if (fs::exists(root / kComparisonDir / "verdicts.json")) {
    const std::string vrel = std::string(kComparisonDir) + "/verdicts.json";
    nlohmann::json comp = nlohmann::json::object();
    for (const auto& [res, v] : rd.artifact(vrel).items()) {
      nlohmann::json entry{{"verdict", rd.traced(vrel, "/" + res + "/verdict")},
                           {"p_values", rd.traced_tree(vrel, "/" + res + "/p_values")}};
      nlohmann::json best = nlohmann::json::object();
      for (const auto& strat : v.at("ordering")) {
        const fs::path sdir = root / kComparisonDir / "results";
        std::vector<fs::path> files;
        for (const auto& board : fs::directory_iterator(sdir)) {
          const auto d = board.path() / res / strat.get<std::string>();
          if (fs::exists(d))
            for (const auto& f : fs::directory_iterator(d))
              if (f.path().extension() == ".jsonl") files.push_back(f.path());
        }
        std::sort(files.begin(), files.end());
        nlohmann::json vals = nlohmann::json::array();
        for (const auto& f : files) vals.push_back(rd.traced(rel(f), "/0/best_value"));
        best[strat.get<std::string>()] = vals;
      }
      entry["best_values"] = best;
      comp[res] = entry;
      t3 += res + "," + v.at("verdict").get<std::string>() + "\n";
    }
    report["comparison"] = comp;
  }
  write_file((out / "table_comparison.csv").string(), t3);

  // Per resource, max slowdown and the strategy that got it.
  std::string t5 = "resource,strategy,max_slowdown,params\n";
  if (fs::exists(root / kLongTuneDir / "tuned.json")) {
    const std::string trel = std::string(kLongTuneDir) + "/tuned.json";
    nlohmann::json tuning = nlohmann::json::object();
    for (const auto& [res, v] : rd.artifact(trel).items()) {
      const std::string src = v.at("source").get<std::string>();
      tuning[res] = {{"strategy", rd.traced(src, "/0/strategy")},
                     {"max_slowdown", rd.traced(src, "/0/best_value")},
                     {"best_params", rd.traced_tree(src, "/0/best_params")}};
      t5 += fmt::format("{},{},{},\"{}\"\n", res, v.at("strategy").get<std::string>(),
                        rd.value(src, "/0/best_value").get<double>(), v.at("params").dump());
    }
    report["tuning"] = tuning;
  }
  write_file((out / "table_tuning.csv").string(), t5);

  // Top three and last of every ranking.
  std::string t6 = "resource,rank,label,score\n";
  if (fs::exists(root / kEnvironmentDir / "rankings.csv")) {
    const std::string rrel = std::string(kEnvironmentDir) + "/rankings.csv";
    const auto& rows = rd.artifact(rrel);
    std::map<std::string, std::vector<std::size_t>> by_res;
    for (std::size_t i = 0; i < rows.size(); ++i) by_res[rows[i].at("resource").get<std::string>()].push_back(i);
    nlohmann::json snippet = nlohmann::json::object();
    for (const auto& [res, idx] : by_res) {
      nlohmann::json list = nlohmann::json::array();
      std::vector<std::size_t> pick;
      for (std::size_t k = 0; k < idx.size() && k < 3; ++k) pick.push_back(idx[k]);
      if (idx.size() > 3) pick.push_back(idx.back());
      for (auto i : pick) {
        const std::string p = "/" + std::to_string(i);
        list.push_back({{"rank", rd.traced(rrel, p + "/rank")},
                        {"label", rd.traced(rrel, p + "/label")},
                        {"score", rd.traced(rrel, p + "/score")}});
        t6 += fmt::format("{},{},{},{}\n", res, rows[i].at("rank").get<double>(), rows[i].at("label").get<std::string>(),
                          rows[i].at("score").get<double>());
      }
      snippet[res] = list;
    }
    report["rankings"] = snippet;
    const std::string erel = std::string(kEnvironmentDir) + "/environment.json";
    report["environment"] = {{"label", rd.traced(erel, "/label")},
                             {"ranks", rd.traced_tree(erel, "/ranks")},
                             {"rule", rd.traced(erel, "/rule")}};
  }
  write_file((out / "rankings_snippet.csv").string(), t6);

  // Per-SUT slowdown bars.
  std::string bars = "alias,slowdown,isolated_ci_low,isolated_ci_high,contended_ci_low,contended_ci_high,significant\n";
  if (fs::exists(root / kBenchDir / "summary.json")) {
    const std::string srel = std::string(kBenchDir) + "/summary.json";
    nlohmann::json suts = nlohmann::json::object();
    for (const auto& alias : rd.artifact(srel).at("suts")) {
      const std::string a = alias.get<std::string>();
      const std::string brel = std::string(kBenchDir) + "/sut-" + a + ".json";
      nlohmann::json s{{"slowdown", rd.traced(brel, "/slowdown")},
                       {"isolated_ns", rd.traced(brel, "/isolated/metric_value_ns")},
                       {"contended_ns", rd.traced(brel, "/contended/metric_value_ns")},
                       {"isolated_ci", rd.traced_tree(brel, "/isolated/ci")},
                       {"contended_ci", rd.traced_tree(brel, "/contended/ci")},
                       {"significant", rd.traced(brel, "/significant")},
                       {"converged", {rd.traced(brel, "/isolated/converged"), rd.traced(brel, "/contended/converged")}}};
      bars += fmt::format("{},{},{},{},{},{},{}\n", a, detail::csv_cell(s["slowdown"]),
                          detail::csv_cell(s["isolated_ci"][0]), detail::csv_cell(s["isolated_ci"][1]),
                          detail::csv_cell(s["contended_ci"][0]), detail::csv_cell(s["contended_ci"][1]),
                          detail::csv_cell(s["significant"]));
      suts[a] = s;
    }
    nlohmann::json bench{{"suts", suts}};
    if (rd.artifact(srel).contains("geometric_mean")) {
      bench["geometric_mean"] = rd.traced(srel, "/geometric_mean");
      bench["significant_fraction"] = rd.traced(srel, "/significant_fraction");
    }
    report["bench"] = bench;
  }
  write_file((out / "table_bench.csv").string(), bars);
  write_file((out / "plot_slowdown.csv").string(), bars);

  // Variance vs quantile.
  if (fs::exists(root / kQuantileStudyDir / "variance.csv")) {
    const std::string qrel = std::string(kQuantileStudyDir) + "/variance.csv";
    report["quantile_variance"] = rd.traced_tree(qrel, "");
    write_file((out / "plot_quantile_variance.csv").string(), read_file((root / qrel).string()));
  }

  write_json(out / "report.json", report);
  return report;
}

// ---------------------------------------------------------------------------
// Full campaign
// ---------------------------------------------------------------------------

struct CampaignOutcome {
  nlohmann::json report;
  ParetoChoice selection;
  BenchSummary bench;
  std::vector<std::string> traceability_problems;
  std::size_t phases_run = 0;
};

struct CampaignOptions {
  // Stop after this many phases (1..5); for tests of interruption.
  std::size_t stop_after = 5;
};

inline CampaignOutcome run_full_campaign(const CampaignConfig& c, Backend& backend, const fs::path& root,
                                         const CampaignOptions& opt = {}) {
  c.validate();
  fs::create_directories(root);
  write_json(root / "campaign.json", c);
  CampaignOutcome out;

  const auto comparison = [&] {
    Phase probe(root / kComparisonDir, comparison_inputs(c));
    if (probe.done()) return load_verdicts(root / kComparisonDir);
    return run_strategy_comparison(c, backend, root / kComparisonDir).verdicts;
  }();
  const std::string h1 = Phase(root / kComparisonDir, comparison_inputs(c)).hash();
  if (++out.phases_run >= opt.stop_after) return out;

  const auto tuned = run_long_tuning(c, backend, comparison, root, h1);
  const std::string h2 = hex64(fnv1a(h1 + tuned_json(tuned).dump()));
  if (++out.phases_run >= opt.stop_after) return out;

  out.selection = run_environment_selection(c, backend, tuned, root / kEnvironmentDir, h2);
  const std::string h3 = hex64(fnv1a(h2 + out.selection.environment.label));
  if (++out.phases_run >= opt.stop_after) return out;

  out.bench = run_bench(c, backend, out.selection.environment, tuned, root / kBenchDir, h3);
  if (++out.phases_run >= opt.stop_after) return out;

  if (c.quantile_study.sets > 0) run_quantile_study(c, backend, root / kQuantileStudyDir, h3);
  ++out.phases_run;

  out.report = write_report(root);
  out.traceability_problems = verify_traceability(out.report, root);
  for (const auto& p : out.traceability_problems) spdlog::error("traceability: {}", p);
  return out;
}

}  // namespace hostile
