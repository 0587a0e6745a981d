#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "common.hpp"
#include "hostile/search.hpp"
#include "hostile/tuning.hpp"

using namespace hostile;
using hostile::testing::board;
using hostile::testing::quiet;

namespace {

// Noise-free slowdown of the matching victim under a uniform environment.
ObjectiveFn analytic(ResourceKind r, const SyntheticProfile& profile = quiet()) {
  return [r, profile](const EnemyParams& p) {
    return synthetic_contention(make_victim_config(r, board()), uniform_deployment(p, board()), profile);
  };
}

double exhaustive_best(const ParameterSpace& space, const ObjectiveFn& f) {
  double best = 0;
  for (std::uint64_t i = 0; i < space.cardinality(); ++i) best = std::max(best, f(space.decode(space.point_at(i))));
  return best;
}

}  // namespace

TEST(Budget, Parse) {
  EXPECT_EQ(Budget::parse("500evals"), Budget::evals(500));
  EXPECT_EQ(Budget::parse("40e"), Budget::evals(40));
  EXPECT_EQ(Budget::parse("2h"), Budget::wall(7200));
  EXPECT_EQ(Budget::parse("30m"), Budget::wall(1800));
  EXPECT_EQ(Budget::parse("90"), Budget::wall(90));
  EXPECT_EQ(Budget::parse("1.5h"), Budget::wall(5400));
  EXPECT_THROW(Budget::parse("0evals"), ConfigError);
  EXPECT_THROW(Budget::parse("2.5evals"), ConfigError);
  EXPECT_THROW(Budget::parse("3 weeks"), ConfigError);
  EXPECT_THROW(Budget::parse("-1"), ConfigError);
  EXPECT_THROW(Budget::parse("soon"), ConfigError);
}

TEST(Strategy, Names) {
  for (auto s : kAllStrategies) EXPECT_EQ(strategy_from_string(to_string(s)), s);
  EXPECT_EQ(strategy_from_string("bayesian"), Strategy::BO);
  EXPECT_THROW(strategy_from_string("GA"), ConfigError);
}

TEST(Seeds, DeriveSeedSeparatesStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 10; ++s)
    for (std::uint64_t t = 0; t < 10; ++t) seen.insert(derive_seed(s, {t}));
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(derive_seed(7, {1, 2}), derive_seed(7, {1, 2}));
  EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
}

TEST(RandomSearch, EvalBudgetAndLogicalTimestamps) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  const auto r = random_search(space, analytic(ResourceKind::Cache), Budget::evals(37), 5);
  ASSERT_EQ(r.history.size(), 37u);
  for (std::size_t i = 0; i < r.history.size(); ++i) EXPECT_EQ(r.history[i].timestamp, static_cast<double>(i));
  double best = 0;
  for (const auto& h : r.history) best = std::max(best, h.value);
  EXPECT_EQ(r.best_value, best);
  EXPECT_EQ(r.strategy, Strategy::RAN);
  EXPECT_EQ(r.resource, ResourceKind::Cache);
}

TEST(RandomSearch, SeedDeterminism) {
  const auto space = enemy_parameter_space(ResourceKind::Memory, board());
  const auto f = analytic(ResourceKind::Memory);
  EXPECT_EQ(random_search(space, f, Budget::evals(20), 1), random_search(space, f, Budget::evals(20), 1));
  EXPECT_NE(random_search(space, f, Budget::evals(20), 1).history, random_search(space, f, Budget::evals(20), 2).history);
}

TEST(RandomSearch, WallClockBudget) {
  const auto space = enemy_parameter_space(ResourceKind::Bus, board());
  const auto f = analytic(ResourceKind::Bus);
  const auto r = random_search(space, f, Budget::wall(0.05), 3);
  ASSERT_FALSE(r.history.empty());
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_GE(r.history[i].timestamp, r.history[i - 1].timestamp);
  EXPECT_LT(r.history.back().timestamp, 0.5);
}

TEST(SearchRun, FailedEvaluationsAreSkippedButCounted) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  int calls = 0;
  const ObjectiveFn f = [&](const EnemyParams&) -> double {
    if (++calls % 3 == 0) throw EnvironmentError("enemy died");
    return static_cast<double>(calls);
  };
  for (auto s : kAllStrategies) {
    calls = 0;
    TuneOptions opt;
    const auto r = run_strategy(s, space, f, Budget::evals(30), 9, opt);
    EXPECT_EQ(calls, 30) << to_string(s);
    EXPECT_EQ(r.history.size(), 20u) << to_string(s);
  }
}

TEST(SearchRun, AllFailuresIsEnvironmentError) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  const ObjectiveFn f = [](const EnemyParams&) -> double { throw EnvironmentError("no"); };
  EXPECT_THROW(random_search(space, f, Budget::evals(5), 1), EnvironmentError);
}

TEST(SearchRun, RejectsEmptyBudget) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  EXPECT_THROW(random_search(space, analytic(ResourceKind::Cache), Budget{}, 1), ConfigError);
}

TEST(Neighbor, MovesOneDimension) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  std::mt19937_64 rng(4);
  for (int i = 0; i < 2000; ++i) {
    const auto p = space.sample(rng);
    const auto q = neighbor(space, p, rng);
    ASSERT_TRUE(space.contains(q));
    std::size_t changed = 0;
    for (std::size_t d = 0; d < p.size(); ++d) {
      if (p[d] == q[d]) continue;
      ++changed;
      if (space.dimensions()[d].kind == DimensionKind::Integer) {
        const auto diff = std::abs(static_cast<long>(p[d]) - static_cast<long>(q[d]));
        EXPECT_GE(diff, 1);
        EXPECT_LE(diff, 3);
      }
    }
    EXPECT_EQ(changed, 1u);
  }
}

TEST(Annealing, ZeroTemperatureNeverGetsWorse) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  AnnealingSchedule sched;
  sched.initial_temperature = 0.0;
  sched.start = Point{0, 0, 0};
  AnnealingTrace trace;
  const auto r = simulated_annealing(space, analytic(ResourceKind::Cache), Budget::evals(60), 3, sched, &trace);
  ASSERT_EQ(trace.current_values.size(), 59u);
  for (std::size_t i = 1; i < trace.current_values.size(); ++i)
    EXPECT_GE(trace.current_values[i], trace.current_values[i - 1]);
  EXPECT_EQ(r.history.front().params, space.decode(Point{0, 0, 0}));
}

TEST(Annealing, GeometricCoolingFromProbeSpread) {
  const auto space = enemy_parameter_space(ResourceKind::Memory, board());
  AnnealingTrace trace;
  const auto r = simulated_annealing(space, analytic(ResourceKind::Memory), Budget::evals(40), 8, {}, &trace);
  ASSERT_EQ(r.history.size(), 40u);
  // initial temperature = sample standard deviation of the ten probes
  double mean = 0;
  for (int i = 0; i < 10; ++i) mean += r.history[i].value;
  mean /= 10;
  double var = 0;
  for (int i = 0; i < 10; ++i) var += (r.history[i].value - mean) * (r.history[i].value - mean);
  const double t0 = std::sqrt(var / 9);
  ASSERT_EQ(trace.temperatures.size(), 30u);
  EXPECT_NEAR(trace.temperatures[0], t0, 1e-12);
  for (std::size_t i = 1; i < trace.temperatures.size(); ++i)
    EXPECT_NEAR(trace.temperatures[i], trace.temperatures[i - 1] * 0.95, 1e-12);
}

TEST(Annealing, AcceptsWorseMovesWhenHot) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  AnnealingSchedule sched;
  sched.initial_temperature = 1e6;
  sched.cooling = 1.0;
  sched.start = Point{64, 24, 61};  // 64 MB, stride 64, SSSSS: the optimum
  AnnealingTrace trace;
  simulated_annealing(space, analytic(ResourceKind::Cache), Budget::evals(30), 2, sched, &trace);
  EXPECT_LT(*std::min_element(trace.current_values.begin(), trace.current_values.end()), 16.0);
}

TEST(Annealing, BadScheduleRejected) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  AnnealingSchedule sched;
  sched.cooling = 1.5;
  EXPECT_THROW(simulated_annealing(space, analytic(ResourceKind::Cache), Budget::evals(5), 1, sched), ConfigError);
  sched.cooling = 0.9;
  sched.start = Point{99, 0, 0};
  EXPECT_THROW(simulated_annealing(space, analytic(ResourceKind::Cache), Budget::evals(5), 1, sched), InputError);
}

TEST(Bayes, InitialDesignMatchesRandomSearch) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  const auto f = analytic(ResourceKind::Cache);
  const auto bo = bayesian_opt(space, f, Budget::evals(8), 21);
  const auto ran = random_search(space, f, Budget::evals(5), 21);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(bo.history[i], ran.history[i]);
  EXPECT_EQ(bo.history.size(), 8u);
}

TEST(Bayes, NeverRepeatsAPointWhenTheFitWorks) {
  const auto space = enemy_parameter_space(ResourceKind::Memory, board());
  const auto r = bayesian_opt(space, analytic(ResourceKind::Memory), Budget::evals(40), 6);
  std::set<std::pair<std::uint64_t, std::uint64_t>> seen;
  for (const auto& h : r.history) seen.insert({h.params.memory().buffer_size, h.params.memory().subregion_size});
  EXPECT_GE(seen.size(), 38u);  // clamped subregions may decode alike
}

TEST(Bayes, ConstantObjectiveFallsBackToRandom) {
  const auto space = enemy_parameter_space(ResourceKind::Bus, board());
  const auto r = bayesian_opt(space, [](const EnemyParams&) { return 1.0; }, Budget::evals(12), 1);
  EXPECT_EQ(r.history.size(), 12u);
  EXPECT_EQ(r.best_value, 1.0);
}

TEST(Bayes, NeedsTwoInitialPoints) {
  const auto space = enemy_parameter_space(ResourceKind::Bus, board());
  BayesOptions opt;
  opt.init_points = 1;
  EXPECT_THROW(bayesian_opt(space, analytic(ResourceKind::Bus), Budget::evals(5), 1, opt), ConfigError);
}

TEST(Bayes, LocalCandidates) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  std::set<Point> out;
  detail::add_local_candidates(space, Point{32, 32, 10}, out);
  EXPECT_EQ(out.size(), 6u + 6u + 61u);
  out.clear();
  detail::add_local_candidates(space, Point{0, 64, 0}, out);
  EXPECT_EQ(out.size(), 3u + 3u + 61u);
}

TEST(Optimizers, FindTheAnalyticOptimum) {
  // exhaustive oracle over the grid
  for (auto r : kAllResources) {
    const auto space = enemy_parameter_space(r, board());
    const auto f = analytic(r);
    const double best = exhaustive_best(space, f);
    const auto bo = bayesian_opt(space, f, Budget::evals(r == ResourceKind::Cache ? 150 : 60), 1);
    EXPECT_GE(bo.best_value, 0.97 * best) << to_string(r);
    EXPECT_LE(bo.best_value, best + 1e-12);
    const auto sa = simulated_annealing(space, f, Budget::evals(300), 1);
    EXPECT_GE(sa.best_value, 0.9 * best) << to_string(r);
  }
}

TEST(Optimizers, ExhaustiveCeilingsOfTheReferenceModel) {
  EXPECT_DOUBLE_EQ(exhaustive_best(enemy_parameter_space(ResourceKind::Cache, board()), analytic(ResourceKind::Cache)),
                   16.0);
  EXPECT_DOUBLE_EQ(exhaustive_best(enemy_parameter_space(ResourceKind::Bus, board()), analytic(ResourceKind::Bus)),
                   1.375);
  EXPECT_DOUBLE_EQ(
      exhaustive_best(enemy_parameter_space(ResourceKind::Memory, board()), analytic(ResourceKind::Memory)), 7.0);
}

TEST(Persistence, JsonlRoundTrip) {
  const auto space = enemy_parameter_space(ResourceKind::Cache, board());
  const auto r = simulated_annealing(space, analytic(ResourceKind::Cache), Budget::evals(25), 4);
  const auto text = tuning_result_jsonl(r);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 26);
  const auto header = nlohmann::json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(header["type"], "header");
  EXPECT_EQ(header["strategy"], "SA");
  EXPECT_EQ(parse_tuning_result_jsonl(text), r);
  const auto wall = random_search(space, analytic(ResourceKind::Cache), Budget::wall(0.02), 4);
  EXPECT_EQ(parse_tuning_result_jsonl(tuning_result_jsonl(wall)), wall);
  EXPECT_THROW(parse_tuning_result_jsonl("{\"type\":\"eval\"}\n"), ConfigError);
}

TEST(Persistence, PathLayout) {
  EXPECT_EQ(tuning_result_path("out", "pi3", ResourceKind::Memory, Strategy::BO, 3), "out/results/pi3/memory/BO/3.jsonl");
}

TEST(TuneEnemy, DeterministicPerSeedWhateverRanBefore) {
  SyntheticBackend backend(reference_profile("pi3-like"));
  const auto metric = SlowdownMetric{};
  const auto a = tune_enemy(backend, ResourceKind::Memory, Strategy::RAN, board(), Budget::evals(6), metric, 4);
  tune_enemy(backend, ResourceKind::Bus, Strategy::SA, board(), Budget::evals(3), metric, 9);
  const auto b = tune_enemy(backend, ResourceKind::Memory, Strategy::RAN, board(), Budget::evals(6), metric, 4);
  EXPECT_EQ(a, b);
  for (const auto& h : a.history) {
    EXPECT_GT(h.value, 0.9);
    EXPECT_LT(h.value, 7.5);
  }
}

TEST(TuneEnemy, NoiseFreeValuesMatchModel) {
  SyntheticBackend backend(quiet());
  const auto r = tune_enemy(backend, ResourceKind::Cache, Strategy::BO, board(), Budget::evals(10), SlowdownMetric{}, 2);
  const auto f = analytic(ResourceKind::Cache);
  for (const auto& h : r.history) EXPECT_NEAR(h.value, f(h.params), 1e-6);
}

TEST(TuneEnemy, SaveAndLoad) {
  SyntheticBackend backend(quiet());
  const auto r = tune_enemy(backend, ResourceKind::Bus, Strategy::SA, board(), Budget::evals(12), SlowdownMetric{}, 2);
  const auto dir = std::filesystem::temp_directory_path() / "hostile_search_test";
  std::filesystem::remove_all(dir);
  const auto path = tuning_result_path(dir.string(), "test-board", ResourceKind::Bus, Strategy::SA, 2);
  save_tuning_result(path, r);
  EXPECT_EQ(load_tuning_result(path), r);
  std::filesystem::remove_all(dir);
}

TEST(TuneEnemy, RejectsPlatformWithoutGeometry) {
  SyntheticBackend backend(quiet());
  auto p = board();
  p.associativity = 0;
  EXPECT_THROW(tune_enemy(backend, ResourceKind::Bus, Strategy::SA, p, Budget::evals(3), SlowdownMetric{}, 1),
               ConfigError);
}
