#pragma once

// First tuning stage: search one enemy template's parameter space for the
// instance that slows its victim down the most.

#include <cstdint>
#include <filesystem>
#include <string>

#include <spdlog/spdlog.h>

#include "hostile/backend.hpp"
#include "hostile/harness.hpp"
#include "hostile/kernels.hpp"
#include "hostile/params.hpp"
#include "hostile/platform.hpp"
#include "hostile/search.hpp"
#include "hostile/util.hpp"

namespace hostile {

struct TuneOptions {
  MeasureOptions measure;
  AnnealingSchedule annealing;
  BayesOptions bayes;
};

inline TuningResult run_strategy(Strategy strategy, const ParameterSpace& space, const ObjectiveFn& objective,
                                 const Budget& budget, std::uint64_t seed, const TuneOptions& opt = {}) {
  switch (strategy) {
    case Strategy::RAN: return random_search(space, objective, budget, seed);
    case Strategy::SA: return simulated_annealing(space, objective, budget, seed, opt.annealing);
    case Strategy::BO: return bayesian_opt(space, objective, budget, seed, opt.bayes);
  }
  throw ConfigError("bad strategy");
}

// Stream seed of the backend during one tuning run. Keeps tuning runs
// independent of whatever ran before them on the same backend.
inline std::uint64_t tuning_backend_seed(std::uint64_t seed, ResourceKind resource, Strategy strategy) {
  return derive_seed(seed, {0x7475u, static_cast<std::uint64_t>(resource), static_cast<std::uint64_t>(strategy)});
}

// Objective = slowdown of the resource's victim under a uniform environment
// of the candidate enemy on every non-SUT core. The isolated run is
// measured once per tuning run and shared by all evaluations.
inline TuningResult tune_enemy(Backend& backend, ResourceKind resource, Strategy strategy,
                               const PlatformDescriptor& platform, const Budget& budget, const SlowdownMetric& metric,
                               std::uint64_t seed, const TuneOptions& opt = {}) {
  platform.validate();
  const ParameterSpace space = enemy_parameter_space(resource, platform);
  backend.reseed(tuning_backend_seed(seed, resource, strategy));
  const Program victim = make_victim_config(resource, platform);
  const MeasurementRun isolated = measure(backend, victim, {}, platform, metric, opt.measure);

  const ObjectiveFn objective = [&](const EnemyParams& params) {
    const auto contended = measure(backend, victim, uniform_deployment(params, platform), platform, metric, opt.measure);
    if (!contended.converged) spdlog::debug("objective measurement did not converge");
    return slowdown_ratio(isolated, contended);
  };
  auto result = run_strategy(strategy, space, objective, budget, seed, opt);
  spdlog::info("tuned {} with {}: best slowdown {:.4f} after {} evaluations", to_string(resource),
               to_string(strategy), result.best_value, result.history.size());
  return result;
}

inline void save_tuning_result(const std::string& path, const TuningResult& r) {
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  write_file(path, tuning_result_jsonl(r));
}

inline TuningResult load_tuning_result(const std::string& path) { return parse_tuning_result_jsonl(read_file(path)); }

}  // namespace hostile
