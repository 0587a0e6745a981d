#pragma once

// Budgeted black-box maximization over a ParameterSpace: random search,
// simulated annealing and Bayesian optimization. All randomness comes from
// the seed passed in.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "hostile/errors.hpp"
#include "hostile/gp.hpp"
#include "hostile/params.hpp"
#include "hostile/util.hpp"

namespace hostile {

enum class Strategy { RAN, SA, BO };

inline constexpr std::array<Strategy, 3> kAllStrategies{Strategy::RAN, Strategy::SA, Strategy::BO};

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::RAN: return "RAN";
    case Strategy::SA: return "SA";
    case Strategy::BO: return "BO";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "RAN" || s == "ran" || s == "random") return Strategy::RAN;
  if (s == "SA" || s == "sa" || s == "annealing") return Strategy::SA;
  if (s == "BO" || s == "bo" || s == "bayesian") return Strategy::BO;
  throw ConfigError("unknown strategy '" + s + "' (expected RAN|SA|BO)");
}

inline void to_json(nlohmann::json& j, Strategy s) { j = to_string(s); }
inline void from_json(const nlohmann::json& j, Strategy& s) { s = strategy_from_string(j.get<std::string>()); }

struct HistoryEntry {
  EnemyParams params;
  double value = 0.0;
  double timestamp = 0.0;  // seconds since start, or evaluation ordinal under an eval-count budget
  bool operator==(const HistoryEntry&) const = default;
};

struct TuningResult {
  ResourceKind resource = ResourceKind::Cache;
  Strategy strategy = Strategy::RAN;
  EnemyParams best_params;
  double best_value = 0.0;
  std::vector<HistoryEntry> history;
  Budget budget;
  std::uint64_t seed = 0;
  bool operator==(const TuningResult&) const = default;
};

using ObjectiveFn = std::function<double(const EnemyParams&)>;

// Budget bookkeeping, history recording and failure handling shared by all
// strategies.
class SearchRun {
 public:
  SearchRun(const ParameterSpace& space, const ObjectiveFn& objective, const Budget& budget)
      : space_(space), objective_(objective), budget_(budget), start_(std::chrono::steady_clock::now()) {
    if (!budget.valid()) throw ConfigError("search budget must be > 0");
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  // No new evaluation may start once this is true.
  bool exhausted() const {
    if (budget_.evaluations && attempts_ >= *budget_.evaluations) return true;
    if (budget_.seconds && elapsed() >= *budget_.seconds) return true;
    return false;
  }

  // Evaluates `p` unless the budget is spent. A throwing objective is logged
  // and the point skipped (it still consumes an evaluation).
  std::optional<double> evaluate(const Point& p) {
    if (exhausted()) return std::nullopt;
    ++attempts_;
    const EnemyParams params = space_.decode(p);
    double value;
    try {
      value = objective_(params);
    } catch (const std::exception& e) {
      spdlog::warn("objective evaluation failed, skipping point: {}", e.what());
      return std::nullopt;
    }
    const double ts = budget_.seconds ? elapsed() : static_cast<double>(history_.size());
    history_.push_back({params, value, ts});
    points_.push_back(p);
    if (history_.size() == 1 || value > best_value_) {
      best_value_ = value;
      best_index_ = history_.size() - 1;
    }
    return value;
  }

  const std::vector<Point>& points() const { return points_; }
  const std::vector<HistoryEntry>& history() const { return history_; }
  std::size_t attempts() const { return attempts_; }
  const ParameterSpace& space() const { return space_; }

  TuningResult finish(Strategy strategy, std::uint64_t seed) && {
    if (history_.empty()) throw EnvironmentError("search finished without a single successful evaluation");
    TuningResult r;
    r.resource = space_.resource();
    r.strategy = strategy;
    r.best_params = history_[best_index_].params;
    r.best_value = best_value_;
    r.history = std::move(history_);
    r.budget = budget_;
    r.seed = seed;
    return r;
  }

 private:
  const ParameterSpace& space_;
  const ObjectiveFn& objective_;
  Budget budget_;
  std::chrono::steady_clock::time_point start_;
  std::size_t attempts_ = 0;
  std::vector<HistoryEntry> history_;
  std::vector<Point> points_;
  double best_value_ = 0.0;
  std::size_t best_index_ = 0;
};

inline TuningResult random_search(const ParameterSpace& space, const ObjectiveFn& objective, const Budget& budget,
                                  std::uint64_t seed) {
  SearchRun run(space, objective, budget);
  std::mt19937_64 rng(seed);
  while (!run.exhausted()) run.evaluate(space.sample(rng));
  return std::move(run).finish(Strategy::RAN, seed);
}

// ---------------------------------------------------------------------------
// Simulated annealing
// ---------------------------------------------------------------------------

struct AnnealingSchedule {
  // When unset, the initial temperature is the standard deviation of
  // `probe_evaluations` random probes and the walk starts at the best probe.
  std::optional<double> initial_temperature;
  double cooling = 0.95;
  std::size_t probe_evaluations = 10;
  std::optional<Point> start;
};

// Optional view into an annealing run: value of the current point after
// each step.
struct AnnealingTrace {
  std::vector<double> current_values;
  std::vector<double> temperatures;
};

// One dimension moved by 1..3 grid steps (integer) or resampled to a
// different category. Moves that decode to the same parameters are redrawn.
template <class Rng>
Point neighbor(const ParameterSpace& space, const Point& p, Rng& rng) {
  const auto& dims = space.dimensions();
  std::uniform_int_distribution<std::size_t> pick_dim(0, dims.size() - 1);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const std::size_t d = pick_dim(rng);
    const std::size_t size = dims[d].size();
    if (size < 2) continue;
    Point q = p;
    if (dims[d].kind == DimensionKind::Integer) {
      std::uniform_int_distribution<int> mag(1, 3);
      std::bernoulli_distribution up(0.5);
      const auto step = static_cast<std::ptrdiff_t>(mag(rng)) * (up(rng) ? 1 : -1);
      const auto moved = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(p[d]) + step, 0,
                                                    static_cast<std::ptrdiff_t>(size) - 1);
      q[d] = static_cast<std::size_t>(moved);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, size - 2);
      const std::size_t c = pick(rng);
      q[d] = c >= p[d] ? c + 1 : c;
    }
    if (q != p && space.decoded_key(q) != space.decoded_key(p)) return q;
  }
  return p;
}

inline TuningResult simulated_annealing(const ParameterSpace& space, const ObjectiveFn& objective,
                                        const Budget& budget, std::uint64_t seed,
                                        const AnnealingSchedule& schedule = {}, AnnealingTrace* trace = nullptr) {
  if (schedule.start && !space.contains(*schedule.start)) throw InputError("annealing start outside space");
  if (!(schedule.cooling > 0.0 && schedule.cooling <= 1.0)) throw ConfigError("cooling factor must be in (0, 1]");
  SearchRun run(space, objective, budget);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Point current;
  double current_value = 0.0;
  bool have_current = false;
  double temperature = 0.0;

  if (schedule.start) {
    if (auto v = run.evaluate(*schedule.start)) {
      current = *schedule.start;
      current_value = *v;
      have_current = true;
    }
  }
  if (schedule.initial_temperature) {
    temperature = std::max(*schedule.initial_temperature, 0.0);
  } else {
    std::vector<double> probes;
    if (have_current) probes.push_back(current_value);
    while (probes.size() < std::max<std::size_t>(schedule.probe_evaluations, 1) && !run.exhausted()) {
      const Point p = space.sample(rng);
      if (auto v = run.evaluate(p)) {
        probes.push_back(*v);
        if (!schedule.start && (!have_current || *v > current_value)) {
          current = p;
          current_value = *v;
          have_current = true;
        }
      }
    }
    if (probes.size() > 1) {
      double mean = 0.0;
      for (double v : probes) mean += v;
      mean /= static_cast<double>(probes.size());
      double var = 0.0;
      for (double v : probes) var += (v - mean) * (v - mean);
      temperature = std::sqrt(var / static_cast<double>(probes.size() - 1));
    }
  }
  while (!have_current && !run.exhausted()) {
    const Point p = space.sample(rng);
    if (auto v = run.evaluate(p)) {
      current = p;
      current_value = *v;
      have_current = true;
    }
  }

  while (!run.exhausted()) {
    const Point cand = neighbor(space, current, rng);
    const double u = unit(rng);
    const auto v = run.evaluate(cand);
    if (!v) continue;
    const double delta = *v - current_value;
    if (delta >= 0.0 || (temperature > 0.0 && u < std::exp(delta / temperature))) {
      current = cand;
      current_value = *v;
    }
    if (trace) {
      trace->current_values.push_back(current_value);
      trace->temperatures.push_back(temperature);
    }
    temperature *= schedule.cooling;
  }
  return std::move(run).finish(Strategy::SA, seed);
}

// ---------------------------------------------------------------------------
// Bayesian optimization
// ---------------------------------------------------------------------------

struct BayesOptions {
  std::size_t init_points = 5;
  std::size_t random_candidates = 1000;
  std::size_t local_seeds = 5;  // best points whose neighbourhoods are also scored
  double xi = 0.01;
};

namespace detail {

// All points differing from `p` in one dimension by up to 3 steps
// (integer) or by category.
inline void add_local_candidates(const ParameterSpace& space, const Point& p, std::set<Point>& out) {
  const auto& dims = space.dimensions();
  for (std::size_t d = 0; d < dims.size(); ++d) {
    if (dims[d].kind == DimensionKind::Integer) {
      for (int step = -3; step <= 3; ++step) {
        const auto idx = static_cast<std::ptrdiff_t>(p[d]) + step;
        if (step == 0 || idx < 0 || idx >= static_cast<std::ptrdiff_t>(dims[d].size())) continue;
        Point q = p;
        q[d] = static_cast<std::size_t>(idx);
        out.insert(q);
      }
    } else {
      for (std::size_t c = 0; c < dims[d].size(); ++c) {
        if (c == p[d]) continue;
        Point q = p;
        q[d] = c;
        out.insert(q);
      }
    }
  }
}

}  // namespace detail

inline TuningResult bayesian_opt(const ParameterSpace& space, const ObjectiveFn& objective, const Budget& budget,
                                 std::uint64_t seed, const BayesOptions& opt = {}) {
  if (opt.init_points < 2) throw ConfigError("Bayesian optimization needs init_points >= 2");
  SearchRun run(space, objective, budget);
  std::mt19937_64 rng(seed);

  // Same draws as random_search for the initial design.
  while (run.history().size() < opt.init_points && !run.exhausted()) run.evaluate(space.sample(rng));

  GaussianProcess gp;
  while (!run.exhausted()) {
    const auto& hist = run.history();
    const auto& pts = run.points();
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      xs.push_back(space.unit_encode(pts[i]));
      ys.push_back(hist[i].value);
    }
    if (!gp.fit(xs, ys)) {
      spdlog::info("surrogate fit degenerate (constant or singular data); sampling at random this round");
      run.evaluate(space.sample(rng));
      continue;
    }
    const double best = *std::max_element(ys.begin(), ys.end());
    std::set<std::vector<std::uint64_t>> seen;
    for (const auto& p : pts) seen.insert(space.decoded_key(p));

    std::set<Point> candidates;
    for (std::size_t i = 0; i < opt.random_candidates; ++i) candidates.insert(space.sample(rng));
    std::vector<std::size_t> order(pts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ys[a] > ys[b]; });
    for (std::size_t i = 0; i < std::min(opt.local_seeds, order.size()); ++i)
      detail::add_local_candidates(space, pts[order[i]], candidates);

    const Point* chosen = nullptr;
    double chosen_ei = -1.0;
    for (const auto& c : candidates) {
      if (seen.count(space.decoded_key(c))) continue;
      const double ei = expected_improvement(gp.predict(space.unit_encode(c)), best, opt.xi);
      if (ei > chosen_ei) {
        chosen_ei = ei;
        chosen = &c;
      }
    }
    if (!chosen) {
      run.evaluate(space.sample(rng));
      continue;
    }
    run.evaluate(*chosen);
  }
  return std::move(run).finish(Strategy::BO, seed);
}

// ---------------------------------------------------------------------------
// Persistence: JSON lines, header record first, one history entry per line
// ---------------------------------------------------------------------------

inline nlohmann::json budget_json(const Budget& b) {
  nlohmann::json j = nlohmann::json::object();
  j["seconds"] = b.seconds ? nlohmann::json(*b.seconds) : nlohmann::json(nullptr);
  j["evaluations"] = b.evaluations ? nlohmann::json(*b.evaluations) : nlohmann::json(nullptr);
  return j;
}

inline Budget budget_from_json(const nlohmann::json& j) {
  Budget b;
  if (!j.at("seconds").is_null()) b.seconds = j["seconds"].get<double>();
  if (!j.at("evaluations").is_null()) b.evaluations = j["evaluations"].get<std::size_t>();
  return b;
}

inline std::string tuning_result_jsonl(const TuningResult& r) {
  nlohmann::json header{{"type", "header"},
                        {"resource", to_string(r.resource)},
                        {"strategy", to_string(r.strategy)},
                        {"seed", r.seed},
                        {"budget", budget_json(r.budget)},
                        {"best_value", r.best_value},
                        {"best_params", r.best_params},
                        {"evaluations", r.history.size()}};
  std::string out = header.dump() + "\n";
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    const auto& h = r.history[i];
    out += nlohmann::json{{"type", "eval"}, {"index", i}, {"params", h.params}, {"value", h.value},
                          {"timestamp", h.timestamp}}
               .dump() +
           "\n";
  }
  return out;
}

inline TuningResult parse_tuning_result_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  TuningResult r;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.at("type") == "header") {
        r.resource = resource_from_string(j.at("resource").get<std::string>());
        r.strategy = strategy_from_string(j.at("strategy").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.budget = budget_from_json(j.at("budget"));
        r.best_value = j.at("best_value").get<double>();
        r.best_params = j.at("best_params").get<EnemyParams>();
        have_header = true;
      } else {
        r.history.push_back(
            {j.at("params").get<EnemyParams>(), j.at("value").get<double>(), j.at("timestamp").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad tuning result: ") + e.what());
  }
  if (!have_header) throw ConfigError("tuning result has no header record");
  return r;
}

// <out>/results/<board>/<resource>/<strategy>/<seed>.jsonl
inline std::string tuning_result_path(const std::string& out_dir, const std::string& board, ResourceKind resource,
                                      Strategy strategy, std::uint64_t seed) {
  return out_dir + "/results/" + board + "/" + to_string(resource) + "/" + to_string(strategy) + "/" +
         std::to_string(seed) + ".jsonl";
}

}  // namespace hostile
