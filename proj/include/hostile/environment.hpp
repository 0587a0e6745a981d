#pragma once

// Second tuning stage: compose resource-tuned enemies into whole-chip
// environments, rank them against each victim, pick a Pareto-optimal one.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hostile/backend.hpp"
#include "hostile/errors.hpp"
#include "hostile/harness.hpp"
#include "hostile/params.hpp"
#include "hostile/platform.hpp"
#include "hostile/util.hpp"

namespace hostile {

struct HostileEnvironment {
  std::map<int, ResourceKind> assignment;  // non-SUT core -> resource of its enemy
  std::string label;                       // one letter per non-SUT core, ascending core order

  bool operator==(const HostileEnvironment&) const = default;
};

inline std::string environment_label(const std::map<int, ResourceKind>& assignment) {
  std::string s;
  for (const auto& [core, r] : assignment) s += letter(r);
  return s;
}

// Rebuilds the assignment from a label, skipping the SUT core.
inline HostileEnvironment environment_from_label(const std::string& label, int sut_core = 0) {
  HostileEnvironment e;
  int core = 0;
  for (char c : label) {
    if (core == sut_core) ++core;
    e.assignment[core++] = resource_from_letter(c);
  }
  e.label = label;
  return e;
}

// All |resources|^(n-1) environments, labels in lexicographic order.
inline std::vector<HostileEnvironment> enumerate_environments(int n_cores, const std::set<ResourceKind>& resources,
                                                              int sut_core = 0) {
  if (n_cores < 2) throw InputError("need at least 2 cores to build an environment");
  if (resources.empty()) throw InputError("need at least one resource");
  if (sut_core < 0 || sut_core >= n_cores) throw InputError("sut core out of range");
  std::string letters;
  for (auto r : resources) letters += letter(r);
  std::sort(letters.begin(), letters.end());

  const auto slots = static_cast<std::size_t>(n_cores - 1);
  std::vector<std::size_t> digit(slots, 0);
  std::vector<HostileEnvironment> out;
  for (;;) {
    std::string label(slots, ' ');
    for (std::size_t i = 0; i < slots; ++i) label[i] = letters[digit[i]];
    out.push_back(environment_from_label(label, sut_core));
    std::size_t i = slots;
    while (i > 0 && ++digit[i - 1] == letters.size()) digit[--i] = 0;
    if (i == 0) break;
  }
  return out;
}

inline Deployment to_deployment(const HostileEnvironment& env, const std::map<ResourceKind, EnemyParams>& tuned) {
  Deployment d;
  for (const auto& [core, r] : env.assignment) {
    auto it = tuned.find(r);
    if (it == tuned.end()) throw InputError("no tuned enemy for resource " + to_string(r));
    d.push_back({core, it->second});
  }
  return d;
}

inline void to_json(nlohmann::json& j, const HostileEnvironment& e) {
  nlohmann::json a = nlohmann::json::object();
  for (const auto& [core, r] : e.assignment) a[std::to_string(core)] = to_string(r);
  j = nlohmann::json{{"label", e.label}, {"assignment", a}};
}

inline void from_json(const nlohmann::json& j, HostileEnvironment& e) {
  e = HostileEnvironment{};
  for (const auto& [core, r] : j.at("assignment").items())
    e.assignment[std::stoi(core)] = resource_from_string(r.get<std::string>());
  e.label = j.at("label").get<std::string>();
  if (e.label != environment_label(e.assignment)) throw ConfigError("environment label does not match assignment");
}

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

struct RankedEntry {
  HostileEnvironment environment;
  double score = 0.0;
  bool operator==(const RankedEntry&) const = default;
};

struct RankedEnvironments {
  ResourceKind resource = ResourceKind::Cache;
  std::vector<RankedEntry> entries;  // best first

  // 1-based position of `label`.
  std::size_t rank_of(const std::string& label) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].environment.label == label) return i + 1;
    throw InputError("environment " + label + " not in ranking");
  }

  bool operator==(const RankedEnvironments&) const = default;
};

// Orders scored environments: higher score first, equal scores by label.
// The order depends only on the (label, score) set, not on input order.
inline RankedEnvironments rank_scored(ResourceKind resource, std::vector<RankedEntry> scored) {
  std::sort(scored.begin(), scored.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.environment.label < b.environment.label;
  });
  return {resource, std::move(scored)};
}

// Measures every environment against the resource's victim. `isolated` is
// the victim's isolation run; `on_score` sees each score as soon as it is
// known (so callers can persist partial progress), and `known` supplies
// scores already measured by an interrupted run. With `seed_base`, the
// backend is reseeded before every measurement so each score is independent
// of which others were measured in this call.
inline RankedEnvironments rank_environments(
    Backend& backend, ResourceKind resource, const std::vector<HostileEnvironment>& environments,
    const std::map<ResourceKind, EnemyParams>& tuned, const PlatformDescriptor& platform, const SlowdownMetric& metric,
    const MeasureOptions& opt = {}, const std::function<void(const HostileEnvironment&, double)>& on_score = {},
    const std::map<std::string, double>& known = {}, std::optional<std::uint64_t> seed_base = {}) {
  const Program victim = make_victim_config(resource, platform);
  std::optional<MeasurementRun> isolated;
  std::vector<RankedEntry> scored;
  for (std::size_t i = 0; i < environments.size(); ++i) {
    const auto& env = environments[i];
    if (auto it = known.find(env.label); it != known.end()) {
      scored.push_back({env, it->second});
      continue;
    }
    if (!isolated) {
      if (seed_base) backend.reseed(derive_seed(*seed_base, {0}));
      isolated = measure(backend, victim, {}, platform, metric, opt);
    }
    if (seed_base) backend.reseed(derive_seed(*seed_base, {fnv1a(env.label)}));
    const auto run = measure(backend, victim, to_deployment(env, tuned), platform, metric, opt);
    const double score = slowdown_ratio(*isolated, run);
    scored.push_back({env, score});
    if (on_score) on_score(env, score);
  }
  return rank_scored(resource, std::move(scored));
}

// ---------------------------------------------------------------------------
// Pareto selection
// ---------------------------------------------------------------------------

struct ParetoChoice {
  HostileEnvironment environment;
  std::map<ResourceKind, std::size_t> ranks;  // 1-based, per ranking
  std::vector<std::string> pareto_set;        // labels, lexicographic
  // "unique", "all-but-one", "rank-sum"
  std::string rule;
};

namespace detail {

// Labels -> per-ranking 1-based ranks, after checking every ranking covers
// the same environment set.
inline std::map<std::string, std::vector<std::size_t>> rank_table(const std::vector<RankedEnvironments>& rankings) {
  if (rankings.empty()) throw InputError("pareto_select needs at least one ranking");
  std::map<std::string, std::vector<std::size_t>> table;
  for (const auto& e : rankings.front().entries) {
    if (!table.emplace(e.environment.label, std::vector<std::size_t>{}).second)
      throw InputError("environment " + e.environment.label + " ranked twice");
  }
  for (const auto& r : rankings) {
    if (r.entries.size() != table.size()) throw InputError("rankings cover different environment sets");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
      const auto& label = r.entries[i].environment.label;
      auto it = table.find(label);
      if (it == table.end() || !seen.insert(label).second)
        throw InputError("rankings cover different environment sets");
      it->second.push_back(i + 1);
    }
  }
  if (table.empty()) throw InputError("rankings are empty");
  return table;
}

}  // namespace detail

// True when `a` is ranked strictly better than `b` in every ranking.
inline bool rank_dominates(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] >= b[i]) return false;
  return true;
}

// Pareto-optimal environment under per-resource rank order. Among several
// Pareto-optimal environments, prefers the one ranked better than every
// other candidate in all but at most one ranking; if that does not single
// out one environment, the smallest rank sum wins, then the label.
inline ParetoChoice pareto_choose(const std::vector<RankedEnvironments>& rankings) {
  const auto table = detail::rank_table(rankings);
  std::vector<std::string> front;
  for (const auto& [label, ranks] : table) {
    bool dominated = false;
    for (const auto& [other, oranks] : table)
      if (other != label && rank_dominates(oranks, ranks)) {
        dominated = true;
        break;
      }
    if (!dominated) front.push_back(label);
  }

  ParetoChoice choice;
  choice.pareto_set = front;
  std::string pick;
  if (front.size() == 1) {
    pick = front.front();
    choice.rule = "unique";
  } else {
    const std::size_t k = rankings.size();
    std::vector<std::string> qualified;
    for (const auto& a : front) {
      bool ok = true;
      for (const auto& b : front) {
        if (a == b) continue;
        std::size_t better = 0;
        for (std::size_t i = 0; i < k; ++i) better += table.at(a)[i] < table.at(b)[i];
        if (better + 1 < k) {
          ok = false;
          break;
        }
      }
      if (ok) qualified.push_back(a);
    }
    if (qualified.size() == 1) {
      pick = qualified.front();
      choice.rule = "all-but-one";
    } else {
      const auto& pool = qualified.empty() ? front : qualified;
      auto sum = [&](const std::string& l) {
        std::size_t s = 0;
        for (auto r : table.at(l)) s += r;
        return s;
      };
      pick = *std::min_element(pool.begin(), pool.end(), [&](const std::string& a, const std::string& b) {
        const auto sa = sum(a), sb = sum(b);
        return sa != sb ? sa < sb : a < b;
      });
      choice.rule = "rank-sum";
    }
  }
  for (const auto& e : rankings.front().entries)
    if (e.environment.label == pick) choice.environment = e.environment;
  for (std::size_t i = 0; i < rankings.size(); ++i) choice.ranks[rankings[i].resource] = table.at(pick)[i];
  return choice;
}

inline HostileEnvironment pareto_select(const std::vector<RankedEnvironments>& rankings) {
  return pareto_choose(rankings).environment;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline std::string rankings_csv(const std::vector<RankedEnvironments>& rankings) {
  std::ostringstream os;
  os.precision(17);
  os << "resource,rank,label,score\n";
  for (const auto& r : rankings)
    for (std::size_t i = 0; i < r.entries.size(); ++i)
      os << to_string(r.resource) << ',' << i + 1 << ',' << r.entries[i].environment.label << ','
         << r.entries[i].score << '\n';
  return os.str();
}

inline std::vector<RankedEnvironments> parse_rankings_csv(const std::string& text, int sut_core = 0) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line.rfind("resource,rank,label,score", 0) != 0) throw ConfigError("rankings CSV has no header");
  std::vector<RankedEnvironments> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string res, rank, label, score;
    if (!std::getline(row, res, ',') || !std::getline(row, rank, ',') || !std::getline(row, label, ',') ||
        !std::getline(row, score))
      throw ConfigError("bad rankings CSV row: " + line);
    const auto r = resource_from_string(res);
    if (out.empty() || out.back().resource != r) out.push_back({r, {}});
    if (std::stoul(rank) != out.back().entries.size() + 1) throw ConfigError("rankings CSV rows out of order");
    out.back().entries.push_back({environment_from_label(label, sut_core), std::stod(score)});
  }
  return out;
}

inline nlohmann::json environment_json(const ParetoChoice& c) {
  nlohmann::json j = c.environment;
  nlohmann::json ranks = nlohmann::json::object();
  for (const auto& [r, rank] : c.ranks) ranks[to_string(r)] = rank;
  j["ranks"] = ranks;
  j["pareto_set"] = c.pareto_set;
  j["rule"] = c.rule;
  return j;
}

}  // namespace hostile
