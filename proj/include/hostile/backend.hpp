#pragma once

// Execution backends. A backend runs one program (victim or SUT) against a
// deployment of enemies and returns a single timing sample. The synthetic
// backend replaces hardware with a closed-form contention model so that the
// whole pipeline can be verified deterministically.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "hostile/errors.hpp"
#include "hostile/kernels.hpp"
#include "hostile/params.hpp"
#include "hostile/platform.hpp"

namespace hostile {

// Per-resource weights, indexed by ResourceKind.
using ResourceVector = std::array<double, 3>;

inline std::size_t index(ResourceKind r) { return static_cast<std::size_t>(r); }

// Synthetic stand-in for a benchmark: baseline time and how strongly each
// interference path affects it.
struct SyntheticSut {
  double baseline_ns = 1e6;
  ResourceVector sensitivity{0.0, 0.0, 0.0};
  bool operator==(const SyntheticSut&) const = default;
};

// A system under test: an arbitrary external command timed by wall clock.
struct SutSpec {
  std::string alias;
  std::string name;
  std::string command;
  SyntheticSut synthetic;
  bool operator==(const SutSpec&) const = default;
};

using Program = std::variant<VictimConfig, SutSpec>;

inline std::string program_name(const Program& p) {
  if (const auto* v = std::get_if<VictimConfig>(&p)) return "victim-" + to_string(v->resource);
  return std::get<SutSpec>(p).alias;
}

struct EnemySlot {
  int core = 0;
  EnemyParams params;
  bool operator==(const EnemySlot&) const = default;
};

// Concrete enemies to start, one per listed core. Empty = isolation.
using Deployment = std::vector<EnemySlot>;

// Same enemy on every core except the SUT core.
inline Deployment uniform_deployment(const EnemyParams& params, const PlatformDescriptor& platform) {
  Deployment d;
  for (int c = 0; c < platform.core_count; ++c)
    if (c != platform.sut_core) d.push_back({c, params});
  return d;
}

enum class DiscardReason { Overheat, EnemyStartFailure };

inline std::string to_string(DiscardReason r) {
  return r == DiscardReason::Overheat ? "overheat" : "enemy_start_failure";
}

struct MeasurementSample {
  std::int64_t duration_ns = 0;
  std::optional<double> end_temp_celsius;
  std::optional<DiscardReason> discard_reason;  // present iff discarded

  bool discarded() const { return discard_reason.has_value(); }
  bool operator==(const MeasurementSample&) const = default;
};

inline void to_json(nlohmann::json& j, const MeasurementSample& s) {
  j = nlohmann::json{{"duration_ns", s.duration_ns}, {"discarded", s.discarded()}};
  j["end_temp_c"] = s.end_temp_celsius ? nlohmann::json(*s.end_temp_celsius) : nlohmann::json(nullptr);
  j["reason"] = s.discard_reason ? nlohmann::json(to_string(*s.discard_reason)) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, MeasurementSample& s) {
  s.duration_ns = j.at("duration_ns").get<std::int64_t>();
  s.end_temp_celsius.reset();
  s.discard_reason.reset();
  if (!j.at("end_temp_c").is_null()) s.end_temp_celsius = j["end_temp_c"].get<double>();
  if (!j.at("reason").is_null())
    s.discard_reason = j["reason"].get<std::string>() == "overheat" ? DiscardReason::Overheat
                                                                    : DiscardReason::EnemyStartFailure;
}

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendKind kind() const = 0;
  // One sample of `program` while `deployment` runs on the other cores.
  virtual MeasurementSample execute(const Program& program, const Deployment& deployment,
                                    const PlatformDescriptor& platform) = 0;
  // Called after a heat discard before the next attempt.
  virtual void cool_down(const PlatformDescriptor&) {}
  // Restarts the backend's random stream (synthetic only).
  virtual void reseed(std::uint64_t) {}
};

// ---------------------------------------------------------------------------
// Synthetic contention model
// ---------------------------------------------------------------------------

struct SyntheticProfile {
  std::string name = "custom";
  ResourceVector baseline_ns{1e6, 1e6, 1e6};  // per victim work unit, by victim resource
  // coupling[enemy resource][victim resource]
  std::array<ResourceVector, 3> coupling{};
  std::uint64_t llc_size = 512 * 1024;
  std::uint64_t line_size = 64;
  double noise_sigma = 0.0;
  double outlier_prob = 0.0;
  double outlier_factor = 1.5;
  double overheat_prob = 0.0;
  double nominal_temp_celsius = 50.0;
  double overheat_temp_celsius = 90.0;
  std::vector<double> temperature_trace;  // scripted end temperatures, cycled
  std::uint64_t seed = 1;

  void validate() const {
    for (const auto& row : coupling)
      for (double c : row)
        if (!(c >= 0.0)) throw ConfigError("synthetic coupling entries must be >= 0");
    auto prob = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must be in [0, 1]");
    };
    prob(outlier_prob, "outlier_prob");
    prob(overheat_prob, "overheat_prob");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!(outlier_factor > 1.0)) throw ConfigError("outlier_factor must be > 1");
    if (llc_size == 0 || line_size == 0) throw ConfigError("synthetic profile needs llc_size and line_size");
    for (double b : baseline_ns)
      if (!(b > 0.0)) throw ConfigError("synthetic baselines must be > 0");
  }

  // Same model with noise, outliers and overheating switched off.
  SyntheticProfile noise_free() const {
    SyntheticProfile p = *this;
    p.noise_sigma = 0.0;
    p.outlier_prob = 0.0;
    p.overheat_prob = 0.0;
    p.temperature_trace.clear();
    return p;
  }
};

inline void to_json(nlohmann::json& j, const SyntheticProfile& p) {
  nlohmann::json coupling = nlohmann::json::object();
  for (auto e : kAllResources) {
    nlohmann::json row = nlohmann::json::object();
    for (auto v : kAllResources) row[to_string(v)] = p.coupling[index(e)][index(v)];
    coupling[to_string(e)] = row;
  }
  nlohmann::json baseline = nlohmann::json::object();
  for (auto v : kAllResources) baseline[to_string(v)] = p.baseline_ns[index(v)];
  j = nlohmann::json{{"name", p.name},
                     {"baseline_ns", baseline},
                     {"coupling", coupling},
                     {"llc_size", p.llc_size},
                     {"line_size", p.line_size},
                     {"noise_sigma", p.noise_sigma},
                     {"outlier_prob", p.outlier_prob},
                     {"outlier_factor", p.outlier_factor},
                     {"overheat_prob", p.overheat_prob},
                     {"nominal_temp_celsius", p.nominal_temp_celsius},
                     {"overheat_temp_celsius", p.overheat_temp_celsius},
                     {"temperature_trace", p.temperature_trace},
                     {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticProfile& p) {
  try {
    p = SyntheticProfile{};
    p.name = j.value("name", p.name);
    for (auto v : kAllResources) p.baseline_ns[index(v)] = j.at("baseline_ns").at(to_string(v)).get<double>();
    for (auto e : kAllResources)
      for (auto v : kAllResources)
        p.coupling[index(e)][index(v)] = j.at("coupling").at(to_string(e)).value(to_string(v), 0.0);
    p.llc_size = j.value("llc_size", p.llc_size);
    p.line_size = j.value("line_size", p.line_size);
    p.noise_sigma = j.value("noise_sigma", 0.0);
    p.outlier_prob = j.value("outlier_prob", 0.0);
    p.outlier_factor = j.value("outlier_factor", 1.5);
    p.overheat_prob = j.value("overheat_prob", 0.0);
    p.nominal_temp_celsius = j.value("nominal_temp_celsius", 50.0);
    p.overheat_temp_celsius = j.value("overheat_temp_celsius", 90.0);
    p.temperature_trace = j.value("temperature_trace", std::vector<double>{});
    p.seed = j.value("seed", std::uint64_t{1});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad synthetic profile: ") + e.what());
  }
  p.validate();
}

// "pi3-like": strongly cache-coupled; "410c-like": weakly coupled. Both use
// a 4-core, 512 KB / 64 B / 16-way cache. Scaffolding values only.
inline SyntheticProfile reference_profile(const std::string& name) {
  SyntheticProfile p;
  p.name = name;
  p.llc_size = 512 * 1024;
  p.line_size = 64;
  p.baseline_ns = {2.0e6, 5.0e6, 8.0e6};
  p.noise_sigma = 0.02;
  p.outlier_prob = 0.01;
  p.outlier_factor = 1.5;
  const auto C = index(ResourceKind::Cache), B = index(ResourceKind::Bus), M = index(ResourceKind::Memory);
  if (name == "pi3-like") {
    p.coupling[C] = {5.0, 0.05, 0.4};
    p.coupling[B] = {0.3, 0.25, 0.2};
    p.coupling[M] = {1.0, 0.3, 2.0};
  } else if (name == "410c-like") {
    p.coupling[C] = {0.27, 0.01, 0.1};
    p.coupling[B] = {0.05, 0.047, 0.05};
    p.coupling[M] = {0.2, 0.03, 0.55};
  } else if (name == "zero-coupling") {
    p.noise_sigma = 0.0;
    p.outlier_prob = 0.0;
  } else {
    throw ConfigError("unknown bundled synthetic profile '" + name + "'");
  }
  return p;
}

// A bundled profile name, or a path to a JSON profile file.
inline SyntheticProfile load_synthetic_profile(const std::string& name_or_path) {
  if (name_or_path == "pi3-like" || name_or_path == "410c-like" || name_or_path == "zero-coupling")
    return reference_profile(name_or_path);
  std::ifstream in(name_or_path);
  if (!in) throw ConfigError("cannot open synthetic profile " + name_or_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad synthetic profile " + name_or_path + ": " + e.what());
  }
  return j.get<SyntheticProfile>();
}

// Stress an enemy puts on its resource, in [0, 1]:
//   cache:  min(buf/llc, 1) * a(stride) * w(ops),  a = 1 on line-aligned
//           strides else 0.75,  w = (stores + 0.6 loads) / 5
//   bus:    min(buf/llc, 1) * (2 - width) * (swap ? 1 : 0.9) / 2
//   memory: min(buf/(4 llc), 1) * (0.5 + 0.5 sub/buf)
inline double intensity(const EnemyParams& params, const SyntheticProfile& profile) {
  const double llc = static_cast<double>(profile.llc_size);
  switch (params.resource()) {
    case ResourceKind::Cache: {
      const auto& p = params.cache();
      const double fill = std::min(static_cast<double>(p.buffer_size) / llc, 1.0);
      const double align = p.stride % profile.line_size == 0 ? 1.0 : 0.75;
      double stores = 0, loads = 0;
      for (auto op : p.ops) (op == MemOp::Store ? stores : loads) += 1.0;
      return fill * align * (1.0 * stores + 0.6 * loads) / 5.0;
    }
    case ResourceKind::Bus: {
      const auto& p = params.bus();
      const double fill = std::min(static_cast<double>(p.buffer_size) / llc, 1.0);
      return fill * (2.0 - p.element_width) * (p.swap_roles ? 1.0 : 0.9) / 2.0;
    }
    case ResourceKind::Memory: {
      const auto& p = params.memory();
      const double buf = static_cast<double>(p.buffer_size);
      return std::min(buf / (4.0 * llc), 1.0) * (0.5 + 0.5 * static_cast<double>(p.subregion_size) / buf);
    }
  }
  return 0.0;
}

// Baseline time and per-resource sensitivity of a program under the model.
inline std::pair<double, ResourceVector> synthetic_program(const Program& program, const SyntheticProfile& profile) {
  if (const auto* v = std::get_if<VictimConfig>(&program)) {
    ResourceVector s{0.0, 0.0, 0.0};
    s[index(v->resource)] = 1.0;
    return {profile.baseline_ns[index(v->resource)] * static_cast<double>(v->work_units), s};
  }
  const auto& sut = std::get<SutSpec>(program).synthetic;
  return {sut.baseline_ns, sut.sensitivity};
}

// Noise-free contention factor 1 + sum over enemies and victim resources of
// sensitivity * coupling * intensity.
inline double synthetic_contention(const Program& program, const Deployment& deployment,
                                   const SyntheticProfile& profile) {
  const auto sensitivity = synthetic_program(program, profile).second;
  double factor = 1.0;
  for (const auto& slot : deployment) {
    const double inten = intensity(slot.params, profile);
    for (auto v : kAllResources)
      factor += sensitivity[index(v)] * profile.coupling[index(slot.params.resource())][index(v)] * inten;
  }
  return factor;
}

// One modelled sample. Draws exactly three variates (noise, outlier,
// overheat) per call in a fixed order, so the random stream does not depend
// on the deployment.
inline MeasurementSample synthetic_duration(const Program& program, const Deployment& deployment,
                                            const SyntheticProfile& profile, std::mt19937_64& rng,
                                            std::uint64_t sample_index = 0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double z = gauss(rng);
  const double u_outlier = unit(rng);
  const double u_heat = unit(rng);

  double noise = std::exp(profile.noise_sigma * z);
  if (u_outlier < profile.outlier_prob) noise *= profile.outlier_factor;
  const double baseline = synthetic_program(program, profile).first;

  MeasurementSample s;
  s.duration_ns = std::llround(baseline * synthetic_contention(program, deployment, profile) * noise);
  if (!profile.temperature_trace.empty())
    s.end_temp_celsius = profile.temperature_trace[sample_index % profile.temperature_trace.size()];
  else
    s.end_temp_celsius = u_heat < profile.overheat_prob ? profile.overheat_temp_celsius : profile.nominal_temp_celsius;
  return s;
}

class SyntheticBackend : public Backend {
 public:
  explicit SyntheticBackend(SyntheticProfile profile) : profile_(std::move(profile)), rng_(profile_.seed) {
    profile_.validate();
  }

  BackendKind kind() const override { return BackendKind::Synthetic; }

  MeasurementSample execute(const Program& program, const Deployment& deployment,
                            const PlatformDescriptor&) override {
    return synthetic_duration(program, deployment, profile_, rng_, counter_++);
  }

  void reseed(std::uint64_t seed) override {
    rng_.seed(seed);
    counter_ = 0;
  }

  const SyntheticProfile& profile() const { return profile_; }

 private:
  SyntheticProfile profile_;
  std::mt19937_64 rng_;
  std::uint64_t counter_ = 0;
};

}  // namespace hostile
