#pragma once

// Measurement protocol: flush, run, check temperature, repeat until the
// metric's confidence interval is tight enough or the sample cap is hit.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "hostile/backend.hpp"
#include "hostile/errors.hpp"
#include "hostile/kernels.hpp"
#include "hostile/platform.hpp"
#include "hostile/stats.hpp"

namespace hostile {

struct SlowdownMetric {
  enum class Kind { Median, Max, Quantile };
  Kind kind = Kind::Quantile;
  double q = 0.90;

  static SlowdownMetric median() { return {Kind::Median, 0.5}; }
  static SlowdownMetric max() { return {Kind::Max, 1.0}; }
  static SlowdownMetric quantile(double q) {
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("quantile metric level must be in (0, 1)");
    return {Kind::Quantile, q};
  }

  // Level used for order statistics; Median is the 0.5 quantile.
  double level() const { return kind == Kind::Median ? 0.5 : q; }

  std::string to_string() const {
    switch (kind) {
      case Kind::Median: return "median";
      case Kind::Max: return "max";
      case Kind::Quantile: {
        std::ostringstream os;
        os << "quantile:" << q;
        return os.str();
      }
    }
    return "?";
  }

  static SlowdownMetric parse(const std::string& s) {
    if (s == "median") return median();
    if (s == "max") return max();
    if (s.rfind("quantile", 0) == 0) {
      const auto colon = s.find(':');
      if (colon == std::string::npos) return quantile(0.90);
      try {
        return quantile(std::stod(s.substr(colon + 1)));
      } catch (const std::logic_error&) {
        throw ConfigError("bad metric '" + s + "'");
      }
    }
    throw ConfigError("bad metric '" + s + "' (expected median|max|quantile[:q])");
  }

  bool operator==(const SlowdownMetric&) const = default;
};

struct MeasurementRun {
  std::vector<MeasurementSample> samples;
  SlowdownMetric metric;
  std::int64_t metric_value_ns = 0;
  std::int64_t ci_low_ns = 0;
  std::int64_t ci_high_ns = 0;
  bool converged = false;

  std::vector<std::int64_t> valid_durations() const {
    std::vector<std::int64_t> v;
    for (const auto& s : samples)
      if (!s.discarded()) v.push_back(s.duration_ns);
    return v;
  }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [](const auto& s) { return !s.discarded(); }));
  }
  bool operator==(const MeasurementRun&) const = default;
};

inline void to_json(nlohmann::json& j, const MeasurementRun& r) {
  j = nlohmann::json{{"samples", r.samples},
                     {"metric", r.metric.to_string()},
                     {"metric_value_ns", r.metric_value_ns},
                     {"ci", {r.ci_low_ns, r.ci_high_ns}},
                     {"converged", r.converged}};
}

inline void from_json(const nlohmann::json& j, MeasurementRun& r) {
  r.samples = j.at("samples").get<std::vector<MeasurementSample>>();
  r.metric = SlowdownMetric::parse(j.at("metric").get<std::string>());
  r.metric_value_ns = j.at("metric_value_ns").get<std::int64_t>();
  r.ci_low_ns = j.at("ci").at(0).get<std::int64_t>();
  r.ci_high_ns = j.at("ci").at(1).get<std::int64_t>();
  r.converged = j.at("converged").get<bool>();
}

inline bool ci_overlap_significant(const MeasurementRun& a, const MeasurementRun& b) {
  return stats::ci_overlap_significant(static_cast<double>(a.ci_low_ns), static_cast<double>(a.ci_high_ns),
                                       static_cast<double>(b.ci_low_ns), static_cast<double>(b.ci_high_ns));
}

struct MeasureOptions {
  std::size_t initial_samples = 20;
  std::size_t batch = 20;
  std::size_t max_valid = 200;
  std::size_t max_attempts = 400;
  double tolerance = 0.05;  // both CI endpoints within 5% of the metric
  double confidence = 0.90;
  std::size_t max_consecutive_start_failures = 5;
};

// Metric value and interval over the valid durations. Max has a degenerate
// interval at the maximum.
struct MetricEstimate {
  std::int64_t value = 0, low = 0, high = 0;
};

inline MetricEstimate estimate_metric(const std::vector<std::int64_t>& durations, const SlowdownMetric& metric,
                                      double confidence) {
  if (durations.empty()) throw InputError("no valid samples");
  if (metric.kind == SlowdownMetric::Kind::Max) {
    const auto m = *std::max_element(durations.begin(), durations.end());
    return {m, m, m};
  }
  const auto value = stats::quantile(durations, metric.level());
  const auto ci = stats::quantile_ci(durations, metric.level(), confidence);
  return {value, ci.low, ci.high};
}

// ---------------------------------------------------------------------------
// Cache flush and temperature
// ---------------------------------------------------------------------------

// Evicts the shared cache by storing to every line of a 2 x llc scratch
// buffer. Synthetic platforms skip it. With `trace`, records the line
// offsets instead of touching memory. Returns the number of lines touched.
inline std::uint64_t flush_cache_state(const PlatformDescriptor& platform, AccessTrace* trace = nullptr) {
  if (platform.backend == BackendKind::Synthetic && trace == nullptr) return 0;
  if (!platform.has_cache_geometry()) throw ConfigError("cache flush needs cache geometry");
  const std::uint64_t bytes = 2 * platform.llc_size;
  std::uint64_t lines = 0;
  if (trace) {
    for (std::uint64_t off = 0; off < bytes; off += platform.line_size, ++lines)
      trace->push_back({0, off, MemOp::Store, 1});
    return lines;
  }
  std::unique_ptr<std::uint8_t[]> scratch(new (std::nothrow) std::uint8_t[bytes]);
  if (!scratch) throw EnvironmentError("cannot allocate cache flush buffer");
  volatile std::uint8_t* p = scratch.get();
  for (std::uint64_t off = 0; off < bytes; off += platform.line_size, ++lines) p[off] = static_cast<std::uint8_t>(off);
  return lines;
}

namespace detail {

inline std::optional<double> parse_temperature(const std::string& text) {
  const char* begin = text.c_str();
  while (*begin == ' ' || *begin == '\t') ++begin;
  // vcgencmd prints "temp=48.3'C"
  if (std::string_view(begin).rfind("temp=", 0) == 0) begin += 5;
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin) return std::nullopt;
  while (*end == ' ' || *end == '\n' || *end == '\r' || *end == '\'' || *end == 'C') ++end;
  if (*end != '\0') return std::nullopt;
  return v;
}

}  // namespace detail

// Runs the configured probe: a file path (sysfs style, millidegrees
// accepted) or a shell command printing degrees Celsius. Any failure yields
// nullopt, and such samples are never discarded for heat.
inline std::optional<double> read_temperature(const PlatformDescriptor& platform) {
  if (!platform.temp_probe || platform.temp_probe->empty()) return std::nullopt;
  const std::string& probe = *platform.temp_probe;
  std::string text;
  if (probe.front() == '/') {
    std::ifstream in(probe);
    if (!in) return std::nullopt;
    std::getline(in, text);
    auto v = detail::parse_temperature(text);
    if (v && *v > 1000.0) *v /= 1000.0;
    return v;
  }
  FILE* pipe = ::popen(probe.c_str(), "r");
  if (!pipe) return std::nullopt;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) text += buf;
  const int status = ::pclose(pipe);
  if (status != 0) return std::nullopt;
  return detail::parse_temperature(text);
}

// ---------------------------------------------------------------------------
// measure / slowdown
// ---------------------------------------------------------------------------

inline void check_deployment(const Deployment& deployment, const PlatformDescriptor& platform) {
  std::set<int> cores;
  for (const auto& slot : deployment) {
    if (slot.core == platform.sut_core) throw ConfigError("deployment places an enemy on the SUT core");
    if (slot.core < 0 || slot.core >= platform.core_count) throw ConfigError("deployment core out of range");
    if (!cores.insert(slot.core).second) throw ConfigError("deployment uses a core twice");
  }
}

inline MeasurementRun measure(Backend& backend, const Program& program, const Deployment& deployment,
                              const PlatformDescriptor& platform, const SlowdownMetric& metric,
                              const MeasureOptions& opt = {}) {
  check_deployment(deployment, platform);
  MeasurementRun run;
  run.metric = metric;
  std::size_t valid = 0, attempts = 0, consecutive_failures = 0;
  std::size_t target = std::min(opt.initial_samples, opt.max_valid);
  std::vector<std::int64_t> durations;

  for (;;) {
    while (valid < target && attempts < opt.max_attempts) {
      flush_cache_state(platform);
      MeasurementSample s = backend.execute(program, deployment, platform);
      ++attempts;
      if (s.discard_reason == DiscardReason::EnemyStartFailure) {
        run.samples.push_back(s);
        if (++consecutive_failures > opt.max_consecutive_start_failures)
          throw EnvironmentError("enemy processes failed to start " + std::to_string(consecutive_failures) +
                                 " times in a row");
        continue;
      }
      consecutive_failures = 0;
      if (s.end_temp_celsius && *s.end_temp_celsius > platform.temp_limit_celsius) {
        s.discard_reason = DiscardReason::Overheat;
        run.samples.push_back(s);
        spdlog::debug("sample discarded: {:.1f} C above limit", *s.end_temp_celsius);
        backend.cool_down(platform);
        continue;
      }
      run.samples.push_back(s);
      durations.push_back(s.duration_ns);
      ++valid;
    }
    if (valid < opt.initial_samples)
      throw EnvironmentError("only " + std::to_string(valid) + " valid samples after " + std::to_string(attempts) +
                             " attempts");

    const auto est = estimate_metric(durations, metric, opt.confidence);
    run.metric_value_ns = est.value;
    run.ci_low_ns = est.low;
    run.ci_high_ns = est.high;
    const double v = static_cast<double>(est.value);
    run.converged = static_cast<double>(est.value - est.low) <= opt.tolerance * v &&
                    static_cast<double>(est.high - est.value) <= opt.tolerance * v;
    if (run.converged || valid >= opt.max_valid || attempts >= opt.max_attempts) break;
    target = std::min(valid + opt.batch, opt.max_valid);
  }
  return run;
}

struct SlowdownResult {
  double ratio = 1.0;
  MeasurementRun isolated;
  MeasurementRun contended;
};

inline double slowdown_ratio(const MeasurementRun& isolated, const MeasurementRun& contended) {
  if (isolated.metric_value_ns <= 0) return contended.metric_value_ns > 0 ? 0.0 : 1.0;
  return static_cast<double>(contended.metric_value_ns) / static_cast<double>(isolated.metric_value_ns);
}

inline SlowdownResult slowdown(Backend& backend, const Program& program, const Deployment& deployment,
                               const PlatformDescriptor& platform, const SlowdownMetric& metric,
                               const MeasureOptions& opt = {}) {
  SlowdownResult r;
  r.isolated = measure(backend, program, {}, platform, metric, opt);
  r.contended = measure(backend, program, deployment, platform, metric, opt);
  r.ratio = slowdown_ratio(r.isolated, r.contended);
  return r;
}

}  // namespace hostile
