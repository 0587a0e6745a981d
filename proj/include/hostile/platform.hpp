#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "hostile/errors.hpp"

namespace hostile {

enum class BackendKind { Real, Synthetic };

inline std::string to_string(BackendKind b) { return b == BackendKind::Real ? "real" : "synthetic"; }

inline BackendKind backend_from_string(const std::string& s) {
  if (s == "real") return BackendKind::Real;
  if (s == "synthetic") return BackendKind::Synthetic;
  throw ConfigError("unknown backend '" + s + "' (expected real|synthetic)");
}

// Host topology, cache geometry and measurement controls. Everything that
// bounds parameter spaces or configures victims is read from here.
struct PlatformDescriptor {
  std::string name = "host";
  int core_count = 0;
  int sut_core = 0;
  std::uint64_t llc_size = 0;
  std::uint64_t line_size = 0;
  std::uint64_t associativity = 0;
  std::uint64_t ram_bytes = 0;  // 0: unknown, buffer caps fall back to 64 MB
  double temp_limit_celsius = 80.0;
  std::optional<std::string> temp_probe;  // shell command printing degrees C
  BackendKind backend = BackendKind::Synthetic;
  std::uint64_t victim_work_units = 1;
  int heat_cooldown_ms = 1000;
  int startup_wait_ms = 10;
  std::string lock_file = "/tmp/hostile.lock";
  std::string enemy_binary;   // empty: next to the running executable
  std::string victim_binary;  // empty: next to the running executable
  std::string synthetic_profile = "pi3-like";  // bundled name or JSON path

  bool has_cache_geometry() const { return llc_size > 0 && line_size > 0 && associativity > 0; }

  // Throws ConfigError describing the first broken invariant.
  void validate() const {
    if (core_count < 2) throw ConfigError("platform core_count must be >= 2");
    if (sut_core < 0 || sut_core >= core_count) throw ConfigError("platform sut_core out of range");
    if (!(temp_limit_celsius > 0)) throw ConfigError("platform temp_limit_celsius must be > 0");
    if (!has_cache_geometry()) throw ConfigError("platform is missing cache geometry (llc_size, line_size, associativity)");
    if (llc_size % (line_size * associativity) != 0)
      throw ConfigError("llc_size must be a multiple of line_size * associativity");
    if (victim_work_units == 0) throw ConfigError("victim_work_units must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const PlatformDescriptor& p) {
  j = nlohmann::json{{"name", p.name},
                     {"core_count", p.core_count},
                     {"sut_core", p.sut_core},
                     {"llc_size", p.llc_size},
                     {"line_size", p.line_size},
                     {"associativity", p.associativity},
                     {"ram_bytes", p.ram_bytes},
                     {"temp_limit_celsius", p.temp_limit_celsius},
                     {"backend", to_string(p.backend)},
                     {"victim_work_units", p.victim_work_units},
                     {"heat_cooldown_ms", p.heat_cooldown_ms},
                     {"startup_wait_ms", p.startup_wait_ms},
                     {"lock_file", p.lock_file},
                     {"enemy_binary", p.enemy_binary},
                     {"victim_binary", p.victim_binary},
                     {"synthetic_profile", p.synthetic_profile}};
  j["temp_probe"] = p.temp_probe ? nlohmann::json(*p.temp_probe) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, PlatformDescriptor& p) {
  try {
    p = PlatformDescriptor{};
    p.name = j.value("name", p.name);
    p.core_count = j.at("core_count").get<int>();
    p.sut_core = j.value("sut_core", 0);
    p.llc_size = j.value("llc_size", std::uint64_t{0});
    p.line_size = j.value("line_size", std::uint64_t{0});
    p.associativity = j.value("associativity", std::uint64_t{0});
    p.ram_bytes = j.value("ram_bytes", std::uint64_t{0});
    p.temp_limit_celsius = j.value("temp_limit_celsius", 80.0);
    if (j.contains("temp_probe") && !j["temp_probe"].is_null()) p.temp_probe = j["temp_probe"].get<std::string>();
    p.backend = backend_from_string(j.value("backend", std::string("synthetic")));
    p.victim_work_units = j.value("victim_work_units", std::uint64_t{1});
    p.heat_cooldown_ms = j.value("heat_cooldown_ms", 1000);
    p.startup_wait_ms = j.value("startup_wait_ms", 10);
    p.lock_file = j.value("lock_file", p.lock_file);
    p.enemy_binary = j.value("enemy_binary", std::string{});
    p.victim_binary = j.value("victim_binary", std::string{});
    p.synthetic_profile = j.value("synthetic_profile", p.synthetic_profile);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad platform config: ") + e.what());
  }
}

}  // namespace hostile
