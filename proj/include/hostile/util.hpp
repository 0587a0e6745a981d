#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "hostile/errors.hpp"

namespace hostile {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Independent stream seed for a (seed, tag...) context.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(seed);
  for (auto t : tags) s = splitmix64(s ^ splitmix64(t + 0x632BE59BD9B4E019ull));
  return s;
}

// FNV-1a, used for checkpoint input fingerprints.
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Wall-clock and/or evaluation-count limit for a search. A search stops as
// soon as either limit is reached.
struct Budget {
  std::optional<double> seconds;
  std::optional<std::size_t> evaluations;

  static Budget evals(std::size_t n) { return {std::nullopt, n}; }
  static Budget wall(double s) { return {s, std::nullopt}; }

  bool valid() const {
    return (seconds || evaluations) && (!seconds || *seconds > 0) && (!evaluations || *evaluations > 0);
  }

  // "500evals", "500e", "90s", "30m", "2h", "1.5h", or a bare number of
  // seconds.
  static Budget parse(std::string_view text) {
    std::string s(text);
    std::size_t pos = 0;
    double value = 0;
    try {
      value = std::stod(s, &pos);
    } catch (const std::logic_error&) {
      throw ConfigError("bad budget '" + s + "'");
    }
    std::string unit = s.substr(pos);
    for (auto& c : unit) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    Budget b;
    if (unit == "evals" || unit == "eval" || unit == "e" || unit == "evaluations") {
      if (value < 1 || value != static_cast<double>(static_cast<std::size_t>(value)))
        throw ConfigError("evaluation budget must be a positive integer");
      b.evaluations = static_cast<std::size_t>(value);
    } else if (unit.empty() || unit == "s") {
      b.seconds = value;
    } else if (unit == "m" || unit == "min") {
      b.seconds = value * 60;
    } else if (unit == "h") {
      b.seconds = value * 3600;
    } else {
      throw ConfigError("bad budget unit in '" + s + "'");
    }
    if (!b.valid()) throw ConfigError("budget must be > 0");
    return b;
  }

  std::string to_string() const {
    std::ostringstream os;
    if (evaluations) os << *evaluations << "evals";
    if (seconds) os << (evaluations ? "+" : "") << *seconds << "s";
    return os.str();
  }

  bool operator==(const Budget&) const = default;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Writes through a temporary file and renames, so readers never see a
// partial file.
inline void write_file(const std::string& path, std::string_view content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw EnvironmentError("cannot write " + path);
    out << content;
    if (!out) throw EnvironmentError("short write to " + path);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw EnvironmentError("cannot rename " + tmp + ": " + ec.message());
}

}  // namespace hostile
