#pragma once

#include <stdexcept>
#include <string>

namespace hostile {

// Invalid or incomplete configuration (platform file, campaign config, CLI
// arguments). Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// The host or its processes misbehaved: spawn/pin failures, repeated enemy
// start failures, allocation failure. Maps to exit code 3.
class EnvironmentError : public std::runtime_error {
 public:
  explicit EnvironmentError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed data handed to a pure routine (inconsistent rankings, empty
// sample sets, nonpositive ratios).
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace hostile
