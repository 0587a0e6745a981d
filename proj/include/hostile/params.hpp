#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "hostile/errors.hpp"
#include "hostile/platform.hpp"

namespace hostile {

// Shared resources targeted by enemy/victim pairs. The enumerator order is
// also the EnemyParams variant order.
enum class ResourceKind { Cache = 0, Bus = 1, Memory = 2 };

inline constexpr std::array<ResourceKind, 3> kAllResources{ResourceKind::Cache, ResourceKind::Bus,
                                                           ResourceKind::Memory};

inline std::string to_string(ResourceKind r) {
  switch (r) {
    case ResourceKind::Cache: return "cache";
    case ResourceKind::Bus: return "bus";
    case ResourceKind::Memory: return "memory";
  }
  return "?";
}

inline char letter(ResourceKind r) {
  switch (r) {
    case ResourceKind::Cache: return 'C';
    case ResourceKind::Bus: return 'B';
    case ResourceKind::Memory: return 'M';
  }
  return '?';
}

inline ResourceKind resource_from_string(std::string_view s) {
  if (s == "cache" || s == "C") return ResourceKind::Cache;
  if (s == "bus" || s == "B") return ResourceKind::Bus;
  if (s == "memory" || s == "M" || s == "ram") return ResourceKind::Memory;
  throw ConfigError("unknown resource '" + std::string(s) + "' (expected cache|bus|memory)");
}

inline ResourceKind resource_from_letter(char c) { return resource_from_string(std::string_view(&c, 1)); }

inline void to_json(nlohmann::json& j, ResourceKind r) { j = to_string(r); }
inline void from_json(const nlohmann::json& j, ResourceKind& r) { r = resource_from_string(j.get<std::string>()); }

enum class MemOp { Load, Store };

inline constexpr std::size_t kMaxOps = 5;

inline std::string ops_to_string(const std::vector<MemOp>& ops) {
  std::string s;
  for (auto op : ops) s.push_back(op == MemOp::Store ? 'S' : 'L');
  return s;
}

inline std::vector<MemOp> ops_from_string(std::string_view s) {
  std::vector<MemOp> ops;
  for (char c : s) {
    if (c == 'S' || c == 's') ops.push_back(MemOp::Store);
    else if (c == 'L' || c == 'l') ops.push_back(MemOp::Load);
    else throw ConfigError("bad op '" + std::string(1, c) + "' in access sequence (expected S or L)");
  }
  return ops;
}

struct CacheEnemyParams {
  std::uint64_t buffer_size = 0;
  std::uint64_t stride = 0;
  std::vector<MemOp> ops;
  bool operator==(const CacheEnemyParams&) const = default;
};

struct BusEnemyParams {
  std::uint64_t buffer_size = 0;
  std::uint32_t element_width = 1;  // bytes: 1 (int8_t) or 2 (int16_t)
  bool swap_roles = false;
  bool operator==(const BusEnemyParams&) const = default;
};

struct MemoryEnemyParams {
  std::uint64_t buffer_size = 0;
  std::uint64_t subregion_size = 0;
  bool operator==(const MemoryEnemyParams&) const = default;
};

// One concrete enemy process. The resource is implied by the payload
// alternative, so the two can never disagree.
struct EnemyParams {
  std::variant<CacheEnemyParams, BusEnemyParams, MemoryEnemyParams> payload;

  EnemyParams() = default;
  EnemyParams(CacheEnemyParams p) : payload(std::move(p)) {}
  EnemyParams(BusEnemyParams p) : payload(p) {}
  EnemyParams(MemoryEnemyParams p) : payload(p) {}

  ResourceKind resource() const { return static_cast<ResourceKind>(payload.index()); }
  const CacheEnemyParams& cache() const { return std::get<CacheEnemyParams>(payload); }
  const BusEnemyParams& bus() const { return std::get<BusEnemyParams>(payload); }
  const MemoryEnemyParams& memory() const { return std::get<MemoryEnemyParams>(payload); }
  std::uint64_t buffer_size() const {
    return std::visit([](const auto& p) { return p.buffer_size; }, payload);
  }

  bool operator==(const EnemyParams&) const = default;
};

inline void to_json(nlohmann::json& j, const EnemyParams& p) {
  j = nlohmann::json{{"resource", to_string(p.resource())}};
  switch (p.resource()) {
    case ResourceKind::Cache:
      j["buffer_size"] = p.cache().buffer_size;
      j["stride"] = p.cache().stride;
      j["ops"] = ops_to_string(p.cache().ops);
      break;
    case ResourceKind::Bus:
      j["buffer_size"] = p.bus().buffer_size;
      j["element_width"] = p.bus().element_width;
      j["swap_roles"] = p.bus().swap_roles;
      break;
    case ResourceKind::Memory:
      j["buffer_size"] = p.memory().buffer_size;
      j["subregion_size"] = p.memory().subregion_size;
      break;
  }
}

// Parses params for `resource`; a "resource" key in the object, when
// present, must agree.
inline EnemyParams enemy_params_from_json(const nlohmann::json& j, ResourceKind resource) {
  try {
    if (j.contains("resource") && resource_from_string(j["resource"].get<std::string>()) != resource)
      throw ConfigError("params resource does not match --resource");
    switch (resource) {
      case ResourceKind::Cache:
        return CacheEnemyParams{j.at("buffer_size").get<std::uint64_t>(), j.at("stride").get<std::uint64_t>(),
                                ops_from_string(j.at("ops").get<std::string>())};
      case ResourceKind::Bus:
        return BusEnemyParams{j.at("buffer_size").get<std::uint64_t>(), j.value("element_width", 1u),
                              j.value("swap_roles", false)};
      case ResourceKind::Memory:
        return MemoryEnemyParams{j.at("buffer_size").get<std::uint64_t>(), j.at("subregion_size").get<std::uint64_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad enemy params: ") + e.what());
  }
  throw ConfigError("bad enemy params");
}

inline void from_json(const nlohmann::json& j, EnemyParams& p) {
  p = enemy_params_from_json(j, resource_from_string(j.at("resource").get<std::string>()));
}

// ---------------------------------------------------------------------------
// Parameter spaces
// ---------------------------------------------------------------------------

enum class DimensionKind { Integer, Categorical };
enum class Scale { Linear, Log };

inline constexpr std::size_t kGridSteps = 64;
inline constexpr std::uint64_t kMinBufferBytes = 4 * 1024;
inline constexpr std::uint64_t kMaxBufferBytes = 64ull * 1024 * 1024;
inline constexpr std::uint64_t kMaxStrideBytes = 64 * 1024;
inline constexpr std::uint64_t kMinSubregionBytes = 64;

// A single searchable dimension. Integer dimensions are a grid of steps+1
// points between lower and upper (geometric for Log). When clamp_to names an
// earlier dimension, decoded values are additionally capped by that
// dimension's decoded value.
struct Dimension {
  std::string name;
  DimensionKind kind = DimensionKind::Integer;
  std::uint64_t lower = 0;
  std::uint64_t upper = 0;
  Scale scale = Scale::Log;
  std::size_t steps = kGridSteps;
  std::vector<std::string> categories;
  std::string clamp_to;

  std::size_t size() const { return kind == DimensionKind::Categorical ? categories.size() : steps + 1; }

  std::uint64_t grid_value(std::size_t idx) const {
    if (idx == 0) return lower;
    if (idx >= steps) return upper;
    const double t = static_cast<double>(idx) / static_cast<double>(steps);
    double v;
    if (scale == Scale::Log)
      v = static_cast<double>(lower) * std::pow(static_cast<double>(upper) / static_cast<double>(lower), t);
    else
      v = static_cast<double>(lower) + t * static_cast<double>(upper - lower);
    return std::clamp<std::uint64_t>(static_cast<std::uint64_t>(std::llround(v)), lower, upper);
  }

  bool operator==(const Dimension&) const = default;
};

using Point = std::vector<std::size_t>;

// All sequences over {L,S} of length 1..5, shortest first, then
// lexicographic ("L" < "S").
inline std::vector<std::string> all_access_sequences() {
  std::vector<std::string> out;
  for (std::size_t len = 1; len <= kMaxOps; ++len) {
    for (std::uint32_t bits = 0; bits < (1u << len); ++bits) {
      std::string s(len, 'L');
      for (std::size_t i = 0; i < len; ++i)
        if (bits & (1u << (len - 1 - i))) s[i] = 'S';
      out.push_back(std::move(s));
    }
  }
  return out;
}

class ParameterSpace {
 public:
  ParameterSpace() = default;
  ParameterSpace(ResourceKind resource, std::vector<Dimension> dims) : resource_(resource), dims_(std::move(dims)) {}

  ResourceKind resource() const { return resource_; }
  const std::vector<Dimension>& dimensions() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }

  const Dimension& dimension(std::string_view name) const {
    for (const auto& d : dims_)
      if (d.name == name) return d;
    throw InputError("no dimension named " + std::string(name));
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < dims_.size(); ++i)
      if (dims_[i].name == name) return i;
    throw InputError("no dimension named " + std::string(name));
  }

  // Number of grid points; the exhaustive-sweep size.
  std::uint64_t cardinality() const {
    std::uint64_t n = 1;
    for (const auto& d : dims_) n *= d.size();
    return n;
  }

  bool contains(const Point& p) const {
    if (p.size() != dims_.size()) return false;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] >= dims_[i].size()) return false;
    return true;
  }

  // Uniform over grid indices, which is log-uniform on Log dimensions.
  template <class Rng>
  Point sample(Rng& rng) const {
    Point p(dims_.size());
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      std::uniform_int_distribution<std::size_t> pick(0, dims_[i].size() - 1);
      p[i] = pick(rng);
    }
    return p;
  }

  // Mixed-radix enumeration of every grid point (last dimension fastest).
  Point point_at(std::uint64_t ordinal) const {
    Point p(dims_.size());
    for (std::size_t i = dims_.size(); i-- > 0;) {
      p[i] = static_cast<std::size_t>(ordinal % dims_[i].size());
      ordinal /= dims_[i].size();
    }
    return p;
  }

  // Integer dimensions map to idx/steps; categorical ones are one-hot.
  std::vector<double> unit_encode(const Point& p) const {
    std::vector<double> x;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      const auto& d = dims_[i];
      if (d.kind == DimensionKind::Integer) {
        x.push_back(d.steps == 0 ? 0.0 : static_cast<double>(p[i]) / static_cast<double>(d.steps));
      } else {
        for (std::size_t c = 0; c < d.categories.size(); ++c) x.push_back(c == p[i] ? 1.0 : 0.0);
      }
    }
    return x;
  }

  std::size_t encoded_width() const {
    std::size_t w = 0;
    for (const auto& d : dims_) w += d.kind == DimensionKind::Integer ? 1 : d.categories.size();
    return w;
  }

  // Decoded integer values per dimension, with clamp_to applied.
  std::vector<std::uint64_t> integer_values(const Point& p) const {
    std::vector<std::uint64_t> v(dims_.size(), 0);
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      const auto& d = dims_[i];
      if (d.kind != DimensionKind::Integer) continue;
      v[i] = d.grid_value(p.at(i));
      if (!d.clamp_to.empty()) v[i] = std::min(v[i], v[index_of(d.clamp_to)]);
    }
    return v;
  }

  // Identifies the decoded parameters: points that differ only in a clamped
  // index beyond its cap share a key.
  std::vector<std::uint64_t> decoded_key(const Point& p) const {
    auto v = integer_values(p);
    for (std::size_t i = 0; i < dims_.size(); ++i)
      if (dims_[i].kind == DimensionKind::Categorical) v[i] = p[i];
    return v;
  }

  EnemyParams decode(const Point& p) const {
    if (!contains(p)) throw InputError("point outside parameter space");
    const auto v = integer_values(p);
    auto category = [&](std::string_view name) -> const std::string& {
      const auto i = index_of(name);
      return dims_[i].categories[p[i]];
    };
    switch (resource_) {
      case ResourceKind::Cache:
        return CacheEnemyParams{v[index_of("buffer_size")], v[index_of("stride")], ops_from_string(category("ops"))};
      case ResourceKind::Bus:
        return BusEnemyParams{v[index_of("buffer_size")],
                              static_cast<std::uint32_t>(std::stoul(category("element_width"))),
                              category("swap_roles") == "true"};
      case ResourceKind::Memory:
        return MemoryEnemyParams{v[index_of("buffer_size")], v[index_of("subregion_size")]};
    }
    throw InputError("bad resource");
  }

  bool operator==(const ParameterSpace&) const = default;

 private:
  ResourceKind resource_ = ResourceKind::Cache;
  std::vector<Dimension> dims_;
};

// Largest enemy buffer the platform allows: 64 MB, or a quarter of each
// core's share of RAM when the platform declares its RAM.
inline std::uint64_t buffer_cap(const PlatformDescriptor& platform) {
  std::uint64_t cap = kMaxBufferBytes;
  if (platform.ram_bytes > 0 && platform.core_count > 0)
    cap = std::min(cap, platform.ram_bytes / (4 * static_cast<std::uint64_t>(platform.core_count)));
  return cap;
}

inline ParameterSpace enemy_parameter_space(ResourceKind resource, const PlatformDescriptor& platform) {
  if (!platform.has_cache_geometry())
    throw ConfigError("platform is missing cache geometry (llc_size, line_size, associativity)");
  const std::uint64_t cap = buffer_cap(platform);
  if (cap < kMinBufferBytes) throw ConfigError("platform RAM too small for the minimum enemy buffer");

  Dimension buffer{.name = "buffer_size", .lower = kMinBufferBytes, .upper = cap};
  switch (resource) {
    case ResourceKind::Cache: {
      Dimension stride{.name = "stride", .lower = 1, .upper = kMaxStrideBytes, .clamp_to = "buffer_size"};
      Dimension ops{.name = "ops", .kind = DimensionKind::Categorical, .categories = all_access_sequences()};
      return ParameterSpace(resource, {buffer, stride, ops});
    }
    case ResourceKind::Bus: {
      Dimension width{.name = "element_width", .kind = DimensionKind::Categorical, .categories = {"1", "2"}};
      Dimension swap{.name = "swap_roles", .kind = DimensionKind::Categorical, .categories = {"false", "true"}};
      return ParameterSpace(resource, {buffer, width, swap});
    }
    case ResourceKind::Memory: {
      Dimension sub{.name = "subregion_size", .lower = kMinSubregionBytes, .upper = cap, .clamp_to = "buffer_size"};
      return ParameterSpace(resource, {buffer, sub});
    }
  }
  throw ConfigError("bad resource");
}

// Every broken bound or type invariant, as human-readable strings. Empty
// means valid.
inline std::vector<std::string> validate_params(const EnemyParams& params, const ParameterSpace& space) {
  std::vector<std::string> out;
  if (params.resource() != space.resource()) {
    out.push_back("resource " + to_string(params.resource()) + " does not match space " + to_string(space.resource()));
    return out;
  }
  auto within = [&](std::string_view name, std::uint64_t value, std::uint64_t upper_cap) {
    const auto& d = space.dimension(name);
    const auto hi = std::min(d.upper, upper_cap);
    if (value < d.lower || value > hi)
      out.push_back(std::string(name) + " " + std::to_string(value) + " outside [" + std::to_string(d.lower) + ", " +
                    std::to_string(hi) + "]");
  };
  constexpr auto kNoCap = ~std::uint64_t{0};
  switch (params.resource()) {
    case ResourceKind::Cache: {
      const auto& p = params.cache();
      if (p.stride < 1) out.push_back("stride >= 1");
      if (p.buffer_size < p.stride) out.push_back("stride <= buffer_size");
      if (p.ops.empty() || p.ops.size() > kMaxOps) out.push_back("ops length in 1..5");
      within("buffer_size", p.buffer_size, kNoCap);
      if (p.stride >= 1) within("stride", p.stride, kNoCap);
      break;
    }
    case ResourceKind::Bus: {
      const auto& p = params.bus();
      if (p.element_width != 1 && p.element_width != 2) out.push_back("element_width in {1, 2}");
      if (p.buffer_size < p.element_width) out.push_back("buffer_size >= element_width");
      within("buffer_size", p.buffer_size, kNoCap);
      break;
    }
    case ResourceKind::Memory: {
      const auto& p = params.memory();
      if (p.subregion_size < 1) out.push_back("subregion >= 1");
      if (p.subregion_size > p.buffer_size) out.push_back("subregion <= buffer");
      within("buffer_size", p.buffer_size, kNoCap);
      if (p.subregion_size >= 1 && p.subregion_size <= p.buffer_size) within("subregion_size", p.subregion_size, kNoCap);
      break;
    }
  }
  return out;
}

}  // namespace hostile
