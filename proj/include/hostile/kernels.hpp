#pragma once

// Victim programs and enemy templates. Enemies loop until told to stop;
// victims perform a fixed amount of work and report its wall-clock time.
// Both touch memory only through volatile accesses (or memset on an escaped
// buffer) so optimizing compilers keep every access.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <new>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "hostile/errors.hpp"
#include "hostile/params.hpp"
#include "hostile/platform.hpp"

namespace hostile {

struct VictimConfig {
  ResourceKind resource = ResourceKind::Cache;
  std::uint64_t llc_size = 0;
  std::uint64_t line_size = 0;
  std::uint64_t associativity = 0;
  std::uint64_t buffer_size = 0;  // bus/memory victims
  std::uint64_t work_units = 1;

  bool operator==(const VictimConfig&) const = default;

  void validate() const {
    if (llc_size == 0 || line_size == 0 || associativity == 0 || llc_size % (line_size * associativity) != 0)
      throw ConfigError("victim llc_size must be a positive multiple of line_size * associativity");
    if (resource != ResourceKind::Cache && buffer_size <= llc_size)
      throw ConfigError("bus/memory victim buffer_size must exceed llc_size");
  }
};

inline void to_json(nlohmann::json& j, const VictimConfig& v) {
  j = nlohmann::json{{"resource", to_string(v.resource)}, {"llc_size", v.llc_size},
                     {"line_size", v.line_size},          {"associativity", v.associativity},
                     {"buffer_size", v.buffer_size},      {"work_units", v.work_units}};
}

inline void from_json(const nlohmann::json& j, VictimConfig& v) {
  try {
    v.resource = resource_from_string(j.at("resource").get<std::string>());
    v.llc_size = j.at("llc_size").get<std::uint64_t>();
    v.line_size = j.at("line_size").get<std::uint64_t>();
    v.associativity = j.at("associativity").get<std::uint64_t>();
    v.buffer_size = j.value("buffer_size", std::uint64_t{0});
    v.work_units = j.value("work_units", std::uint64_t{1});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad victim config: ") + e.what());
  }
}

// Victim for `resource` on `platform`. Bus and memory victims get a buffer
// of four times the shared cache so it cannot stay resident.
inline VictimConfig make_victim_config(ResourceKind resource, const PlatformDescriptor& platform) {
  VictimConfig v{resource, platform.llc_size, platform.line_size, platform.associativity, 0,
                 platform.victim_work_units};
  if (resource != ResourceKind::Cache) v.buffer_size = 4 * platform.llc_size;
  return v;
}

// ---------------------------------------------------------------------------
// Access policies
// ---------------------------------------------------------------------------

struct AccessRecord {
  std::uint8_t buffer = 0;
  std::uint64_t offset = 0;
  MemOp op = MemOp::Load;
  std::uint64_t length = 1;
  bool operator==(const AccessRecord&) const = default;
};

using AccessTrace = std::vector<AccessRecord>;

namespace detail {

inline void* volatile g_escape = nullptr;

// Owns up to two heap buffers and touches them through volatile pointers.
class LiveMemory {
 public:
  LiveMemory(std::uint64_t bytes, int count) {
    for (int i = 0; i < count; ++i) {
      bufs_[i].reset(new (std::nothrow) std::uint8_t[bytes]);
      if (!bufs_[i]) throw EnvironmentError("cannot allocate " + std::to_string(bytes) + " byte buffer");
      std::memset(bufs_[i].get(), i + 1, bytes);  // fault every page in before the timed phase
      g_escape = bufs_[i].get();
    }
  }

  std::uint32_t load(int b, std::uint64_t off, std::uint32_t width) {
    if (width == 2) return static_cast<std::uint16_t>(*reinterpret_cast<volatile std::int16_t*>(ptr(b) + off));
    return *reinterpret_cast<volatile std::uint8_t*>(ptr(b) + off);
  }

  void store(int b, std::uint64_t off, std::uint32_t width, std::uint32_t value) {
    if (width == 2)
      *reinterpret_cast<volatile std::int16_t*>(ptr(b) + off) = static_cast<std::int16_t>(value);
    else
      *reinterpret_cast<volatile std::uint8_t*>(ptr(b) + off) = static_cast<std::uint8_t>(value);
  }

  void fill(int b, std::uint64_t off, std::uint64_t len, std::uint8_t value) {
    std::memset(ptr(b) + off, value, len);
    g_escape = ptr(b) + off;
    sink_ = sink_ + *reinterpret_cast<volatile std::uint8_t*>(ptr(b) + off + len - 1);
  }

 private:
  std::uint8_t* ptr(int b) { return bufs_[b].get(); }
  std::unique_ptr<std::uint8_t[]> bufs_[2];
  volatile std::uint32_t sink_ = 0;
};

// Records every access instead of performing it.
class TracingMemory {
 public:
  explicit TracingMemory(AccessTrace& trace) : trace_(trace) {}
  std::uint32_t load(int b, std::uint64_t off, std::uint32_t) {
    trace_.push_back({static_cast<std::uint8_t>(b), off, MemOp::Load, 1});
    return 0;
  }
  void store(int b, std::uint64_t off, std::uint32_t, std::uint32_t) {
    trace_.push_back({static_cast<std::uint8_t>(b), off, MemOp::Store, 1});
  }
  void fill(int b, std::uint64_t off, std::uint64_t len, std::uint8_t) {
    trace_.push_back({static_cast<std::uint8_t>(b), off, MemOp::Store, len});
  }

 private:
  AccessTrace& trace_;
};

template <class Memory, class Continue>
void cache_enemy_loop(const CacheEnemyParams& p, Memory& mem, std::mt19937_64& rng, Continue&& keep_going) {
  while (keep_going()) {
    const auto value = static_cast<std::uint32_t>(rng());
    for (std::uint64_t i = 0; i < p.buffer_size; i += p.stride) {
      for (auto op : p.ops) {
        if (op == MemOp::Store)
          mem.store(0, i, 1, value);
        else
          (void)mem.load(0, i, 1);
      }
    }
  }
}

template <class Memory, class Continue>
void bus_enemy_loop(const BusEnemyParams& p, Memory& mem, Continue&& keep_going) {
  const int src = p.swap_roles ? 1 : 0;
  const int dst = 1 - src;
  const std::uint64_t w = p.element_width;
  const std::uint64_t last = p.buffer_size - p.buffer_size % w;
  while (keep_going()) {
    for (std::uint64_t off = 0; off < last; off += w) mem.store(dst, off, p.element_width, mem.load(src, off, p.element_width) + 1);
  }
}

template <class Memory, class Continue>
void memory_enemy_loop(const MemoryEnemyParams& p, Memory& mem, std::mt19937_64& rng, Continue&& keep_going) {
  std::uniform_int_distribution<std::uint64_t> start(0, p.buffer_size - p.subregion_size);
  std::uniform_int_distribution<int> byte(0, 255);
  while (keep_going()) {
    const auto off = start(rng);
    mem.fill(0, off, p.subregion_size, static_cast<std::uint8_t>(byte(rng)));
  }
}

inline void check_runnable(const EnemyParams& params) {
  switch (params.resource()) {
    case ResourceKind::Cache:
      if (params.cache().stride == 0 || params.cache().ops.empty() || params.cache().ops.size() > kMaxOps ||
          params.cache().buffer_size == 0)
        throw ConfigError("invalid cache enemy params");
      break;
    case ResourceKind::Bus:
      if ((params.bus().element_width != 1 && params.bus().element_width != 2) ||
          params.bus().buffer_size < params.bus().element_width)
        throw ConfigError("invalid bus enemy params");
      break;
    case ResourceKind::Memory:
      if (params.memory().subregion_size == 0 || params.memory().subregion_size > params.memory().buffer_size)
        throw ConfigError("invalid memory enemy params");
      break;
  }
}

}  // namespace detail

// Runs the enemy until `stop` becomes true. Buffers are allocated and
// faulted in before `on_ready` fires; allocation failure throws
// EnvironmentError before any looping starts.
inline void run_enemy(const EnemyParams& params, const std::atomic<bool>& stop,
                      const std::function<void()>& on_ready = {}) {
  detail::check_runnable(params);
  std::mt19937_64 rng(std::random_device{}());
  auto keep_going = [&] { return !stop.load(std::memory_order_relaxed); };
  switch (params.resource()) {
    case ResourceKind::Cache: {
      detail::LiveMemory mem(params.cache().buffer_size, 1);
      if (on_ready) on_ready();
      detail::cache_enemy_loop(params.cache(), mem, rng, keep_going);
      break;
    }
    case ResourceKind::Bus: {
      detail::LiveMemory mem(params.bus().buffer_size, 2);
      if (on_ready) on_ready();
      detail::bus_enemy_loop(params.bus(), mem, keep_going);
      break;
    }
    case ResourceKind::Memory: {
      detail::LiveMemory mem(params.memory().buffer_size, 1);
      if (on_ready) on_ready();
      detail::memory_enemy_loop(params.memory(), mem, rng, keep_going);
      break;
    }
  }
}

// Instrumented dry run: records the access sequence of `iterations` outer
// iterations (sweeps for cache/bus, memsets for memory) without touching
// memory. Never used while measuring.
inline AccessTrace dry_run_enemy(const EnemyParams& params, std::size_t iterations, std::uint64_t seed = 0) {
  detail::check_runnable(params);
  AccessTrace trace;
  detail::TracingMemory mem(trace);
  std::mt19937_64 rng(seed);
  std::size_t left = iterations;
  auto keep_going = [&] { return left-- > 0; };
  switch (params.resource()) {
    case ResourceKind::Cache: detail::cache_enemy_loop(params.cache(), mem, rng, keep_going); break;
    case ResourceKind::Bus: detail::bus_enemy_loop(params.bus(), mem, keep_going); break;
    case ResourceKind::Memory: detail::memory_enemy_loop(params.memory(), mem, rng, keep_going); break;
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Victims
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
std::unique_ptr<T[]> allocate(std::uint64_t count) {
  std::unique_ptr<T[]> p(new (std::nothrow) T[count]);
  if (!p) throw EnvironmentError("cannot allocate victim buffer");
  std::memset(p.get(), 0, count * sizeof(T));
  g_escape = p.get();
  return p;
}

// Line offsets of the cache victim, one line per set and then the next way.
inline std::vector<std::uint64_t> cache_victim_order(const VictimConfig& c) {
  const std::uint64_t sets = c.llc_size / (c.line_size * c.associativity);
  std::vector<std::uint64_t> order;
  order.reserve(sets * c.associativity);
  for (std::uint64_t way = 0; way < c.associativity; ++way)
    for (std::uint64_t set = 0; set < sets; ++set) order.push_back((way * sets + set) * c.line_size);
  return order;
}

}  // namespace detail

// Performs `work_units` passes of the victim's access pattern and returns
// the elapsed wall-clock time of those passes in nanoseconds. Setup and
// page faulting happen before the clock starts.
inline std::int64_t run_victim(const VictimConfig& config) {
  config.validate();
  using clock = std::chrono::steady_clock;
  clock::time_point t0, t1;
  switch (config.resource) {
    case ResourceKind::Cache: {
      auto data = detail::allocate<std::uint8_t>(config.llc_size);
      const auto order = detail::cache_victim_order(config);
      volatile std::uint8_t* base = data.get();
      for (auto off : order) base[off] = base[off] + 1;  // warm the cache
      t0 = clock::now();
      for (std::uint64_t u = 0; u < config.work_units; ++u)
        for (auto off : order) base[off] = base[off] + 1;
      t1 = clock::now();
      break;
    }
    case ResourceKind::Bus: {
      const std::uint64_t n = config.buffer_size / sizeof(std::int32_t);
      auto src = detail::allocate<std::int32_t>(n);
      auto dst = detail::allocate<std::int32_t>(n);
      volatile std::int32_t* s = src.get();
      volatile std::int32_t* d = dst.get();
      t0 = clock::now();
      for (std::uint64_t u = 0; u < config.work_units; ++u)
        for (std::uint64_t i = 0; i < n; ++i) d[i] = s[i] + 1;
      t1 = clock::now();
      break;
    }
    case ResourceKind::Memory: {
      const std::uint64_t n = config.buffer_size / sizeof(std::uint64_t);
      auto data = detail::allocate<std::uint64_t>(n);
      volatile std::uint64_t* b = data.get();
      std::uint64_t x = std::random_device{}() | 1;
      t0 = clock::now();
      for (std::uint64_t u = 0; u < config.work_units; ++u) {
        for (std::uint64_t i = 0; i < n; ++i) {
          x ^= x << 13;
          x ^= x >> 7;
          x ^= x << 17;
          b[i] = x;
        }
      }
      t1 = clock::now();
      break;
    }
  }
  return std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
}

}  // namespace hostile
