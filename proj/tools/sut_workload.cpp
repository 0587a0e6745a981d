// Small stand-in benchmarks used as SUTs on real hardware.
//   sut-workload --kind <matmul|listwalk|stream|crc|sort> [--size N] [--reps K]

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace {

volatile std::uint64_t g_sink;

void matmul(std::size_t n, int reps) {
  std::vector<double> a(n * n, 1.0), b(n * n, 0.5), c(n * n);
  for (int r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        const double x = a[i * n + k];
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += x * b[k * n + j];
      }
  g_sink = static_cast<std::uint64_t>(c[n + 1]);
}

// Pointer chase over a random cycle; cache and DRAM latency bound.
void listwalk(std::size_t n, int reps) {
  std::vector<std::uint32_t> next(n);
  std::iota(next.begin(), next.end(), 0u);
  std::mt19937 rng(7);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(next[i], next[rng() % i]);
  std::uint32_t p = 0;
  for (std::size_t s = 0; s < n * static_cast<std::size_t>(reps); ++s) p = next[p];
  g_sink = p;
}

void stream(std::size_t n, int reps) {
  std::vector<double> a(n, 1.0), b(n, 2.0), c(n);
  for (int r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] + 3.0 * b[i];
  g_sink = static_cast<std::uint64_t>(c[n / 2]);
}

void crc(std::size_t n, int reps) {
  std::vector<std::uint8_t> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<std::uint8_t>(i * 31);
  std::uint32_t crc = 0xFFFFFFFFu;
  for (int r = 0; r < reps; ++r)
    for (auto byte : data) {
      crc ^= byte;
      for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
    }
  g_sink = crc;
}

void sort(std::size_t n, int reps) {
  std::mt19937_64 rng(3);
  std::vector<std::uint64_t> v(n);
  for (int r = 0; r < reps; ++r) {
    for (auto& x : v) x = rng();
    std::sort(v.begin(), v.end());
  }
  g_sink = v[n / 2];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic SUT workloads"};
  std::string kind;
  std::size_t size = 0;
  int reps = 1;
  app.add_option("--kind", kind, "workload")
      ->required()
      ->check(CLI::IsMember({"matmul", "listwalk", "stream", "crc", "sort"}));
  app.add_option("--size", size, "problem size (workload specific default)");
  app.add_option("--reps", reps, "repetitions")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  if (kind == "matmul") matmul(size ? size : 128, reps);
  else if (kind == "listwalk") listwalk(size ? size : (1u << 20), reps);
  else if (kind == "stream") stream(size ? size : (1u << 21), reps);
  else if (kind == "crc") crc(size ? size : (1u << 18), reps);
  else sort(size ? size : (1u << 17), reps);
  return 0;
}
