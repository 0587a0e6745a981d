#pragma once

#include "hostile/backend.hpp"
#include "hostile/platform.hpp"

namespace hostile::testing {

// 4 cores, 512 KB / 64 B / 16-way shared cache, synthetic backend.
inline PlatformDescriptor board(int cores = 4) {
  PlatformDescriptor p;
  p.name = "test-board";
  p.core_count = cores;
  p.llc_size = 512 * 1024;
  p.line_size = 64;
  p.associativity = 16;
  p.backend = BackendKind::Synthetic;
  return p;
}

inline SyntheticProfile quiet(const std::string& name = "pi3-like") {
  return reference_profile(name).noise_free();
}

}  // namespace hostile::testing
