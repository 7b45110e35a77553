// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>

namespace hsgat {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based seed expansion: every (base, c0, c1, ...) tuple names an
/// independent stream, so sub-experiments can be re-run in isolation.
constexpr std::uint64_t derive_seed(std::uint64_t base,
                                    std::initializer_list<std::uint64_t> counters) {
  std::uint64_t s = mix64(base);
  for (auto c : counters) s = mix64(s ^ mix64(c + 0x632be59bd9b4e019ULL));
  return s;
}

/// Named streams so call sites do not collide.
enum class SeedStream : std::uint64_t {
  kInit = 1,
  kDropout = 2,
  kEdgeRemoval = 3,
  kRun = 4,
};

constexpr std::uint64_t stream(SeedStream s) { return static_cast<std::uint64_t>(s); }

}  // namespace hsgat
