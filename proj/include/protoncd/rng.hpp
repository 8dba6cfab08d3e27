// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace protoncd {

/// Seeded random stream. All distributions are implemented here on top of the
/// raw 64-bit engine output so that draws do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double gamma(double shape);
  double beta(double a, double b);
  // uniform integer in [0, n)
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 mix of (master, stream); used for per-candidate and per-sample seeds.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace protoncd
