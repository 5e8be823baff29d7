#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace nadex {

// Seeded generator with portable samplers. Only the raw engine output is
// taken from the standard library; the distributions are written out here so
// that sequences match across standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [lo, hi], both inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal via the Marsaglia polar method; no cached second value,
  // so the state is fully described by the engine.
  double normal();

  // Engine state as text, restorable with set_state().
  std::string state() const;
  void set_state(const std::string& text);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace nadex
