#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace choreo {

// Deterministic RNG. Gaussians use an explicit Box-Muller transform instead of
// std::normal_distribution (whose algorithm is implementation-defined), so
// streams are reproducible across standard libraries. The cached spare
// Gaussian is part of the serializable state.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // uniform integer in [lo, hi] inclusive
  int uniform_int(int lo, int hi);

  double normal();

  // mixes a stream id into a seed; used to derive independent per-iteration
  // streams from one master seed
  static uint64_t mix(uint64_t seed, uint64_t stream);

  std::string serialize() const;
  static Rng deserialize(const std::string& s);

  bool operator==(const Rng& o) const {
    return engine_ == o.engine_ && has_spare_ == o.has_spare_ &&
           (!has_spare_ || spare_ == o.spare_);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace choreo
