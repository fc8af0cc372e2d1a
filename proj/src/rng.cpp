#include "choreo/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "choreo/errors.hpp"

namespace choreo {

int Rng::uniform_int(int lo, int hi) {
  // rejection sampling keeps the draw unbiased and engine-portable
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return lo + static_cast<int>(v % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0,1] so log stays finite
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

uint64_t Rng::mix(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer over the pair
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << " " << (has_spare_ ? 1 : 0);
  if (has_spare_) {
    os.precision(17);
    os << " " << std::scientific << spare_;
  }
  return os.str();
}

Rng Rng::deserialize(const std::string& s) {
  Rng r;
  std::istringstream is(s);
  int has = 0;
  is >> r.engine_ >> has;
  r.has_spare_ = has != 0;
  if (r.has_spare_) is >> r.spare_;
  if (is.fail()) throw CorruptCheckpoint("bad rng state string");
  return r;
}

}  // namespace choreo
