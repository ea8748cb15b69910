#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace deform {

// Deterministic RNG wrapper. Distributions are hand-rolled so that streams do
// not depend on the standard library's implementation-defined algorithms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  double uniform() {  // [0,1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi - lo + 1));
  }

  double gaussian() {  // Box-Muller, one value per call pair cached
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  // Independent child stream, e.g. one per sample index. Depends only on the
  // root seed and the key, not on how far this stream has advanced.
  Rng child(uint64_t key) const {
    uint64_t z = seed_ + 0x9e3779b97f4a7c15ull * (key + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace deform
