#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace msgcn {

// splitmix64 generator. Every stochastic component draws from a stream
// derived as Rng(Rng::derive(run_seed, tag)), where tag names the consumer
// ("init", "drop:<epoch>:<graph>", "cv:<grid>:<fold>", ...). Two runs with
// the same seed therefore replay identical streams regardless of what else
// happened in the process.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiasedness by modulo is fine at the scales used here.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Marsaglia polar method with cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // FNV-1a over the tag, mixed with the seed. Stable across platforms.
  static uint64_t derive(uint64_t seed, std::string_view tag) {
    uint64_t h = 0xcbf29ce484222325ull ^ seed;
    for (char c : tag) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ull;
    }
    return h ^ (seed * 0x9e3779b97f4a7c15ull);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace msgcn
