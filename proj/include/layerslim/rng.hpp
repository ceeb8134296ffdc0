#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace layerslim {

// mt19937_64 with hand-written distributions. The standard library leaves the
// algorithms behind uniform_int_distribution/normal_distribution/shuffle
// unspecified, and checkpoints and splits must not change between toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, bound) by rejection sampling.
  uint64_t uniform_index(uint64_t bound);

  // Uniform in [0, 1) with 53 random bits.
  double uniform01();

  // Box-Muller; caches the second variate.
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finaliser used to derive independent streams from one run seed.
uint64_t derive_seed(uint64_t seed, uint64_t stream);

}  // namespace layerslim
