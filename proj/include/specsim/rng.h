#ifndef SPECSIM_RNG_H_
#define SPECSIM_RNG_H_

#include <cstdint>
#include <random>

namespace specsim {

// splitmix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Seeded random stream. Every stochastic operation in the library draws from
// one of these so a run is reproducible from a single master seed. Sub-streams
// are derived by key (not by consumption order) so parallel work stays
// independent of scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Rng derive(std::uint64_t key) const { return Rng(mix_seed(seed_, key)); }
  Rng derive(std::uint64_t key1, std::uint64_t key2) const {
    return Rng(mix_seed(mix_seed(seed_, key1), key2));
  }

  std::uint64_t next_u64() { return engine_(); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace specsim

#endif  // SPECSIM_RNG_H_
