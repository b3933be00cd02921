#pragma once

// Deterministic splittable random streams. Every consumer derives its own
// stream from (seed, stream_id), so parallel client execution cannot perturb
// the draw sequence of any other consumer.

#include <cmath>
#include <cstdint>
#include <vector>

namespace fedbal {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// xoshiro256++ with all draw paths hand-rolled (no std::*_distribution), so
// the sequence is identical across standard library implementations.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t sm = seed;
    sm ^= 0x632be59bd9b4e019ULL * (stream_id + 1);
    for (auto& word : state_) word = detail::splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform index in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  // Standard normal via Box-Muller; the second value is discarded so each
  // call consumes a fixed number of raw draws.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Marsaglia-Tsang gamma(shape, 1) for shape > 0.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  template <typename T>
  const T& pick(const std::vector<T>& items) {
    return items[uniform_index(items.size())];
  }

  // k distinct values drawn uniformly without replacement from [0, n).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k && !pool.empty(); ++i) {
      const std::size_t j = uniform_index(pool.size());
      out.push_back(pool[j]);
      pool[j] = pool.back();
      pool.pop_back();
    }
    return out;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
};

// One stream per (purpose, client, round) triple.
enum class StreamPurpose : std::uint64_t {
  kDataGen = 1,
  kTraceGen = 2,
  kModelInit = 3,
  kCohortSelect = 4,
  kClientSelect = 5,
  kClientTrain = 6,
  kClientNoise = 7,
  kClientLatency = 8,
  kTestData = 9,
};

inline std::uint64_t stream_id(StreamPurpose purpose, std::uint64_t client, std::uint64_t round) {
  std::uint64_t sm = static_cast<std::uint64_t>(purpose);
  sm = sm * 0x100000001b3ULL + client;
  sm = sm * 0x100000001b3ULL + round;
  return detail::splitmix64(sm);
}

inline RandomStream seeded_rng(std::uint64_t seed, std::uint64_t id) { return RandomStream(seed, id); }

inline RandomStream seeded_rng(std::uint64_t seed, StreamPurpose purpose, std::uint64_t client,
                               std::uint64_t round) {
  return RandomStream(seed, stream_id(purpose, client, round));
}

}  // namespace fedbal
