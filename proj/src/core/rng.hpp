#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace fanhmm {

/*!
 * Counter-based splittable generator.
 *
 * The i-th output of a stream is a pure function of (key, i): the SplitMix64
 * finalizer applied to key + i * golden-gamma. Child streams get keys derived
 * by hashing the parent key with a stream id, so per-sequence and
 * per-replicate streams are reproducible no matter how work is scheduled.
 */
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ull)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + (counter_++) * kGamma); }

  /// Independent child stream; does not advance this stream.
  CounterRng split(std::uint64_t stream_id) const {
    CounterRng child(0);
    child.key_ = mix(key_ ^ mix(stream_id * kGamma + 0xbb67ae8584caa73bull));
    child.counter_ = 0;
    return child;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  double normal(double mean = 0.0, double sd = 1.0) {
    std::normal_distribution<double> dist(mean, sd);
    return dist(*this);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Draw an index from a discrete distribution by inverse CDF.
template <class Probabilities>
int sample_categorical(CounterRng& rng, const Probabilities& p, int n) {
  double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < n - 1; ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return n - 1;
}

}  // namespace fanhmm
