// Seeded randomness. mt19937_64 is fully specified by the standard and the
// normal draw is an explicit Box-Muller, so a given seed produces the same
// stream on every platform this builds on.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "lsat/tensor.hpp"

namespace lsat {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a stream id.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream));
}

class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  double normal() {
    // Box-Muller, sine branch discarded.
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
};

template <typename Scalar>
Tensor<Scalar> randn(Shape shape, RandomSource& rng, double stddev = 1.0, double mean = 0.0) {
  std::vector<Scalar> buf(static_cast<std::size_t>(numel(shape)));
  for (auto& v : buf) v = static_cast<Scalar>(rng.normal(mean, stddev));
  return Tensor<Scalar>::from(std::move(shape), std::move(buf));
}

template <typename Scalar>
Tensor<Scalar> rand_uniform(Shape shape, RandomSource& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<Scalar> buf(static_cast<std::size_t>(numel(shape)));
  for (auto& v : buf) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return Tensor<Scalar>::from(std::move(shape), std::move(buf));
}

}  // namespace lsat
