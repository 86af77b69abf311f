#pragma once

#include <cstdint>
#include <random>

#include "pflow/tensor.hpp"

namespace pflow {

/// Seeded random stream. Independent streams are derived with `fork` so that
/// parallel consumers never share generator state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  Tensor normal(std::size_t rows, std::size_t cols, double stddev = 1.0) {
    Tensor t({rows, cols});
    for (auto& v : t.values()) v = stddev * normal_(engine_);
    return t;
  }

  Tensor uniform(std::size_t rows, std::size_t cols, double lo, double hi) {
    Tensor t({rows, cols});
    for (auto& v : t.values()) v = uniform(lo, hi);
    return t;
  }

  /// Child stream keyed by `stream`; the parent is not advanced.
  Rng fork(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + 0x9e3779b97f4a7c15ULL))); }

  std::mt19937_64& engine() { return engine_; }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace pflow
