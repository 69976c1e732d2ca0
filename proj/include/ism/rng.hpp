#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include <Eigen/Dense>

#include "ism/errors.hpp"

namespace ism {

/// Counter-based seed derivation: stream k of a master seed is the k-th
/// output of the SplitMix64 sequence started at the master seed.  Streams
/// are independent of the order in which they are requested, which keeps
/// parallel ensembles reproducible.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_stream_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master + index * 0x9e3779b97f4a7c15ULL);
}

/// xoshiro256++ with fully specified output, so identical seeds give
/// identical trajectories on every platform.  std:: distributions are
/// implementation-defined and would break the byte-identical contract.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) {
      sm += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = sm;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      word = z ^ (z >> 31);
    }
  }

  static Rng stream(std::uint64_t master, std::uint64_t index) {
    return Rng(derive_stream_seed(master, index));
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

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1]; safe as a log argument.
  double uniform_pos() { return 1.0 - uniform(); }

  /// Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
    const double phi = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(phi);
    have_spare_ = true;
    return r * std::cos(phi);
  }

  double exponential(double rate) {
    if (!(rate > 0.0)) throw error("exponential rate must be positive");
    return -std::log(uniform_pos()) / rate;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Index sampled from an (unnormalized is fine) nonnegative weight vector.
  int discrete(const Eigen::VectorXd& weights) {
    const double total = weights.sum();
    double u = uniform() * total;
    for (int k = 0; k < weights.size(); ++k) {
      u -= weights[k];
      if (u < 0.0 && weights[k] > 0.0) return k;
    }
    for (int k = static_cast<int>(weights.size()) - 1; k >= 0; --k) {
      if (weights[k] > 0.0) return k;
    }
    throw error("discrete sample from an all-zero weight vector");
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ism
