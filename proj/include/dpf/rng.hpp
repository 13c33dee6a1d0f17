#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace dpf {

using Rng = std::mt19937_64;

// splitmix64 step; used to derive independent substream seeds so results do
// not depend on thread scheduling.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t s = mix_seed(base);
  s = mix_seed(s ^ a);
  s = mix_seed(s ^ b);
  return mix_seed(s ^ c);
}

inline double rand_normal(Rng& rng, double mean = 0.0, double std = 1.0) {
  std::normal_distribution<double> d(mean, std);
  return d(rng);
}

inline double rand_uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

inline Eigen::VectorXd rand_normal_vec(Rng& rng, Eigen::Index n, double std = 1.0) {
  std::normal_distribution<double> d(0.0, std);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

}  // namespace dpf
