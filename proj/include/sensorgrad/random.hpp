#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "sensorgrad/regression.hpp"

namespace sensorgrad {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Hierarchical seed derivation: root -> run -> step -> trial. Each level
/// hashes the parent seed with one path component, so a stream depends only
/// on its path and never on scheduling order.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t component) {
  return mix64(parent ^ mix64(component + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = root;
  for (auto c : path) s = derive_seed(s, c);
  return s;
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline Vector standard_normal_vector(Eigen::Index n, Rng& rng) {
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = standard_normal(rng);
  return out;
}

/// Factor L with L Lᵀ = cov for a symmetric positive semidefinite matrix.
/// Uses an eigendecomposition so singular (even zero) covariances work.
Matrix psd_factor(const Matrix& cov);

/// One draw from Normal(mean, L Lᵀ) given a factor from psd_factor().
inline Vector sample_gaussian(const Vector& mean, const Matrix& factor, Rng& rng) {
  return mean + factor * standard_normal_vector(factor.cols(), rng);
}

}  // namespace sensorgrad
