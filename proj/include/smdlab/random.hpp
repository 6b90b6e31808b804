#pragma once

#include "smdlab/types.hpp"

#include <cstdint>
#include <random>

namespace smdlab {

/// Every random draw in the library goes through an explicitly seeded engine.
using Rng = std::mt19937_64;

inline Vector normal_vector(Rng& rng, Eigen::Index n, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Vector v(n);
  for (Eigen::Index j = 0; j < n; ++j) v[j] = dist(rng);
  return v;
}

inline Matrix normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  // Row-major fill so a matrix and the concatenation of its rows agree.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

/// Uniform point in the Euclidean ball of the given radius around center.
inline Vector sample_ball(Rng& rng, const Eigen::Ref<const Vector>& center, double radius) {
  if (radius <= 0.0 || center.size() == 0) return center;
  Vector dir = normal_vector(rng, center.size());
  const double nrm = dir.norm();
  if (nrm == 0.0) return center;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = radius * std::pow(u(rng), 1.0 / static_cast<double>(center.size()));
  return center + (s / nrm) * dir;
}

/// Deterministic sub-seed derivation (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace smdlab
