#include "smdlab/finite_diff.hpp"
#include "smdlab/mirror.hpp"
#include "smdlab/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace smdlab;

namespace {

std::vector<Potential> qnorms() {
  return {Potential::qnorm(1.1), Potential::qnorm(1.5), Potential::qnorm(2.0), Potential::qnorm(3.0),
          Potential::qnorm(10.0)};
}

// Coordinates away from 0, where every potential here is smooth.
Vector away_from_zero(Rng& rng, Eigen::Index n) {
  Vector v = normal_vector(rng, n);
  for (Eigen::Index j = 0; j < n; ++j) v[j] = (v[j] < 0 ? -0.3 : 0.3) + v[j];
  return v;
}

}  // namespace

TEST(Mirror, MapIsGradientOfPotential) {
  Rng rng(1);
  for (const auto& pot : qnorms()) {
    const Vector w = away_from_zero(rng, 12);
    const Vector fd = fd_gradient([&](const Vector& v) { return potential_value(pot, v); }, w, 1e-6);
    EXPECT_LE(fd_relative_error(mirror_map(pot, w), fd), 1e-6) << pot.label();
  }
  const Vector w = (normal_vector(rng, 12).array().abs() + 0.2).matrix();
  const Potential ent = Potential::entropy();
  const Vector fd = fd_gradient([&](const Vector& v) { return potential_value(ent, v); }, w, 1e-6);
  EXPECT_LE(fd_relative_error(mirror_map(ent, w), fd), 1e-6);
}

TEST(Mirror, InverseRoundTrip) {
  Rng rng(2);
  for (const auto& pot : qnorms()) {
    const Vector w = normal_vector(rng, 30);
    const Vector back = inverse_mirror_map(pot, mirror_map(pot, w));
    EXPECT_LE((back - w).lpNorm<Eigen::Infinity>(), 1e-12 * std::max(1.0, w.lpNorm<Eigen::Infinity>())) << pot.label();
    const Vector z = normal_vector(rng, 30);
    const Vector zz = mirror_map(pot, inverse_mirror_map(pot, z));
    EXPECT_LE((zz - z).lpNorm<Eigen::Infinity>(), 1e-12 * std::max(1.0, z.lpNorm<Eigen::Infinity>())) << pot.label();
  }
  const Potential ent = Potential::entropy();
  const Vector z = normal_vector(rng, 30);
  EXPECT_LE((mirror_map(ent, inverse_mirror_map(ent, z)) - z).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(Mirror, InverseHandlesZeroAndLargeDuals) {
  const Potential p = Potential::qnorm(10.0);
  Vector z(3);
  z << 0.0, 1e300, -1e-300;
  const Vector w = inverse_mirror_map(p, z);
  EXPECT_TRUE(w.allFinite());
  EXPECT_EQ(w[0], 0.0);
  EXPECT_NEAR(w[1], std::pow(1e300, 1.0 / 9.0), 1e-12 * std::pow(1e300, 1.0 / 9.0));
  EXPECT_LT(w[2], 0.0);
}

TEST(Mirror, BregmanMatchesDefinition) {
  Rng rng(3);
  for (const auto& pot : qnorms()) {
    const Vector a = away_from_zero(rng, 8), b = away_from_zero(rng, 8);
    const double direct = potential_value(pot, a) - potential_value(pot, b) - mirror_map(pot, b).dot(a - b);
    EXPECT_NEAR(bregman(pot, a, b), direct, 1e-10 * std::max(1.0, std::abs(direct))) << pot.label();
  }
}

TEST(Mirror, BregmanAxioms) {
  Rng rng(4);
  for (const auto& pot : qnorms()) {
    for (int t = 0; t < 20; ++t) {
      const Vector a = normal_vector(rng, 10), b = normal_vector(rng, 10);
      EXPECT_EQ(bregman(pot, a, a), 0.0);
      EXPECT_GT(bregman(pot, a, b), 0.0);
    }
  }
  const Potential ent = Potential::entropy();
  const Vector a = Vector::Constant(4, 0.3), b = Vector::Constant(4, 0.7);
  EXPECT_EQ(bregman(ent, a, a), 0.0);
  EXPECT_GT(bregman(ent, a, b), 0.0);
}

TEST(Mirror, EuclideanIsHalfSquaredDistance) {
  Rng rng(5);
  const Vector a = normal_vector(rng, 9), b = normal_vector(rng, 9);
  EXPECT_DOUBLE_EQ(bregman(Potential::qnorm(2.0), a, b), 0.5 * (a - b).squaredNorm());
}

TEST(Mirror, EntropyBregmanIsUnnormalizedKl) {
  Vector a(3), b(3);
  a << 0.2, 0.5, 1.5;
  b << 0.4, 0.1, 1.0;
  double kl = 0.0;
  for (int j = 0; j < 3; ++j) kl += a[j] * std::log(a[j] / b[j]) - a[j] + b[j];
  EXPECT_NEAR(bregman(Potential::entropy(), a, b), kl, 1e-14);
}

TEST(Mirror, TinyBregmanKeepsPrecision) {
  // D(b + h, b) ~ ½ψ''(b) h² for h far below sqrt(eps)
  const Potential p = Potential::qnorm(3.0);
  Vector a(1), b(1);
  b << 0.7;
  a << 0.7 + 1e-9;
  EXPECT_NEAR(bregman(p, a, b), 0.5 * 2.0 * 0.7 * 1e-18, 1e-6 * 0.7e-18);
}

TEST(Mirror, EntropyDomain) {
  Vector w(2);
  w << 0.5, -0.1;
  EXPECT_THROW(mirror_map(Potential::entropy(), w), DomainError);
  EXPECT_THROW(potential_value(Potential::entropy(), w), DomainError);
}

TEST(Mirror, CurvatureAndInverseDerivative) {
  Rng rng(6);
  for (const auto& pot : qnorms()) {
    const Vector w = away_from_zero(rng, 6);
    const Vector h = potential_curvature(pot, w);
    const Vector d = inverse_map_derivative(pot, mirror_map(pot, w));
    EXPECT_LE((h.cwiseProduct(d) - Vector::Ones(6)).lpNorm<Eigen::Infinity>(), 1e-10) << pot.label();
  }
}

TEST(Mirror, ConjugateGradientIsInverseMap) {
  Rng rng(7);
  for (const auto& pot : qnorms()) {
    const Vector z = away_from_zero(rng, 6);
    const Vector fd = fd_gradient([&](const Vector& v) { return conjugate_value(pot, v); }, z, 1e-6);
    EXPECT_LE(fd_relative_error(inverse_mirror_map(pot, z), fd), 1e-6) << pot.label();
  }
}

TEST(Mirror, ParseAndLabel) {
  EXPECT_EQ(Potential::parse("q=1.1"), Potential::qnorm(1.1));
  EXPECT_EQ(Potential::parse("3"), Potential::qnorm(3.0));
  EXPECT_EQ(Potential::parse(Potential::qnorm(10).label()), Potential::qnorm(10));
  EXPECT_TRUE(Potential::parse("entropy").is_entropy());
  EXPECT_THROW(Potential::parse("q=abc"), ArgumentError);
  EXPECT_THROW(Potential::qnorm(1.0), ArgumentError);
}
