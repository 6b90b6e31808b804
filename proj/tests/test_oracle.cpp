#include "smdlab/experiments.hpp"
#include "smdlab/io/synthetic.hpp"
#include "smdlab/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace smdlab;

namespace {

io::SyntheticData problem(std::uint64_t seed, int n = 5, int d = 50) {
  io::SyntheticSpec sp;
  sp.n = n;
  sp.d = d;
  sp.seed = seed;
  return io::generate_synthetic(sp);
}

// Component of v outside the row space of X.
double off_rowspace(const Matrix& X, const Vector& v) {
  const Vector coef = X.transpose().colPivHouseholderQr().solve(v);
  return (X.transpose() * coef - v).lpNorm<Eigen::Infinity>() / std::max(1e-300, v.lpNorm<Eigen::Infinity>());
}

Matrix null_space(const Matrix& X) {
  Eigen::JacobiSVD<Matrix> svd(X, Eigen::ComputeFullV);
  return svd.matrixV().rightCols(X.cols() - X.rows());
}

}  // namespace

TEST(Oracle, EuclideanMatchesPseudoinverse) {
  auto sd = problem(1);
  Rng rng(3);
  const Vector w0 = normal_vector(rng, 50, 0.01);
  const auto res = closest_interpolant_linear(Potential::qnorm(2.0), sd.data, w0);
  const Matrix& X = sd.data.inputs;
  Eigen::JacobiSVD<Matrix> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector pinv = w0 + svd.solve(sd.data.labels - X * w0);
  EXPECT_LE((res.w_star - pinv).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_EQ(res.method, OracleResult::Method::ClosedForm);
}

TEST(Oracle, QNormSatisfiesKkt) {
  for (double q : {1.1, 1.5, 3.0, 10.0}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      auto sd = problem(seed);
      Rng rng(seed + 10);
      const Vector w0 = normal_vector(rng, 50, 0.01);
      const Potential p = Potential::qnorm(q);
      const auto res = closest_interpolant_linear(p, sd.data, w0);
      EXPECT_LE(res.constraint_violation, 1e-8) << "q=" << q << " seed " << seed;
      EXPECT_LE(off_rowspace(sd.data.inputs, mirror_map(p, res.w_star) - mirror_map(p, w0)), 1e-8)
          << "q=" << q << " seed " << seed;
    }
  }
}

TEST(Oracle, EntropySatisfiesKkt) {
  io::SyntheticSpec sp;
  sp.n = 4;
  sp.d = 20;
  sp.seed = 5;
  auto sd = io::generate_synthetic(sp);
  // positive teacher so the feasible set meets the orthant
  Rng rng(6);
  const Vector teacher = (normal_vector(rng, 20).array().abs() + 0.1).matrix();
  sd.data.labels = sd.data.inputs * teacher;
  const Vector w0 = Vector::Constant(20, 0.5);
  const Potential e = Potential::entropy();
  const auto res = closest_interpolant_linear(e, sd.data, w0);
  EXPECT_LE(res.constraint_violation, 1e-8);
  EXPECT_TRUE((res.w_star.array() > 0.0).all());
  EXPECT_LE(off_rowspace(sd.data.inputs, mirror_map(e, res.w_star) - mirror_map(e, w0)), 1e-8);
}

TEST(Oracle, NoFeasiblePerturbationDoesBetter) {
  auto sd = problem(4);
  Rng rng(7);
  const Vector w0 = normal_vector(rng, 50, 0.01);
  const Matrix N = null_space(sd.data.inputs);
  for (double q : {1.1, 3.0}) {
    const Potential p = Potential::qnorm(q);
    const auto res = closest_interpolant_linear(p, sd.data, w0);
    for (int t = 0; t < 50; ++t) {
      const Vector w = res.w_star + N * normal_vector(rng, N.cols(), 1e-3);
      EXPECT_GE(bregman(p, w, w0), res.divergence - 1e-12) << "q=" << q;
    }
  }
}

TEST(Oracle, AlreadyFeasibleStart) {
  auto sd = problem(5);
  const auto res = closest_interpolant_linear(Potential::qnorm(3.0), sd.data, sd.teacher);
  EXPECT_EQ(res.w_star, sd.teacher);
  EXPECT_EQ(res.divergence, 0.0);
}

TEST(Oracle, RankDeficientRejected) {
  auto sd = problem(6);
  sd.data.inputs.row(1) = sd.data.inputs.row(0);
  EXPECT_THROW(closest_interpolant_linear(Potential::qnorm(3.0), sd.data, Vector::Zero(50)), Error);
}

TEST(Oracle, NonlinearAgreesOnLinearModel) {
  auto sd = problem(7, 4, 12);
  Rng rng(8);
  const Vector w0 = normal_vector(rng, 12, 0.01);
  for (double q : {1.5, 2.0, 3.0}) {
    const Potential p = Potential::qnorm(q);
    const auto lin = closest_interpolant_linear(p, sd.data, w0);
    const auto non = closest_interpolant_nonlinear(p, sd.model, sd.data, w0);
    EXPECT_LE(non.constraint_violation, kNonlinearFeasibilityTol);
    EXPECT_NEAR(non.divergence, lin.divergence, 1e-6 * std::max(1.0, lin.divergence)) << "q=" << q;
  }
}

TEST(Oracle, NonlinearSmallMlp) {
  io::SyntheticSpec sp;
  sp.n = 3;
  sp.d = 2;
  sp.hidden = {3};
  sp.seed = 9;
  const auto sd = io::generate_synthetic(sp);
  Rng rng(1);
  const Vector w0 = sd.teacher + normal_vector(rng, sd.teacher.size(), 0.05);
  const Potential p = Potential::qnorm(2.0);
  NonlinearOracleOptions opts;
  opts.feasible_points = {sd.teacher};
  const auto res = closest_interpolant_nonlinear(p, sd.model, sd.data, w0, opts);
  EXPECT_LE(res.constraint_violation, kNonlinearFeasibilityTol);
  EXPECT_LE(res.divergence, bregman(p, sd.teacher, w0) + 1e-12);
  // local optimality: gradient of D(., w0) lies in the span of the constraint gradients
  const Matrix J = sd.model.jacobian(res.w_star, sd.data.inputs);
  EXPECT_LE(off_rowspace(J, res.w_star - w0), 1e-4);
}

TEST(Oracle, ManifoldEstimateIsExactForLinear) {
  auto sd = problem(10);
  Rng rng(2);
  const Vector w0 = normal_vector(rng, 50, 0.01);
  const auto res = closest_interpolant_linear(Potential::qnorm(2.0), sd.data, w0);
  const double est = distance_to_manifold_estimate(sd.model, sd.data, w0);
  EXPECT_NEAR(est, (res.w_star - w0).squaredNorm(), 1e-10 * est);
}

TEST(Oracle, RunConvergesToOracleAndIdentityCloses) {
  auto sd = problem(11);
  Rng rng(3);
  const Vector w0 = normal_vector(rng, 50, 0.01);
  const Potential p = Potential::qnorm(3.0);
  SMDConfig cfg;
  cfg.eta = detail::auto_step_size(p, sd.model, LossFn::square(), sd.data, w0, 0) / 3.0;
  cfg.loss_threshold = 1e-22;
  cfg.max_steps = 400000;
  cfg.record_trace = true;
  const auto run = train(p, sd.model, LossFn::square(), sd.data, w0, cfg);
  ASSERT_TRUE(run.converged);
  const auto orc = closest_interpolant_linear(p, sd.data, w0);
  const auto rep = closeness_report(p, sd.model, LossFn::square(), sd.data, w0, run, orc);
  EXPECT_LE(rep.ratio, 1e-6);
  ASSERT_TRUE(rep.identity_checked);
  EXPECT_LE(std::abs(rep.identity_residual), 1e-8 * std::max(1.0, std::abs(rep.identity_lhs)));
}
