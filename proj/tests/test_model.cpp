#include "smdlab/finite_diff.hpp"
#include "smdlab/model.hpp"
#include "smdlab/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace smdlab;

namespace {

// Plain forward pass written against the documented layout: per layer a
// row-major out×in weight block followed by out biases, tanh between layers.
double reference_forward(const std::vector<int>& widths, const Vector& w, const Vector& x) {
  Vector a = x;
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l], out = widths[l + 1];
    Matrix W(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) W(r, c) = w[off + r * in + c];
    off += Eigen::Index(out) * in;
    Vector h = W * a + w.segment(off, out);
    off += out;
    a = l + 2 < widths.size() ? Vector(h.array().tanh()) : h;
  }
  return a[0];
}

}  // namespace

TEST(Model, ParamCounts) {
  EXPECT_EQ(Model::linear(7).param_count(), 7);
  EXPECT_EQ(Model::mlp({10, 20, 1}).param_count(), 241);
  EXPECT_EQ(Model::mlp({8, 20, 1}).param_count(), 201);
  EXPECT_EQ(Model::mlp({3, 4, 5, 1}).param_count(), 16 + 25 + 6);
}

TEST(Model, ForwardMatchesReference) {
  Rng rng(1);
  const std::vector<int> widths{4, 6, 3, 1};
  const Model m = Model::mlp(widths);
  for (int t = 0; t < 5; ++t) {
    const Vector w = normal_vector(rng, m.param_count());
    const Vector x = normal_vector(rng, 4);
    EXPECT_NEAR(m.predict(w, x), reference_forward(widths, w, x), 1e-13);
  }
}

TEST(Model, GradientMatchesFiniteDifference) {
  Rng rng(2);
  for (const Model& m : {Model::linear(9), Model::mlp({5, 7, 1}), Model::mlp({3, 4, 4, 1})}) {
    const Vector w = normal_vector(rng, m.param_count(), 0.5);
    const Vector x = normal_vector(rng, m.input_dim());
    const Vector fd = fd_gradient([&](const Vector& v) { return m.predict(v, x); }, w);
    EXPECT_LE(fd_relative_error(m.grad_predict(w, x), fd), 1e-6) << m.spec_string();
  }
}

TEST(Model, LossGradientMatchesFiniteDifference) {
  Rng rng(3);
  const Model m = Model::mlp({5, 6, 1});
  const Vector w = normal_vector(rng, m.param_count(), 0.5);
  const Vector x = normal_vector(rng, 5);
  for (const LossFn& loss : {LossFn::square(), LossFn::cross_entropy_binary()}) {
    const double y = loss.kind == LossFn::Kind::Square ? 0.3 : -1.0;
    const Vector fd = fd_gradient([&](const Vector& v) { return loss_value(loss, m, v, x, y); }, w);
    EXPECT_LE(fd_relative_error(loss_grad(loss, m, w, x, y), fd), 1e-6) << loss.name();
  }
}

TEST(Model, CrossEntropyIsStableForLargeMargins) {
  const LossFn ce = LossFn::cross_entropy_binary();
  EXPECT_NEAR(ce.value(1.0, 800.0), 0.0, 1e-300);
  EXPECT_NEAR(ce.value(1.0, -800.0), 800.0, 1e-9);
  EXPECT_TRUE(std::isfinite(ce.derivative(-1.0, 800.0)));
}

TEST(Model, JacobianRowsAreGradients) {
  Rng rng(4);
  const Model m = Model::mlp({3, 5, 1});
  const Vector w = normal_vector(rng, m.param_count());
  const Matrix X = normal_matrix(rng, 4, 3);
  const Matrix J = m.jacobian(w, X);
  for (Eigen::Index i = 0; i < 4; ++i)
    EXPECT_LE((J.row(i).transpose() - m.grad_predict(w, X.row(i).transpose())).norm(), 0.0);
}

TEST(Model, DimensionMismatchThrows) {
  const Model m = Model::linear(3);
  EXPECT_THROW(m.predict(Vector::Zero(4), Vector::Zero(3)), ArgumentError);
}

TEST(Model, SpecHashDistinguishesArchitectures) {
  EXPECT_NE(Model::mlp({3, 4, 1}).spec_hash(), Model::mlp({3, 5, 1}).spec_hash());
  EXPECT_NE(Model::linear(3).spec_hash(), Model::mlp({3, 1}).spec_hash());
  EXPECT_EQ(Model::mlp({3, 4, 1}).spec_hash(), Model::mlp({3, 4, 1}).spec_hash());
}

TEST(Model, LinearHessianIsZero) {
  Rng rng(5);
  const Model m = Model::linear(4);
  EXPECT_LE(hessian_fd(m, normal_vector(rng, 4), normal_vector(rng, 4)).lpNorm<Eigen::Infinity>(), 1e-9);
}
