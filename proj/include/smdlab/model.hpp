#pragma once

// Scalar-output predictors f(x, w) with analytic weight gradients, the
// per-sample losses built on them, and the dataset container.

#include "smdlab/finite_diff.hpp"
#include "smdlab/random.hpp"
#include "smdlab/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace smdlab {

struct Dataset {
  Matrix inputs;  // n × d, one sample per row
  Vector labels;  // n
  std::optional<Matrix> test_inputs;
  std::optional<Vector> test_labels;

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index dim() const { return inputs.cols(); }
  bool has_test() const { return test_inputs.has_value() && test_labels.has_value() && test_inputs->rows() > 0; }

  void validate() const {
    if (inputs.rows() < 1 || inputs.cols() < 1) throw DataError("dataset must have n >= 1 and d >= 1");
    detail::require_same_size(inputs.rows(), labels.size(), "dataset labels");
    if (!inputs.allFinite() || !labels.allFinite()) throw DataError("dataset contains non-finite entries");
    if (test_inputs.has_value() != test_labels.has_value()) throw DataError("test split needs inputs and labels");
    if (test_inputs) {
      detail::require_same_size(test_inputs->cols(), inputs.cols(), "test inputs");
      detail::require_same_size(test_inputs->rows(), test_labels->size(), "test labels");
      if (!test_inputs->allFinite() || !test_labels->allFinite())
        throw DataError("test split contains non-finite entries");
    }
  }
};

/// Linear model xᵀw, or a fully connected network with tanh hidden layers and
/// a linear scalar output. Parameters are laid out layer by layer, each layer
/// as its row-major weight matrix followed by its bias vector.
class Model {
 public:
  enum class Kind { Linear, Mlp };

  static Model linear(int d) {
    if (d < 1) throw ArgumentError("linear model needs d >= 1");
    return Model(Kind::Linear, {d});
  }

  /// `widths` runs from the input dimension to the output dimension, which
  /// must be 1.
  static Model mlp(std::vector<int> widths) {
    if (widths.size() < 2) throw ArgumentError("mlp needs at least input and output widths");
    if (widths.back() != 1) throw ArgumentError("mlp output width must be 1");
    for (int w : widths)
      if (w < 1) throw ArgumentError("mlp widths must be positive");
    return Model(Kind::Mlp, std::move(widths));
  }

  Kind kind() const { return kind_; }
  bool is_linear() const { return kind_ == Kind::Linear; }
  const std::vector<int>& widths() const { return widths_; }
  int input_dim() const { return widths_.front(); }
  Eigen::Index param_count() const { return p_; }

  /// Canonical text form, e.g. "linear:50" or "mlp:19-19-1".
  std::string spec_string() const {
    std::string s = is_linear() ? "linear:" : "mlp:";
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      if (i) s += '-';
      s += std::to_string(widths_[i]);
    }
    return s;
  }

  /// FNV-1a of spec_string(); stored in checkpoints.
  std::uint64_t spec_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : spec_string()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  friend bool operator==(const Model& a, const Model& b) { return a.kind_ == b.kind_ && a.widths_ == b.widths_; }

  double predict(const Eigen::Ref<const ParamVector>& w, const Eigen::Ref<const Vector>& x) const {
    check_dims(w, x, "predict");
    if (is_linear()) return x.dot(w);
    Vector a = x;
    Eigen::Index off = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      Vector h = weights(w, off, out, in) * a + w.segment(off + Eigen::Index(out) * in, out);
      off += Eigen::Index(out) * (in + 1);
      a = (l + 2 < widths_.size()) ? Vector(h.array().tanh()) : h;
    }
    return a[0];
  }

  /// f(x, w) and ∇_w f(x, w) by reverse-mode accumulation.
  double predict_with_grad(const Eigen::Ref<const ParamVector>& w, const Eigen::Ref<const Vector>& x,
                           Eigen::Ref<ParamVector> grad) const {
    check_dims(w, x, "grad_predict");
    detail::require_same_size(grad.size(), p_, "grad_predict output");
    if (is_linear()) {
      grad = x;
      return x.dot(w);
    }
    const std::size_t layers = widths_.size() - 1;
    std::vector<Vector> acts;  // acts[l] is the input to layer l
    acts.reserve(layers + 1);
    acts.push_back(x);
    std::vector<Eigen::Index> offsets(layers);
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      offsets[l] = off;
      Vector h = weights(w, off, out, in) * acts.back() + w.segment(off + Eigen::Index(out) * in, out);
      off += Eigen::Index(out) * (in + 1);
      acts.push_back(l + 1 < layers ? Vector(h.array().tanh()) : h);
    }
    Vector delta = Vector::Ones(1);  // ∂f/∂(pre-activation) of the current layer
    for (std::size_t l = layers; l-- > 0;) {
      const int in = widths_[l], out = widths_[l + 1];
      const Eigen::Index o = offsets[l];
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(grad.data() + o, out, in);
      gw.noalias() = delta * acts[l].transpose();
      grad.segment(o + Eigen::Index(out) * in, out) = delta;
      if (l > 0) {
        Vector back = weights(w, o, out, in).transpose() * delta;
        delta = back.array() * (1.0 - acts[l].array().square());
      }
    }
    return acts.back()[0];
  }

  ParamVector grad_predict(const Eigen::Ref<const ParamVector>& w, const Eigen::Ref<const Vector>& x) const {
    ParamVector g(p_);
    predict_with_grad(w, x, g);
    return g;
  }

  /// n × p matrix whose row i is ∇_w f(x_i, w).
  Matrix jacobian(const Eigen::Ref<const ParamVector>& w, const Eigen::Ref<const Matrix>& inputs) const {
    Matrix jac(inputs.rows(), p_);
    ParamVector g(p_);
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
      predict_with_grad(w, inputs.row(i).transpose(), g);
      jac.row(i) = g.transpose();
    }
    return jac;
  }

  Vector predict_all(const Eigen::Ref<const ParamVector>& w, const Eigen::Ref<const Matrix>& inputs) const {
    Vector out(inputs.rows());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) out[i] = predict(w, inputs.row(i).transpose());
    return out;
  }

  /// Random parameters with i.i.d. N(0, scale²) entries.
  ParamVector random_params(Rng& rng, double scale) const { return normal_vector(rng, p_, scale); }

 private:
  Model(Kind kind, std::vector<int> widths) : kind_(kind), widths_(std::move(widths)) {
    if (kind_ == Kind::Linear) {
      p_ = widths_.front();
    } else {
      p_ = 0;
      for (std::size_t l = 0; l + 1 < widths_.size(); ++l) p_ += Eigen::Index(widths_[l + 1]) * (widths_[l] + 1);
    }
  }

  static Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> weights(
      const Eigen::Ref<const ParamVector>& w, Eigen::Index off, int out, int in) {
    return {w.data() + off, out, in};
  }

  void check_dims(const Eigen::Ref<const ParamVector>& w, const Eigen::Ref<const Vector>& x, const char* what) const {
    detail::require_same_size(w.size(), p_, what);
    detail::require_same_size(x.size(), input_dim(), what);
  }

  Kind kind_;
  std::vector<int> widths_;
  Eigen::Index p_ = 0;
};

/// Per-sample loss ℓ(y, f) with derivative in the prediction.
struct LossFn {
  enum class Kind { Square, CrossEntropyBinary };
  Kind kind = Kind::Square;

  static LossFn square() { return {Kind::Square}; }
  static LossFn cross_entropy_binary() { return {Kind::CrossEntropyBinary}; }

  std::string name() const { return kind == Kind::Square ? "square" : "cross-entropy-binary"; }

  double value(double y, double f) const {
    if (kind == Kind::Square) {
      const double r = y - f;
      return 0.5 * r * r;
    }
    // log(1 + exp(-y f)), labels in {-1, +1}
    const double m = -y * f;
    return m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
  }

  /// ∂ℓ/∂f.
  double derivative(double y, double f) const {
    if (kind == Kind::Square) return f - y;
    const double m = -y * f;
    const double sig = m > 0.0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m));
    return -y * sig;
  }

  friend bool operator==(const LossFn&, const LossFn&) = default;
};

inline double predict(const Model& model, const Eigen::Ref<const ParamVector>& w, const Eigen::Ref<const Vector>& x) {
  return model.predict(w, x);
}

inline ParamVector grad_predict(const Model& model, const Eigen::Ref<const ParamVector>& w,
                                const Eigen::Ref<const Vector>& x) {
  return model.grad_predict(w, x);
}

/// L_i(w) = ℓ(y, f(x, w)).
inline double loss_value(const LossFn& loss, const Model& model, const Eigen::Ref<const ParamVector>& w,
                         const Eigen::Ref<const Vector>& x, double y) {
  return loss.value(y, model.predict(w, x));
}

/// ∇L_i(w) = ℓ'(f)·∇f; for the square loss this is -(y - f)·∇f.
inline ParamVector loss_grad(const LossFn& loss, const Model& model, const Eigen::Ref<const ParamVector>& w,
                             const Eigen::Ref<const Vector>& x, double y) {
  ParamVector g(model.param_count());
  const double f = model.predict_with_grad(w, x, g);
  g *= loss.derivative(y, f);
  return g;
}

/// (y_i - f(x_i, w)) for every training sample.
inline Vector residuals(const Model& model, const Eigen::Ref<const ParamVector>& w, const Dataset& data) {
  detail::require_same_size(data.dim(), model.input_dim(), "residuals");
  return data.labels - model.predict_all(w, data.inputs);
}

inline double total_loss(const LossFn& loss, const Model& model, const Eigen::Ref<const ParamVector>& w,
                         const Dataset& data) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i)
    sum += loss_value(loss, model, w, data.inputs.row(i).transpose(), data.labels[i]);
  return sum;
}

/// Fraction of samples with sign(f) == sign(y); used for ±1 labels.
inline double sign_accuracy(const Model& model, const Eigen::Ref<const ParamVector>& w,
                            const Eigen::Ref<const Matrix>& inputs, const Eigen::Ref<const Vector>& labels) {
  if (inputs.rows() == 0) return 0.0;
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    const double f = model.predict(w, inputs.row(i).transpose());
    if ((f >= 0.0) == (labels[i] >= 0.0)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(inputs.rows());
}

/// Hessian of f(x_i, ·) at w by central differences of the analytic gradient.
/// Not symmetrized.
inline Matrix hessian_fd(const Model& model, const Eigen::Ref<const ParamVector>& w, const Eigen::Ref<const Vector>& x,
                         double h = kFiniteDiffStep) {
  return fd_jacobian([&](const Vector& v) { return model.grad_predict(v, x); }, w, h);
}

struct CurvatureReport {
  double gamma = 0.0;  // max ‖∇f_i(w')‖
  double alpha = 0.0;  // min λ_min(H_{f_i}(w'))
  double beta = 0.0;   // max λ_max(H_{f_i}(w'))
  std::size_t sampled_points = 0;
  double region_radius = 0.0;
};

inline constexpr Eigen::Index kMaxHessianParams = 500;

/// Sampled (not certified) gradient and Hessian bounds over the ball
/// {w' : ½‖w' - center‖² ≤ radius}. The first sample is the center itself.
inline CurvatureReport curvature_estimate(const Model& model, const Dataset& data,
                                             const Eigen::Ref<const ParamVector>& center, double radius,
                                             std::size_t samples, std::uint64_t seed = 0) {
  if (model.param_count() > kMaxHessianParams)
    throw CapabilityError("curvature_estimate: p = " + std::to_string(model.param_count()) +
                          " exceeds the explicit-Hessian limit of " + std::to_string(kMaxHessianParams));
  if (samples < 1) throw ArgumentError("curvature_estimate: samples must be >= 1");
  if (radius < 0.0) throw ArgumentError("curvature_estimate: radius must be >= 0");
  detail::require_same_size(center.size(), model.param_count(), "curvature_estimate");
  Rng rng(seed);
  CurvatureReport rep;
  rep.region_radius = radius;
  rep.alpha = std::numeric_limits<double>::infinity();
  rep.beta = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector wp = s == 0 ? Vector(center) : sample_ball(rng, center, std::sqrt(2.0 * radius));
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const Vector x = data.inputs.row(i).transpose();
      rep.gamma = std::max(rep.gamma, model.grad_predict(wp, x).norm());
      Matrix hess = hessian_fd(model, wp, x);
      if (!hess.allFinite()) throw NumericError("curvature_estimate: non-finite Hessian entry");
      const Matrix sym = 0.5 * (hess + hess.transpose());
      Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
      rep.alpha = std::min(rep.alpha, eig.eigenvalues().minCoeff());
      rep.beta = std::max(rep.beta, eig.eigenvalues().maxCoeff());
    }
    ++rep.sampled_points;
  }
  return rep;
}

}  // namespace smdlab
