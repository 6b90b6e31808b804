#pragma once

// Stochastic mirror descent: the single-sample update, the training loop,
// the per-step identity, the step-size check and the sign check on D_{L_i}(w_ref, w).

#include "smdlab/mirror.hpp"
#include "smdlab/model.hpp"
#include "smdlab/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace smdlab {

inline constexpr double kDefaultLossThreshold = 1e-10;
inline constexpr double kInterpolationTolerance = 1e-8;
inline constexpr double kIdentityRelTolerance = 1e-8;

struct SMDConfig {
  enum class Order { Cyclic, Shuffled };

  double eta = 0.01;
  Order order = Order::Cyclic;
  std::uint64_t seed = 0;  // only consulted for Order::Shuffled
  double loss_threshold = kDefaultLossThreshold;
  std::size_t max_steps = 100000;
  std::optional<double> accuracy_target;
  bool record_trace = false;
  /// Reference point for per-step D_ψ(w_ref, w_i) and D_{L_i}(w_ref, w_{i-1}).
  std::optional<ParamVector> trace_ref;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("SMD step size must be finite and > 0");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (!(loss_threshold >= 0.0)) throw ConfigError("loss_threshold must be >= 0");
    if (accuracy_target && !(*accuracy_target >= 0.0 && *accuracy_target <= 1.0))
      throw ConfigError("accuracy_target must lie in [0, 1]");
  }
};

struct TraceRecord {
  std::size_t step = 0;    // 1-based
  Eigen::Index index = 0;  // sample visited
  double loss = 0.0;       // L_i(w_i)
  double dpsi_ref = std::numeric_limits<double>::quiet_NaN();  // D_ψ(w_ref, w_i)
  double dli_ref = std::numeric_limits<double>::quiet_NaN();   // D_{L_i}(w_ref, w_{i-1})
  double mixed = 0.0;      // D_{ψ-ηL_i}(w_i, w_{i-1})
};

/// Running sums that let the summed identity be checked afterwards against
/// any interpolating w without storing the trajectory. The w-dependent part
/// of Σ η·D_{L_i}(w, w_{i-1}) is η·Σ L_i(w) - (Σ η∇L_i(w_{i-1}))ᵀw.
struct IdentitySums {
  double scalar = 0.0;   // Σ [D_{ψ-ηL_i}(w_i,w_{i-1}) + ηL_i(w_i) + η(∇L_i(w_{i-1})ᵀw_{i-1} - L_i(w_{i-1}))]
  Vector grad_sum;       // Σ η∇L_i(w_{i-1})
  std::vector<std::size_t> visits;  // visits per sample index
  double eta = 0.0;
};

struct TrainResult {
  ParamVector w_final;
  std::size_t steps_taken = 0;
  double final_total_loss = 0.0;
  std::optional<double> final_accuracy;
  bool converged = false;
  std::vector<TraceRecord> trace;
  std::optional<IdentitySums> sums;
};

/// w_next = (∇ψ)⁻¹(∇ψ(w) - η∇L_i(w)).
inline ParamVector smd_step(const Potential& pot, const Model& model, const LossFn& loss,
                            const Eigen::Ref<const ParamVector>& w, const Eigen::Ref<const Vector>& x, double y,
                            double eta) {
  if (!(eta > 0.0)) throw ArgumentError("smd_step: eta must be > 0");
  const ParamVector g = loss_grad(loss, model, w, x, y);
  ParamVector next = pot.is_euclidean() ? ParamVector(w - eta * g)
                                        : inverse_mirror_map(pot, mirror_map(pot, w) - eta * g);
  if (!next.allFinite()) throw NumericError("smd_step: non-finite update");
  if (pot.is_entropy() && (next.array() <= 0.0).any())
    throw DomainError("smd_step: update left the positive orthant");
  return next;
}

/// D_{L_i}(w, w_prev) = L_i(w) - L_i(w_prev) - ∇L_i(w_prev)ᵀ(w - w_prev). May be negative.
inline double d_li(const Model& model, const LossFn& loss, const Eigen::Ref<const ParamVector>& w,
                   const Eigen::Ref<const ParamVector>& w_prev, const Eigen::Ref<const Vector>& x, double y) {
  detail::require_same_size(w.size(), w_prev.size(), "d_li");
  const double lw = loss_value(loss, model, w, x, y);
  const double lp = loss_value(loss, model, w_prev, x, y);
  return lw - lp - loss_grad(loss, model, w_prev, x, y).dot(w - w_prev);
}

struct IdentityReport {
  double lhs = 0.0;             // D_ψ(w, w_{i-1})
  double term_dpsi_next = 0.0;  // D_ψ(w, w_i)
  double term_mixed = 0.0;      // D_{ψ-ηL_i}(w_i, w_{i-1})
  double term_loss = 0.0;       // η·L_i(w_i)
  double term_dli = 0.0;        // η·D_{L_i}(w, w_{i-1})
  double residual = 0.0;        // lhs minus the four right-hand terms

  double relative_residual() const { return std::abs(residual) / std::max(1.0, std::abs(lhs)); }
  bool holds(double tol = kIdentityRelTolerance) const { return relative_residual() <= tol; }
};

/// Evaluates both sides of the per-step identity for the step taken from
/// w_prev on sample (x, y). w_ref must fit the sample.
inline IdentityReport verify_identity(const Potential& pot, const Model& model, const LossFn& loss,
                                      const Eigen::Ref<const ParamVector>& w_ref,
                                      const Eigen::Ref<const ParamVector>& w_prev, const Eigen::Ref<const Vector>& x,
                                      double y, double eta, double interpolation_tol = kInterpolationTolerance) {
  const double fit = y - model.predict(w_ref, x);
  if (!(std::abs(fit) <= interpolation_tol))
    throw PreconditionError("verify_identity: reference point does not interpolate the sample (residual " +
                            std::to_string(fit) + ")");
  const ParamVector w_next = smd_step(pot, model, loss, w_prev, x, y, eta);
  IdentityReport rep;
  rep.lhs = bregman(pot, w_ref, w_prev);
  rep.term_dpsi_next = bregman(pot, w_ref, w_next);
  rep.term_mixed = bregman(pot, w_next, w_prev) - eta * d_li(model, loss, w_next, w_prev, x, y);
  rep.term_loss = eta * loss_value(loss, model, w_next, x, y);
  rep.term_dli = eta * d_li(model, loss, w_ref, w_prev, x, y);
  rep.residual = rep.lhs - (rep.term_dpsi_next + rep.term_mixed + rep.term_loss + rep.term_dli);
  return rep;
}

/// Sample index visited at each step; every index recurs within each epoch.
class IndexOrder {
 public:
  IndexOrder(Eigen::Index n, SMDConfig::Order order, std::uint64_t seed) : perm_(n), order_(order), rng_(seed) {
    std::iota(perm_.begin(), perm_.end(), Eigen::Index{0});
    reshuffle();
  }

  Eigen::Index next() {
    if (pos_ == perm_.size()) {
      pos_ = 0;
      reshuffle();
    }
    return perm_[pos_++];
  }

 private:
  void reshuffle() {
    if (order_ == SMDConfig::Order::Shuffled) std::shuffle(perm_.begin(), perm_.end(), rng_);
  }
  std::vector<Eigen::Index> perm_;
  std::size_t pos_ = 0;
  SMDConfig::Order order_;
  Rng rng_;
};

namespace detail {

inline bool stop_reached(const LossFn& loss, const Model& model, const ParamVector& w, const Dataset& data,
                         const SMDConfig& cfg, TrainResult& out) {
  out.final_total_loss = total_loss(loss, model, w, data);
  if (!std::isfinite(out.final_total_loss)) return false;
  if (cfg.accuracy_target) {
    out.final_accuracy = sign_accuracy(model, w, data.inputs, data.labels);
    return *out.final_accuracy >= *cfg.accuracy_target;
  }
  return out.final_total_loss <= cfg.loss_threshold;
}

}  // namespace detail

/// Runs SMD from w0 until the stopping rule fires (checked before the first
/// step and after every pass over the data) or max_steps is reached.
inline TrainResult train(const Potential& pot, const Model& model, const LossFn& loss, const Dataset& data,
                         const Eigen::Ref<const ParamVector>& w0, const SMDConfig& cfg) {
  cfg.validate();
  data.validate();
  detail::require_same_size(w0.size(), model.param_count(), "train w0");
  detail::require_same_size(data.dim(), model.input_dim(), "train data");
  if (pot.is_entropy()) detail::check_entropy_domain(w0, "train w0");
  if (cfg.trace_ref) detail::require_same_size(cfg.trace_ref->size(), w0.size(), "train trace_ref");

  TrainResult out;
  ParamVector w = w0;
  DualVector z = mirror_map(pot, w);
  if (cfg.record_trace) {
    out.sums = IdentitySums{0.0, Vector::Zero(w.size()), std::vector<std::size_t>(data.size(), 0), cfg.eta};
  }
  if (detail::stop_reached(loss, model, w, data, cfg, out)) {
    out.w_final = w;
    out.converged = true;
    return out;
  }

  const Eigen::Index n = data.size();
  IndexOrder order(n, cfg.order, cfg.seed);
  ParamVector g(w.size());
  ParamVector next(w.size());
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const Eigen::Index i = order.next();
    const auto x = data.inputs.row(i).transpose();
    const double y = data.labels[i];
    const double f = model.predict_with_grad(w, x, g);
    const double dl = loss.derivative(y, f);
    g *= dl;
    if (pot.is_euclidean()) {
      next = w - cfg.eta * g;
    } else {
      z -= cfg.eta * g;
      next = inverse_mirror_map(pot, z);
    }
    if (!next.allFinite() || (pot.is_entropy() && (next.array() <= 0.0).any())) {
      throw NumericError("train: update left the potential domain or became non-finite at step " +
                         std::to_string(step) + " (sample " + std::to_string(i) + ")");
    }
    if (cfg.record_trace) {
      TraceRecord rec;
      rec.step = step;
      rec.index = i;
      const double loss_prev = loss.value(y, f);
      rec.loss = loss_value(loss, model, next, x, y);
      const double dli_step = rec.loss - loss_prev - g.dot(next - w);
      rec.mixed = bregman(pot, next, w) - cfg.eta * dli_step;
      if (cfg.trace_ref) {
        rec.dpsi_ref = bregman(pot, *cfg.trace_ref, next);
        rec.dli_ref = loss_value(loss, model, *cfg.trace_ref, x, y) - loss_prev - g.dot(*cfg.trace_ref - w);
      }
      auto& s = *out.sums;
      s.scalar += rec.mixed + cfg.eta * rec.loss + cfg.eta * (g.dot(w) - loss_prev);
      s.grad_sum += cfg.eta * g;
      ++s.visits[static_cast<std::size_t>(i)];
      out.trace.push_back(rec);
    }
    w.swap(next);
    out.steps_taken = step;
    if (step % static_cast<std::size_t>(n) == 0 || step == cfg.max_steps) {
      if (detail::stop_reached(loss, model, w, data, cfg, out)) {
        out.converged = true;
        break;
      }
    }
  }
  out.w_final = w;
  if (!out.converged) detail::stop_reached(loss, model, w, data, cfg, out);
  return out;
}

/// 1 / max_i ‖x_i‖², the SGD step-size bound for linear models.
inline double step_size_bound_linear(const Dataset& data) {
  if (data.size() == 0) throw DegenerateDataError("step_size_bound_linear: empty dataset");
  const double m = data.inputs.rowwise().squaredNorm().maxCoeff();
  if (data.inputs.rowwise().squaredNorm().minCoeff() == 0.0)
    throw DegenerateDataError("step_size_bound_linear: zero input row");
  return 1.0 / m;
}

struct StepSizeReport {
  bool passed = true;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::size_t pairs_checked = 0;
};

/// Sampled midpoint-convexity test of ψ - ηL_i over a Euclidean ball.
/// Pairs are separated in turn along a random direction, along ∇f_i, where
/// the loss curvature concentrates, and along (∇²ψ)⁻¹∇f_i, the direction in
/// which ψ is weakest relative to that curvature. The margin of a pair
/// (a, b) with midpoint m is ½[D_ψ(a,m) + D_ψ(b,m)] - η·½[D_{L_i}(a,m) + D_{L_i}(b,m)],
/// which equals ½(g(a) + g(b)) - g(m) for g = ψ - ηL_i.
inline StepSizeReport step_size_check_general(const Potential& pot, const Model& model, const LossFn& loss,
                                              const Dataset& data, double eta,
                                              const Eigen::Ref<const ParamVector>& center, double radius,
                                              std::size_t samples, std::uint64_t seed = 0) {
  if (samples < 2) throw ArgumentError("step_size_check_general: samples must be >= 2");
  detail::require_same_size(center.size(), model.param_count(), "step_size_check_general");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  StepSizeReport rep;
  const double r = radius > 0.0 ? radius : 1e-3;
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector a = sample_ball(rng, center, r);
    const Vector random_dir = normal_vector(rng, center.size()).normalized();
    const double len = r * unit(rng);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const Vector x = data.inputs.row(i).transpose();
      const double y = data.labels[i];
      Vector dir = random_dir;
      if (s % 3 != 0) {
        Vector gf = model.grad_predict(a, x);
        if (s % 3 == 2) gf = gf.cwiseQuotient(potential_curvature(pot, a).cwiseMax(1e-300));
        if (gf.allFinite() && gf.norm() > 0.0) dir = gf.normalized();
      }
      const Vector b = a + len * dir;
      const Vector m = 0.5 * (a + b);
      if (pot.is_entropy() && ((a.array() <= 0.0).any() || (b.array() <= 0.0).any())) continue;
      const double psi_gap = 0.5 * (bregman(pot, a, m) + bregman(pot, b, m));
      const double loss_gap = 0.5 * (d_li(model, loss, a, m, x, y) + d_li(model, loss, b, m, x, y));
      const double margin = psi_gap - eta * loss_gap;
      rep.worst_margin = std::min(rep.worst_margin, margin);
      ++rep.pairs_checked;
      if (!(margin > 0.0)) rep.passed = false;
    }
  }
  return rep;
}

/// Largest η = eta_start / 2^k that passes step_size_check_general.
inline double select_step_size(const Potential& pot, const Model& model, const LossFn& loss, const Dataset& data,
                               const Eigen::Ref<const ParamVector>& center, double radius, double eta_start,
                               std::size_t samples = 16, std::uint64_t seed = 0, int max_halvings = 200) {
  double eta = eta_start;
  for (int k = 0; k <= max_halvings; ++k, eta *= 0.5) {
    if (step_size_check_general(pot, model, loss, data, eta, center, radius, samples, seed).passed) return eta;
  }
  throw NumericError("select_step_size: no step size passed the convexity check");
}

/// SGD-style starting point for the step-size search: 1 / max_i ‖∇f_i(w)‖².
inline double sgd_step_bound(const Model& model, const Dataset& data, const Eigen::Ref<const ParamVector>& w) {
  if (model.is_linear()) return step_size_bound_linear(data);
  double m = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i)
    m = std::max(m, model.grad_predict(w, data.inputs.row(i).transpose()).squaredNorm());
  if (m == 0.0) throw DegenerateDataError("sgd_step_bound: all gradients vanish");
  return 1.0 / m;
}

struct LossDivergenceReport {
  bool all_nonneg = true;
  double min_value = std::numeric_limits<double>::infinity();
  std::size_t argmin = 0;
};

/// Evaluates D_{L_t}(w_ref, w_{t-1}) along a trajectory {w_0, w_1, ...},
/// where t-1's sample is `sample_indices[t-1]`. A one-point trajectory is
/// checked against every sample.
inline LossDivergenceReport loss_divergence_check(const Model& model, const LossFn& loss, const Dataset& data,
                                           const Eigen::Ref<const ParamVector>& w_ref,
                                           std::span<const ParamVector> trajectory,
                                           std::span<const Eigen::Index> sample_indices = {},
                                           double interpolation_tol = kInterpolationTolerance) {
  const Vector res = residuals(model, w_ref, data);
  if (!(res.lpNorm<Eigen::Infinity>() <= interpolation_tol))
    throw PreconditionError("loss_divergence_check: reference point is not interpolating");
  LossDivergenceReport rep;
  auto visit = [&](std::size_t t, Eigen::Index i) {
    const double v = d_li(model, loss, w_ref, trajectory[t], data.inputs.row(i).transpose(), data.labels[i]);
    if (v < rep.min_value) {
      rep.min_value = v;
      rep.argmin = t;
    }
    if (v < 0.0) rep.all_nonneg = false;
  };
  for (std::size_t t = 0; t < trajectory.size(); ++t) {
    if (t < sample_indices.size()) {
      visit(t, sample_indices[t]);
    } else {
      for (Eigen::Index i = 0; i < data.size(); ++i) visit(t, i);
    }
  }
  if (trajectory.empty()) rep.min_value = 0.0;
  return rep;
}

/// Same report from a training trace recorded against w_ref.
inline LossDivergenceReport loss_divergence_from_trace(std::span<const TraceRecord> trace) {
  LossDivergenceReport rep;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const double v = trace[t].dli_ref;
    if (std::isnan(v)) throw PreconditionError("loss_divergence_from_trace: trace has no reference point");
    if (v < rep.min_value) {
      rep.min_value = v;
      rep.argmin = t;
    }
    if (v < 0.0) rep.all_nonneg = false;
  }
  if (trace.empty()) rep.min_value = 0.0;
  return rep;
}

}  // namespace smdlab
