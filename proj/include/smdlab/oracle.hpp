#pragma once

// Independent computation of the interpolating point closest to w0 in
// D_ψ(·, w0): a closed form / dual Newton solver for linear constraints and a
// penalty-continuation solver for nonlinear models, plus the linearized
// distance-to-manifold estimate.

#include "smdlab/mirror.hpp"
#include "smdlab/model.hpp"
#include "smdlab/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace smdlab {

inline constexpr double kLinearFeasibilityTol = 1e-8;
inline constexpr double kNonlinearFeasibilityTol = 1e-6;

struct OracleResult {
  enum class Method { ClosedForm, KktNewton, PenaltyDescent };

  ParamVector w_star;
  double divergence = 0.0;            // D_ψ(w_star, w0)
  double constraint_violation = 0.0;  // ‖residuals(w_star)‖_∞
  Method method = Method::ClosedForm;
  std::size_t iterations = 0;
  Vector multipliers;                 // λ with ∇ψ(w*) = ∇ψ(w0) + Xᵀλ (linear case)
  std::vector<double> penalty_path;   // violation after each μ stage (nonlinear, winning start)
  std::vector<double> candidate_divergences;  // NaN for starts that never became feasible
  std::size_t best_start = 0;
};

inline const char* method_name(OracleResult::Method m) {
  switch (m) {
    case OracleResult::Method::ClosedForm: return "closed-form";
    case OracleResult::Method::KktNewton: return "kkt-newton";
    case OracleResult::Method::PenaltyDescent: return "penalty-descent";
  }
  return "?";
}

struct LinearOracleOptions {
  std::size_t max_iterations = 200;
  double tolerance = 1e-10;        // on ‖Xw - y‖_∞, scaled by max(1, ‖y‖_∞)
  double max_condition = 1e12;     // beyond this the Newton step is replaced
  double feasibility_tol = kLinearFeasibilityTol;
  double stationarity_tol = 1e-12;  // primal fallback, relative reduced gradient
};

namespace detail {

inline void require_full_row_rank(const Eigen::Ref<const Matrix>& X, const char* what) {
  if (X.rows() >= X.cols())
    throw DegenerateDataError(std::string(what) + ": needs fewer constraints than parameters (n < d)");
  Eigen::ColPivHouseholderQR<Matrix> qr(X.transpose());
  qr.setThreshold(1e-12);
  if (qr.rank() < X.rows()) throw DegenerateDataError(std::string(what) + ": constraint rows are linearly dependent");
}

struct DualSolution {
  Vector lambda;
  ParamVector w;
  double gradient_norm = 0.0;  // ‖Xw - b + ρλ‖_∞
  std::size_t iterations = 0;
  bool converged = false;
};

// ψ(w) + (κ/2)‖w‖². For κ = 0 this is ψ itself; otherwise its mirror map
// ∇ψ(w) + κw is inverted coordinatewise by Newton in u = log|w|, where the
// equation is convex and increasing, started from an upper bound.
struct DampedPotential {
  const Potential& pot;
  double kappa = 0.0;

  double invert_1d(double z) const {
    if (pot.is_entropy()) {
      // u + 1 + κe^u = z
      double u = z - 1.0;
      for (int it = 0; it < 100; ++it) {
        const double eu = std::exp(u);
        const double h = u + 1.0 + kappa * eu - z;
        const double step = h / (1.0 + kappa * eu);
        u -= step;
        if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(u))) break;
      }
      return std::exp(u);
    }
    if (z == 0.0) return 0.0;
    const double az = std::abs(z);
    const double e = pot.q - 1.0;
    // e^{eu} + κe^u = |z|
    double u = std::min(std::log(az) / e, std::log(az / kappa));
    for (int it = 0; it < 200; ++it) {
      const double a = std::exp(e * u), c = kappa * std::exp(u);
      const double h = a + c - az;
      const double step = h / (e * a + c);
      u -= step;
      if (!(std::abs(step) > 1e-15 * std::max(1.0, std::abs(u)))) break;
    }
    return std::copysign(std::exp(u), z);
  }
  ParamVector inverse(const Eigen::Ref<const DualVector>& z) const {
    if (kappa == 0.0) return inverse_mirror_map(pot, z);
    ParamVector w(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) w[j] = invert_1d(z[j]);
    return w;
  }
  // Derivative of the inverse map at z, given w = inverse(z).
  Vector inverse_derivative(const Eigen::Ref<const DualVector>& z, const ParamVector& w) const {
    if (kappa == 0.0) return inverse_map_derivative(pot, z);
    return (potential_curvature(pot, w).array() + kappa).inverse().matrix();
  }
  double conjugate(const Eigen::Ref<const DualVector>& z, const ParamVector& w) const {
    if (kappa == 0.0) return conjugate_value(pot, z);
    return z.dot(w) - potential_value(pot, w) - 0.5 * kappa * w.squaredNorm();
  }
};

// Minimizes the dual φ(λ) = ψ*(z0 + Xᵀλ) - bᵀλ + (ρ/2)‖λ‖² by damped Newton.
// The primal point w = (∇ψ)⁻¹(z0 + Xᵀλ) then solves
//   min D_ψ(w, w0) + ‖Xw - b‖²/(2ρ)   (ρ > 0),   or   min D_ψ(w, w0) s.t. Xw = b   (ρ = 0).
inline DualSolution dual_newton(const DampedPotential& dp, const Eigen::Ref<const Matrix>& X,
                                const Eigen::Ref<const Vector>& b, const Eigen::Ref<const DualVector>& z0, double rho,
                                std::size_t max_iterations, double tol, double max_condition) {
  DualSolution sol;
  sol.lambda = Vector::Zero(X.rows());
  DualVector z = z0;
  sol.w = dp.inverse(z);
  Vector g = X * sol.w - b;
  double phi = dp.conjugate(z, sol.w);
  std::size_t it = 0;
  for (; it < max_iterations && g.lpNorm<Eigen::Infinity>() > tol; ++it) {
    Vector d = dp.inverse_derivative(z, sol.w);
    for (Eigen::Index j = 0; j < d.size(); ++j)
      if (!std::isfinite(d[j]) || d[j] > 1e300) d[j] = 1e300;
    Matrix H = X * d.asDiagonal() * X.transpose();
    H.diagonal().array() += rho;
    Eigen::LDLT<Matrix> ldlt(H);
    Vector dir;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1.0 / max_condition) {
      dir = -ldlt.solve(g);
    } else {
      // Ill-conditioned: diagonally scaled steepest descent on φ. At a point
      // where the inverse map is flat (w0 = 0 with q < 2) H vanishes entirely.
      const double hmax = H.diagonal().maxCoeff();
      if (hmax > 0.0) dir = -(g.array() / H.diagonal().array().max(1e-12 * hmax)).matrix();
      else dir = -g;
    }
    if (!dir.allFinite()) dir = -g;
    const double slope = g.dot(dir);
    const double gnorm = g.norm();
    bool accepted = false;
    double t = 1.0;
    for (int ls = 0; ls < 80; ++ls, t *= 0.5) {
      const Vector cand = sol.lambda + t * dir;
      const DualVector zc = z0 + X.transpose() * cand;
      const ParamVector wc = dp.inverse(zc);
      const Vector gc = X * wc - b + rho * cand;
      if (!gc.allFinite()) continue;
      const double phic = dp.conjugate(zc, wc) - b.dot(cand) + 0.5 * rho * cand.squaredNorm();
      if (!std::isfinite(phic)) continue;
      const bool armijo = phic <= phi + 1e-4 * t * slope;
      // When φ no longer resolves the decrease, judge the step by ‖∇φ‖.
      const double scale = std::abs(b.dot(cand)) + std::abs(phic);
      const bool flat = std::abs(phic - phi) <= 1e-13 * scale;
      if (armijo || (flat && gc.norm() < (1.0 - 1e-4 * t) * gnorm)) {
        sol.lambda = cand;
        sol.w = wc;
        z = zc;
        g = gc;
        phi = phic;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  sol.iterations = it;
  sol.gradient_norm = g.lpNorm<Eigen::Infinity>();
  sol.converged = sol.gradient_norm <= tol;
  return sol;
}

// Levenberg-damped Newton on ψ(w) - ∇ψ(w0)ᵀw restricted to {Xw = y}, moving
// in the null space of X from the projection of `start`. Large q gives
// solutions with a few coordinates near zero, where the dual Hessian blows up
// but the primal one merely vanishes.
struct PrimalSolution {
  ParamVector w;
  double stationarity = 0.0;  // ‖Zᵀ(∇ψ(w) - ∇ψ(w0))‖_∞ / ‖∇ψ(w) - ∇ψ(w0)‖_∞
  std::size_t iterations = 0;
};

inline PrimalSolution primal_newton(const Potential& pot, const Eigen::Ref<const Matrix>& X,
                                    const Eigen::Ref<const Vector>& y, const Eigen::Ref<const ParamVector>& w0,
                                    ParamVector start, std::size_t max_iterations, double tol) {
  const Eigen::Index d = X.cols(), n = X.rows();
  Eigen::HouseholderQR<Matrix> qr(X.transpose());
  const Matrix Q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix Z = Q.rightCols(d - n);
  const Eigen::LDLT<Matrix> gram(X * X.transpose());
  const DualVector z0 = mirror_map(pot, w0);
  auto project = [&](ParamVector v) { return ParamVector(v + X.transpose() * gram.solve(y - X * v)); };
  auto objective = [&](const ParamVector& v) { return potential_value(pot, v) - z0.dot(v); };
  auto stationarity = [&](const ParamVector& v, Vector& rg) {
    const DualVector s = mirror_map(pot, v) - z0;
    rg = Z.transpose() * s;
    const double top = s.lpNorm<Eigen::Infinity>();
    return top > 0.0 ? rg.lpNorm<Eigen::Infinity>() / top : 0.0;
  };

  PrimalSolution sol;
  sol.w = project(std::move(start));
  if (!sol.w.allFinite()) sol.w = project(w0);
  double fv = objective(sol.w);
  Vector rg;
  sol.stationarity = stationarity(sol.w, rg);
  double kappa = 1e-6;
  std::size_t it = 0;
  for (; it < max_iterations && sol.stationarity > tol; ++it) {
    const Vector h = potential_curvature(pot, sol.w);
    const Matrix M = Z.transpose() * h.asDiagonal() * Z;
    const double hscale = std::max(M.diagonal().maxCoeff(), std::numeric_limits<double>::min());
    bool accepted = false;
    for (; kappa <= 1e12; kappa *= 10.0) {
      Matrix Mk = M;
      Mk.diagonal().array() += kappa * hscale;
      const ParamVector wc = sol.w - Z * Mk.ldlt().solve(rg);
      if (!wc.allFinite()) continue;
      const double fc = objective(wc);
      Vector rgc;
      const double stc = stationarity(wc, rgc);
      // f stops resolving progress near the optimum; then the reduced gradient decides
      const bool flat = std::abs(fc - fv) <= 1e-14 * (std::abs(fv) + potential_value(pot, wc));
      if (fc < fv || (flat && rgc.norm() < rg.norm())) {
        sol.w = wc;
        fv = fc;
        rg = rgc;
        sol.stationarity = stc;
        kappa = std::max(kappa / 4.0, 1e-16);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  sol.w = project(sol.w);
  sol.stationarity = stationarity(sol.w, rg);
  sol.iterations = it;
  return sol;
}

}  // namespace detail

/// argmin_{w : Xw = y} D_ψ(w, w0). Closed form for the Euclidean potential,
/// damped Newton on the n-dimensional dual otherwise.
inline OracleResult closest_interpolant_linear(const Potential& pot, const Eigen::Ref<const Matrix>& X,
                                               const Eigen::Ref<const Vector>& y,
                                               const Eigen::Ref<const ParamVector>& w0,
                                               const LinearOracleOptions& opts = {}) {
  detail::require_same_size(X.rows(), y.size(), "closest_interpolant_linear");
  detail::require_same_size(X.cols(), w0.size(), "closest_interpolant_linear");
  detail::require_full_row_rank(X, "closest_interpolant_linear");
  if (pot.is_entropy()) detail::check_entropy_domain(w0, "closest_interpolant_linear");

  OracleResult out;
  const double yscale = std::max(1.0, y.lpNorm<Eigen::Infinity>());
  const Vector r0 = y - X * w0;
  if (r0.lpNorm<Eigen::Infinity>() <= opts.tolerance * yscale) {
    out.w_star = w0;
    out.multipliers = Vector::Zero(X.rows());
    out.constraint_violation = r0.lpNorm<Eigen::Infinity>();
    out.method = pot.is_euclidean() ? OracleResult::Method::ClosedForm : OracleResult::Method::KktNewton;
    return out;
  }

  if (pot.is_euclidean()) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(X);
    out.w_star = w0 + cod.solve(r0);
    Eigen::LDLT<Matrix> gram(X * X.transpose());
    out.multipliers = gram.solve(r0);
    out.method = OracleResult::Method::ClosedForm;
  } else {
    const auto sol = detail::dual_newton(detail::DampedPotential{pot}, X, y, mirror_map(pot, w0), 0.0, opts.max_iterations,
                                         opts.tolerance * yscale, opts.max_condition);
    out.iterations = sol.iterations;
    out.multipliers = sol.lambda;
    out.w_star = sol.w;
    out.method = OracleResult::Method::KktNewton;
    if (!sol.converged && !pot.is_entropy()) {
      const auto ps = detail::primal_newton(pot, X, y, w0, sol.w, opts.max_iterations * 5, opts.stationarity_tol);
      out.iterations += ps.iterations;
      if (ps.stationarity > opts.stationarity_tol)
        throw OracleError("closest_interpolant_linear: neither dual nor primal Newton converged (stationarity " +
                          std::to_string(ps.stationarity) + ")");
      out.w_star = ps.w;
      out.multipliers = X.transpose().colPivHouseholderQr().solve(mirror_map(pot, ps.w) - mirror_map(pot, w0));
    } else if (!sol.converged && (X * out.w_star - y).lpNorm<Eigen::Infinity>() > opts.feasibility_tol * yscale) {
      throw OracleError("closest_interpolant_linear: dual Newton did not converge after " +
                        std::to_string(sol.iterations) + " iterations (residual " +
                        std::to_string(sol.gradient_norm) + ")");
    }
  }
  out.constraint_violation = (X * out.w_star - y).lpNorm<Eigen::Infinity>();
  if (!(out.constraint_violation <= opts.feasibility_tol * yscale))
    throw OracleError("closest_interpolant_linear: solution violates constraints by " +
                      std::to_string(out.constraint_violation));
  out.divergence = bregman(pot, out.w_star, w0);
  return out;
}

inline OracleResult closest_interpolant_linear(const Potential& pot, const Dataset& data,
                                               const Eigen::Ref<const ParamVector>& w0,
                                               const LinearOracleOptions& opts = {}) {
  return closest_interpolant_linear(pot, data.inputs, data.labels, w0, opts);
}

struct NonlinearOracleOptions {
  int penalty_stages = 9;                // μ_k = 10^k, k = 0 .. stages-1
  std::size_t inner_iterations = 200;
  double inner_grad_tol = 1e-7;          // relative to μ_k
  std::size_t polish_iterations = 60;
  std::size_t perturbed_restarts = 2;
  double perturbation_scale = 0.01;
  std::uint64_t seed = 0;
  double feasibility_tol = kNonlinearFeasibilityTol;
  std::vector<ParamVector> feasible_points;  // e.g. teacher weights
};

namespace detail {

inline constexpr double kHardConstraint = std::numeric_limits<double>::infinity();

struct PenaltyProblem {
  const Potential& pot;
  const Model& model;
  const Dataset& data;
  const ParamVector& w0;
  DualVector z0;

  double value(const ParamVector& w, double mu) const {
    return bregman(pot, w, w0) + mu * residuals(model, w, data).squaredNorm();
  }
};

// One linearized subproblem around w with a Euclidean proximal term:
//   min D_ψ(v, w0) + (κ/2)‖v - w‖² + μ‖J(v - w) - r‖²     (μ finite)
//   min D_ψ(v, w0) + (κ/2)‖v - w‖²  s.t. J(v - w) = r        (μ = ∞)
// κ is a Levenberg-Marquardt damping.
inline DualSolution proximal_linearized_step(const PenaltyProblem& prob, const ParamVector& w, const Matrix& J,
                                             const Vector& r, double mu, double kappa) {
  const double rho = std::isinf(mu) ? 0.0 : 1.0 / (2.0 * mu);
  const Vector b = J * w + r;
  return dual_newton(DampedPotential{prob.pot, kappa}, J, b, prob.z0 + kappa * w, rho, 100,
                     1e-12 * std::max(1.0, b.lpNorm<Eigen::Infinity>()), 1e12);
}

// Minimizes D_ψ(w, w0) + μ‖r(w)‖² by proximal Gauss-Newton steps; κ grows on
// rejected steps and shrinks on accepted ones.
inline ParamVector penalty_minimize(const PenaltyProblem& prob, ParamVector w, double mu, std::size_t max_iter,
                                    double grad_tol) {
  double val = prob.value(w, mu);
  double kappa = 1e-6;
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Matrix J = prob.model.jacobian(w, prob.data.inputs);
    const Vector r = residuals(prob.model, w, prob.data);
    const Vector grad = (mirror_map(prob.pot, w) - prob.z0) - 2.0 * mu * J.transpose() * r;
    if (grad.norm() <= grad_tol * mu) break;
    bool moved = false;
    for (; kappa <= 1e12; kappa *= 10.0) {
      const auto sol = proximal_linearized_step(prob, w, J, r, mu, kappa);
      if (!sol.w.allFinite()) continue;
      if (prob.pot.is_entropy() && (sol.w.array() <= 0.0).any()) continue;
      const double cv = prob.value(sol.w, mu);
      if (std::isfinite(cv) && cv < val) {
        w = sol.w;
        val = cv;
        moved = true;
        break;
      }
    }
    if (!moved) break;
    kappa = std::max(1e-9, kappa / 4.0);
  }
  return w;
}

// Sequential linearization: each iterate solves the linear oracle with the
// constraints linearized at the current point, plus the same proximal damping.
// Fixed points satisfy the KKT conditions of the nonlinear problem. Steps are
// accepted on an l1 merit.
inline ParamVector sequential_polish(const PenaltyProblem& prob, ParamVector w, std::size_t max_iter,
                                     std::size_t& iterations) {
  const double y_scale = std::max(1.0, prob.data.labels.lpNorm<Eigen::Infinity>());
  double kappa = 1e-6;
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Matrix J = prob.model.jacobian(w, prob.data.inputs);
    const Vector r = residuals(prob.model, w, prob.data);
    const double r1 = r.lpNorm<1>();
    bool moved = false;
    bool stationary = false;
    for (; kappa <= 1e12; kappa *= 10.0) {
      const auto sol = proximal_linearized_step(prob, w, J, r, kHardConstraint, kappa);
      if (!sol.w.allFinite() || !sol.converged) continue;
      if (prob.pot.is_entropy() && (sol.w.array() <= 0.0).any()) continue;
      if ((sol.w - w).lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + w.lpNorm<Eigen::Infinity>()) &&
          r.lpNorm<Eigen::Infinity>() <= 1e-12 * y_scale) {
        stationary = true;
        break;
      }
      const double nu = 2.0 * (sol.lambda.lpNorm<Eigen::Infinity>() + 1.0);
      const double m0 = bregman(prob.pot, w, prob.w0) + nu * r1;
      const double mc = bregman(prob.pot, sol.w, prob.w0) + nu * residuals(prob.model, sol.w, prob.data).lpNorm<1>();
      if (std::isfinite(mc) && mc < m0) {
        w = sol.w;
        moved = true;
        break;
      }
    }
    ++iterations;
    if (stationary || !moved) break;
    kappa = std::max(1e-9, kappa / 4.0);
  }
  return w;
}

}  // namespace detail

/// argmin_{w : residuals(w) = 0} D_ψ(w, w0) for a nonlinear model. Each start
/// (w0, the supplied feasible points, random perturbations of w0) is driven
/// through a quadratic-penalty continuation and a sequential-linearization
/// polish; the feasible candidate with the smallest divergence wins, ties
/// going to the earliest start. The answer is a local constrained minimizer.
inline OracleResult closest_interpolant_nonlinear(const Potential& pot, const Model& model, const Dataset& data,
                                                  const Eigen::Ref<const ParamVector>& w0,
                                                  const NonlinearOracleOptions& opts = {}) {
  detail::require_same_size(w0.size(), model.param_count(), "closest_interpolant_nonlinear");
  detail::require_same_size(data.dim(), model.input_dim(), "closest_interpolant_nonlinear");
  const ParamVector w0v = w0;
  detail::PenaltyProblem prob{pot, model, data, w0v, mirror_map(pot, w0v)};

  OracleResult best;
  best.method = OracleResult::Method::PenaltyDescent;
  const double r0 = residuals(model, w0v, data).lpNorm<Eigen::Infinity>();
  if (r0 <= opts.feasibility_tol * 1e-2) {
    best.w_star = w0v;
    best.constraint_violation = r0;
    best.candidate_divergences = {0.0};
    return best;
  }

  std::vector<ParamVector> starts{w0v};
  for (const auto& fp : opts.feasible_points) {
    detail::require_same_size(fp.size(), w0v.size(), "closest_interpolant_nonlinear feasible point");
    starts.push_back(fp);
  }
  Rng rng(opts.seed);
  for (std::size_t k = 0; k < opts.perturbed_restarts; ++k) {
    ParamVector s = w0v + normal_vector(rng, w0v.size(), opts.perturbation_scale);
    if (pot.is_entropy()) s = s.cwiseMax(1e-12);
    starts.push_back(std::move(s));
  }

  bool found = false;
  for (std::size_t si = 0; si < starts.size(); ++si) {
    ParamVector w = starts[si];
    std::vector<double> path;
    std::size_t iters = 0;
    double mu = 1.0;
    for (int k = 0; k < opts.penalty_stages; ++k, mu *= 10.0) {
      w = detail::penalty_minimize(prob, w, mu, opts.inner_iterations, opts.inner_grad_tol);
      path.push_back(residuals(model, w, data).lpNorm<Eigen::Infinity>());
      iters += 1;
    }
    w = detail::sequential_polish(prob, w, opts.polish_iterations, iters);
    const double viol = residuals(model, w, data).lpNorm<Eigen::Infinity>();
    double div = std::numeric_limits<double>::quiet_NaN();
    if (w.allFinite() && viol <= opts.feasibility_tol) {
      div = bregman(pot, w, w0v);
      if (!found || div < best.divergence) {
        found = true;
        best.w_star = w;
        best.divergence = div;
        best.constraint_violation = viol;
        best.penalty_path = path;
        best.iterations = iters;
        best.best_start = si;
      }
    }
    best.candidate_divergences.push_back(div);
  }
  if (!found)
    throw OracleError("closest_interpolant_nonlinear: no candidate met the feasibility tolerance " +
                      std::to_string(opts.feasibility_tol));
  return best;
}

/// (y - f(w0))ᵀ(JJᵀ)⁻¹(y - f(w0)), the squared Euclidean distance from w0 to
/// the interpolating set under linearized constraints.
inline double distance_to_manifold_estimate(const Model& model, const Dataset& data,
                                            const Eigen::Ref<const ParamVector>& w0) {
  const Matrix J = model.jacobian(w0, data.inputs);
  const Vector r = residuals(model, w0, data);
  if (r.lpNorm<Eigen::Infinity>() == 0.0) return 0.0;
  const Matrix G = J * J.transpose();
  Eigen::LDLT<Matrix> ldlt(G);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14)
    throw DegenerateDataError("distance_to_manifold_estimate: singular Jacobian Gram matrix");
  return r.dot(ldlt.solve(r));
}

}  // namespace smdlab
