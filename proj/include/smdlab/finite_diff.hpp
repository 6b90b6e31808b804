#pragma once

#include "smdlab/types.hpp"

#include <algorithm>
#include <cmath>

namespace smdlab {

inline constexpr double kFiniteDiffStep = 1e-5;

/// Central-difference gradient of a scalar function of a vector.
template <typename F>
Vector fd_gradient(const F& f, const Eigen::Ref<const Vector>& x, double h = kFiniteDiffStep) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double orig = xp[j];
    xp[j] = orig + h;
    const double fp = f(xp);
    xp[j] = orig - h;
    const double fm = f(xp);
    xp[j] = orig;
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Central-difference Jacobian of a vector function; column j holds ∂F/∂x_j.
template <typename F>
Matrix fd_jacobian(const F& f, const Eigen::Ref<const Vector>& x, double h = kFiniteDiffStep) {
  Matrix jac;
  Vector xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double orig = xp[j];
    xp[j] = orig + h;
    const Vector fp = f(xp);
    xp[j] = orig - h;
    const Vector fm = f(xp);
    xp[j] = orig;
    if (jac.size() == 0) jac.resize(fp.size(), x.size());
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

/// ‖analytic - numeric‖_∞ / max(1, ‖analytic‖_∞).
inline double fd_relative_error(const Eigen::Ref<const Vector>& analytic, const Eigen::Ref<const Vector>& numeric) {
  detail::require_same_size(analytic.size(), numeric.size(), "fd_relative_error");
  if (analytic.size() == 0) return 0.0;
  const double denom = std::max(1.0, analytic.lpNorm<Eigen::Infinity>());
  return (analytic - numeric).lpNorm<Eigen::Infinity>() / denom;
}

}  // namespace smdlab
