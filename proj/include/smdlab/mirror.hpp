#pragma once

// Potentials and the geometry they induce: mirror maps, their inverses and
// Bregman divergences. Two families are supported, the normalized q-norm
// potential (1/q)·Σ|w_j|^q with q > 1 and the negative entropy Σ w_j log w_j.

#include "smdlab/types.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace smdlab {

/// Default exponent used as a stand-in for the (non-smooth) l1 potential.
inline constexpr double kL1SurrogateQ = 1.1;

struct Potential {
  enum class Kind { QNorm, NegEntropy };

  Kind kind = Kind::QNorm;
  double q = 2.0;

  static Potential qnorm(double q) {
    if (!(q > 1.0) || !std::isfinite(q)) {
      throw ArgumentError("q-norm potential requires finite q > 1, got " + std::to_string(q));
    }
    return Potential{Kind::QNorm, q};
  }
  static Potential entropy() { return Potential{Kind::NegEntropy, 1.0}; }

  bool is_entropy() const { return kind == Kind::NegEntropy; }
  bool is_euclidean() const { return kind == Kind::QNorm && q == 2.0; }

  /// Short label, "q=1.1" or "entropy". Parsed back by `parse`.
  std::string label() const {
    if (is_entropy()) return "entropy";
    std::ostringstream os;
    os << "q=" << q;
    return os.str();
  }

  static Potential parse(const std::string& text) {
    if (text == "entropy") return entropy();
    std::string body = text.rfind("q=", 0) == 0 ? text.substr(2) : text;
    std::size_t used = 0;
    double q = 0.0;
    try {
      q = std::stod(body, &used);
    } catch (const std::exception&) {
      throw ArgumentError("cannot parse potential '" + text + "'");
    }
    if (used != body.size()) throw ArgumentError("cannot parse potential '" + text + "'");
    return qnorm(q);
  }

  friend bool operator==(const Potential&, const Potential&) = default;
};

namespace detail {

// sign(x)·|x|^k evaluated in log-magnitude form; 0 maps to 0.
inline double signed_pow(double x, double k) {
  if (x == 0.0) return 0.0;
  const double mag = std::exp(k * std::log(std::abs(x)));
  return std::signbit(x) ? -mag : mag;
}

inline void check_entropy_domain(const Eigen::Ref<const Vector>& w, const char* what) {
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    if (!(w[j] > 0.0) || !std::isfinite(w[j])) {
      throw DomainError(std::string(what) + ": negative entropy needs strictly positive entries (index " +
                        std::to_string(j) + " = " + std::to_string(w[j]) + ")");
    }
  }
}

// (1+r)^q - 1 - q·r, accurate for small |r|.
inline double qnorm_bregman_kernel(double q, double r) {
  if (std::abs(r) < 1e-2) {
    double coeff = q;  // C(q, 1)
    double rk = r;
    double sum = 0.0;
    for (int k = 2; k <= 12; ++k) {
      coeff *= (q - (k - 1)) / k;
      rk *= r;
      sum += coeff * rk;
    }
    return sum;
  }
  return std::expm1(q * std::log1p(r)) - q * r;
}

// (1+r)·log(1+r) - r, accurate for small |r|.
inline double entropy_bregman_kernel(double r) {
  if (std::abs(r) < 1e-2) {
    double rk = r;
    double sum = 0.0;
    for (int k = 2; k <= 12; ++k) {
      rk *= r;
      const double term = rk / (static_cast<double>(k) * (k - 1));
      sum += (k % 2 == 0) ? term : -term;
    }
    return sum;
  }
  return (1.0 + r) * std::log1p(r) - r;
}

// One-coordinate Bregman divergence D(a, b) of the q-norm potential.
inline double qnorm_bregman_1d(double q, double a, double b) {
  if (b == 0.0) return std::pow(std::abs(a), q) / q;
  const double r = (a - b) / b;
  if (r > -1.0) {
    const double d = std::pow(std::abs(b), q) / q * qnorm_bregman_kernel(q, r);
    return d > 0.0 ? d : 0.0;
  }
  // a is zero or on the opposite side of the origin from b.
  const double d = std::pow(std::abs(a), q) / q - std::pow(std::abs(b), q) / q - signed_pow(b, q - 1.0) * (a - b);
  return d > 0.0 ? d : 0.0;
}

inline double entropy_bregman_1d(double a, double b) {
  const double d = b * entropy_bregman_kernel((a - b) / b);
  return d > 0.0 ? d : 0.0;
}

}  // namespace detail

/// ψ(w).
inline double potential_value(const Potential& pot, const Eigen::Ref<const Vector>& w) {
  if (pot.is_entropy()) {
    detail::check_entropy_domain(w, "potential_value");
    return (w.array() * w.array().log()).sum();
  }
  if (pot.is_euclidean()) return 0.5 * w.squaredNorm();
  double sum = 0.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) sum += std::pow(std::abs(w[j]), pot.q);
  return sum / pot.q;
}

/// ∇ψ(w), componentwise.
inline DualVector mirror_map(const Potential& pot, const Eigen::Ref<const Vector>& w) {
  if (pot.is_entropy()) {
    detail::check_entropy_domain(w, "mirror_map");
    return (w.array().log() + 1.0).matrix();
  }
  if (pot.is_euclidean()) return w;
  DualVector z(w.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) z[j] = detail::signed_pow(w[j], pot.q - 1.0);
  return z;
}

/// (∇ψ)⁻¹(z). Total on R^p for both families.
inline ParamVector inverse_mirror_map(const Potential& pot, const Eigen::Ref<const DualVector>& z) {
  if (pot.is_entropy()) return (z.array() - 1.0).exp().matrix();
  if (pot.is_euclidean()) return z;
  ParamVector w(z.size());
  const double k = 1.0 / (pot.q - 1.0);
  for (Eigen::Index j = 0; j < z.size(); ++j) w[j] = detail::signed_pow(z[j], k);
  return w;
}

/// D_ψ(w, w_from) = ψ(w) - ψ(w_from) - ∇ψ(w_from)ᵀ(w - w_from), summed
/// coordinate by coordinate so that each term stays nonnegative.
inline double bregman(const Potential& pot, const Eigen::Ref<const Vector>& w,
                      const Eigen::Ref<const Vector>& w_from) {
  detail::require_same_size(w.size(), w_from.size(), "bregman");
  if (pot.is_entropy()) {
    detail::check_entropy_domain(w, "bregman");
    detail::check_entropy_domain(w_from, "bregman");
    double sum = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j) sum += detail::entropy_bregman_1d(w[j], w_from[j]);
    return sum;
  }
  if (pot.is_euclidean()) return 0.5 * (w - w_from).squaredNorm();
  double sum = 0.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) sum += detail::qnorm_bregman_1d(pot.q, w[j], w_from[j]);
  return sum;
}

/// Diagonal of the Hessian of ψ at w. Infinite where ψ is not twice
/// differentiable (q < 2 at zero).
inline Vector potential_curvature(const Potential& pot, const Eigen::Ref<const Vector>& w) {
  if (pot.is_entropy()) return w.array().inverse().matrix();
  Vector h(w.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    const double a = std::abs(w[j]);
    if (a == 0.0) {
      h[j] = pot.q < 2.0 ? std::numeric_limits<double>::infinity() : (pot.q == 2.0 ? 1.0 : 0.0);
    } else {
      h[j] = (pot.q - 1.0) * std::exp((pot.q - 2.0) * std::log(a));
    }
  }
  return h;
}

/// Diagonal Jacobian of the inverse mirror map at z, i.e. 1/ψ''(w(z)).
inline Vector inverse_map_derivative(const Potential& pot, const Eigen::Ref<const DualVector>& z) {
  if (pot.is_entropy()) return (z.array() - 1.0).exp().matrix();
  Vector d(z.size());
  const double k = (2.0 - pot.q) / (pot.q - 1.0);
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double a = std::abs(z[j]);
    if (a == 0.0) {
      d[j] = k > 0.0 ? 0.0 : (k == 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
    } else {
      d[j] = std::exp(k * std::log(a)) / (pot.q - 1.0);
    }
  }
  return d;
}

/// Convex conjugate ψ*(z); its gradient is the inverse mirror map.
inline double conjugate_value(const Potential& pot, const Eigen::Ref<const DualVector>& z) {
  if (pot.is_entropy()) return (z.array() - 1.0).exp().sum();
  const double qs = pot.q / (pot.q - 1.0);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < z.size(); ++j) sum += std::pow(std::abs(z[j]), qs);
  return sum / qs;
}

}  // namespace smdlab
