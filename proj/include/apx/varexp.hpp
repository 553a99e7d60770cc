#pragma once

// Variable-exponent Lebesgue numerics on the discrete P1 space: modulars,
// Luxemburg norms, the conjugate exponent, the Hölder pairing and the
// norm-modular relations.
//
// Every integral is a quadrature sum over the points of a FunctionSpace, and
// p_minus / p_plus are taken over the same point set.

#include "apx/error.hpp"
#include "apx/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace apx {

enum class ExponentMode {
  solver,      // p_minus > 2
  diagnostic,  // p_minus >= 2, admits p == 2
};

class ExponentField {
public:
  ExponentField(const FunctionSpace& space, std::function<double(double, double)> p,
                ExponentMode mode = ExponentMode::solver)
      : evaluator_(std::move(p)), samples_(space.sample(evaluator_)) {
    p_minus_ = std::numeric_limits<double>::infinity();
    p_plus_ = -std::numeric_limits<double>::infinity();
    for (double v : samples_) {
      if (!std::isfinite(v)) throw InvariantViolation("exponent is not finite at a quadrature point");
      p_minus_ = std::min(p_minus_, v);
      p_plus_ = std::max(p_plus_, v);
    }
    if (mode == ExponentMode::solver && !(p_minus_ > 2.0)) {
      throw InvariantViolation("exponent must satisfy p > 2 (sampled p_minus = " +
                               std::to_string(p_minus_) + ")");
    }
    if (mode == ExponentMode::diagnostic && !(p_minus_ >= 2.0)) {
      throw InvariantViolation("exponent must satisfy p >= 2 (sampled p_minus = " +
                               std::to_string(p_minus_) + ")");
    }
    conjugate_.resize(samples_.size());
    conj_minus_ = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      conjugate_[i] = samples_[i] / (samples_[i] - 1.0);
      conj_minus_ = std::min(conj_minus_, conjugate_[i]);
    }
  }

  static ExponentField constant(const FunctionSpace& space, double p,
                                ExponentMode mode = ExponentMode::solver) {
    return ExponentField(space, [p](double, double) { return p; }, mode);
  }

  double operator()(double x, double y) const { return evaluator_(x, y); }
  const std::vector<double>& samples() const noexcept { return samples_; }
  double p_minus() const noexcept { return p_minus_; }
  double p_plus() const noexcept { return p_plus_; }

  /// p'(x) = p(x) / (p(x) - 1) at the quadrature points.
  const std::vector<double>& conjugate_samples() const noexcept { return conjugate_; }
  double conjugate_minus() const noexcept { return conj_minus_; }

private:
  std::function<double(double, double)> evaluator_;
  std::vector<double> samples_;
  std::vector<double> conjugate_;
  double p_minus_ = 0.0;
  double p_plus_ = 0.0;
  double conj_minus_ = 0.0;
};

namespace detail {

inline void check_sizes(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) {
    throw InvariantViolation("sample, exponent and weight arrays differ in length");
  }
}

} // namespace detail

/// Quadrature modular: sum of w_i |v_i|^{p_i}.
inline double modular(std::span<const double> values, std::span<const double> exponents,
                      std::span<const double> weights) {
  detail::check_sizes(values.size(), exponents.size(), weights.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0) sum += weights[i] * std::pow(std::abs(values[i]), exponents[i]);
  }
  return sum;
}

/// inf{mu > 0 : modular(v / mu) <= 1} by bracketing and bisection.
///
/// rel_tol = 0 bisects until the bracket cannot shrink any further in double
/// precision.
inline double luxemburg_norm(std::span<const double> values, std::span<const double> exponents,
                             std::span<const double> weights, double rel_tol = 1e-12) {
  const double rho = modular(values, exponents, weights);
  if (rho == 0.0) return 0.0;
  double p_lo = std::numeric_limits<double>::infinity();
  double p_hi = 0.0;
  for (double p : exponents) {
    p_lo = std::min(p_lo, p);
    p_hi = std::max(p_hi, p);
  }
  auto phi = [&](double mu) {
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] != 0.0) sum += weights[i] * std::pow(std::abs(values[i]) / mu, exponents[i]);
    }
    return sum;
  };
  // From the modular relations the norm lies between rho^{1/p+} and rho^{1/p-}.
  double mu = std::max({rho, std::pow(rho, 1.0 / p_hi), std::pow(rho, 1.0 / p_lo)});
  double lo = mu;
  double hi = mu;
  if (phi(mu) > 1.0) {
    do {
      lo = hi;
      hi *= 2.0;
    } while (phi(hi) > 1.0);
  } else {
    do {
      hi = lo;
      lo *= 0.5;
    } while (phi(lo) <= 1.0);
  }
  // invariant: phi(lo) > 1 >= phi(hi)
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) return hi;
    if (phi(mid) > 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= rel_tol * hi) return hi;
  }
  throw NonConvergence("Luxemburg norm bisection did not converge in 200 steps");
}

/// rho_p(u) = integral of |u|^{p(x)}.
inline double modular(const FunctionSpace& space, const DiscreteField& u, const ExponentField& p) {
  auto samples = space.sample(u);
  return modular(samples, p.samples(), space.weights());
}

/// |u|^{p(x)} per element, with the element-wise constant P1 gradient.
inline std::vector<double> gradient_magnitude_samples(const FunctionSpace& space,
                                                      const DiscreteField& u) {
  const std::size_t nq = space.points_per_element();
  std::vector<double> out(space.num_points());
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    auto g = space.gradient(u, e);
    double norm = std::hypot(g[0], g[1]);
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(e * nq), nq, norm);
  }
  return out;
}

/// Integral of |grad u|^{p(x)}.
inline double gradient_modular(const FunctionSpace& space, const DiscreteField& u,
                               const ExponentField& p) {
  return modular(gradient_magnitude_samples(space, u), p.samples(), space.weights());
}

inline double luxemburg_norm(const FunctionSpace& space, const DiscreteField& u,
                             const ExponentField& p, double rel_tol = 1e-12) {
  return luxemburg_norm(space.sample(u), p.samples(), space.weights(), rel_tol);
}

/// The W_0^{1,p(.)} norm: Luxemburg norm of |grad u|.
inline double gradient_luxemburg_norm(const FunctionSpace& space, const DiscreteField& u,
                                      const ExponentField& p, double rel_tol = 1e-12) {
  return luxemburg_norm(gradient_magnitude_samples(space, u), p.samples(), space.weights(),
                        rel_tol);
}

enum class ModularRelation { above_one, below_one, unit };

struct ModularRelationsReport {
  double norm = 0.0;
  double modular = 0.0;
  double p_minus = 0.0;
  double p_plus = 0.0;
  ModularRelation relation = ModularRelation::unit;
  double lower_bound = 0.0;
  double upper_bound = 0.0;
  // (modular - lower) and (upper - modular), divided by max(1, bound).
  double lower_slack = 0.0;
  double upper_slack = 0.0;

  double min_slack() const { return std::min(lower_slack, upper_slack); }
  bool passed(double tol = 1e-12) const { return min_slack() >= -tol; }
};

/// Checks the norm-modular relations
///   |u| > 1  =>  |u|^{p-} <= rho(u) <= |u|^{p+}
///   |u| < 1  =>  |u|^{p+} <= rho(u) <= |u|^{p-}
///   |u| = 1  <=> rho(u) = 1
/// for sampled values. The norm is computed to full double precision.
inline ModularRelationsReport check_modular_relations(std::span<const double> values,
                                                      std::span<const double> exponents,
                                                      std::span<const double> weights) {
  ModularRelationsReport r;
  r.p_minus = *std::min_element(exponents.begin(), exponents.end());
  r.p_plus = *std::max_element(exponents.begin(), exponents.end());
  r.modular = modular(values, exponents, weights);
  r.norm = luxemburg_norm(values, exponents, weights, 0.0);
  const double unit_tol = 8.0 * std::numeric_limits<double>::epsilon();
  if (std::abs(r.norm - 1.0) <= unit_tol) {
    r.relation = ModularRelation::unit;
    r.lower_bound = 1.0;
    r.upper_bound = 1.0;
    // rho(u) = 1 up to the bracket resolution of the norm.
    double allowance = r.p_plus * unit_tol;
    r.lower_slack = r.modular - (1.0 - allowance);
    r.upper_slack = (1.0 + allowance) - r.modular;
    return r;
  }
  if (r.norm > 1.0) {
    r.relation = ModularRelation::above_one;
    r.lower_bound = std::pow(r.norm, r.p_minus);
    r.upper_bound = std::pow(r.norm, r.p_plus);
  } else {
    r.relation = ModularRelation::below_one;
    r.lower_bound = std::pow(r.norm, r.p_plus);
    r.upper_bound = std::pow(r.norm, r.p_minus);
  }
  r.lower_slack = (r.modular - r.lower_bound) / std::max(1.0, r.lower_bound);
  r.upper_slack = (r.upper_bound - r.modular) / std::max(1.0, r.upper_bound);
  return r;
}

inline ModularRelationsReport check_modular_relations(const FunctionSpace& space,
                                                      const DiscreteField& u,
                                                      const ExponentField& p) {
  return check_modular_relations(space.sample(u), p.samples(), space.weights());
}

struct InequalitySides {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Hölder pairing: lhs = |integral of u v|,
/// rhs = (1/p- + 1/p'-) |u|_{p(.)} |v|_{p'(.)}. Expected lhs <= rhs.
inline InequalitySides holder_pairing(const FunctionSpace& space, const DiscreteField& u,
                                      const DiscreteField& v, const ExponentField& p) {
  auto us = space.sample(u);
  auto vs = space.sample(v);
  double integral = 0.0;
  for (std::size_t i = 0; i < us.size(); ++i) integral += space.weights()[i] * us[i] * vs[i];
  double norm_u = luxemburg_norm(us, p.samples(), space.weights());
  double norm_v = luxemburg_norm(vs, p.conjugate_samples(), space.weights());
  double factor = 1.0 / p.p_minus() + 1.0 / p.conjugate_minus();
  return {std::abs(integral), factor * norm_u * norm_v};
}

} // namespace apx
