#pragma once

// Problem data: the symmetric coefficient matrix A(x), the bounded
// coefficient alpha(x, t) and the source f, with their structural
// hypotheses as runtime checks. Also the two pointwise inequalities for
// F(xi) = <A xi, xi>^{s/2} that the convexity arguments rely on.

#include "apx/error.hpp"
#include "apx/expr.hpp"
#include "apx/geometry.hpp"
#include "apx/varexp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace apx {

using SpatialFunction = std::function<double(double, double)>;
using StateFunction = std::function<double(double, double, double)>;

/// Wraps an expression over (x, y).
inline SpatialFunction spatial_function(Expression e) {
  return [e = std::move(e)](double x, double y) {
    const double slots[2] = {x, y};
    return e.evaluate(slots);
  };
}

/// Wraps an expression over (x, y, t).
inline StateFunction state_function(Expression e) {
  return [e = std::move(e)](double x, double y, double t) {
    const double slots[3] = {x, y, t};
    return e.evaluate(slots);
  };
}

inline SpatialFunction constant_function(double c) {
  return [c](double, double) { return c; };
}

/// Symmetric 2x2 matrix, upper triangle stored.
struct Sym2 {
  double a11 = 1.0;
  double a12 = 0.0;
  double a22 = 1.0;

  Vec2 apply(const Vec2& v) const {
    return {a11 * v[0] + a12 * v[1], a12 * v[0] + a22 * v[1]};
  }
  /// <A xi, xi>
  double quadratic(const Vec2& v) const {
    return a11 * v[0] * v[0] + 2.0 * a12 * v[0] * v[1] + a22 * v[1] * v[1];
  }
  /// <A u, v>
  double bilinear(const Vec2& u, const Vec2& v) const {
    auto au = apply(u);
    return au[0] * v[0] + au[1] * v[1];
  }
  double min_eigenvalue() const {
    double mean = 0.5 * (a11 + a22);
    double radius = std::hypot(0.5 * (a11 - a22), a12);
    return mean - radius;
  }
};

/// A(x) with entries a11, a12, a22; a21 = a12.
class MatrixField {
public:
  MatrixField() : MatrixField(constant_function(1.0), constant_function(0.0), constant_function(1.0)) {}
  MatrixField(SpatialFunction a11, SpatialFunction a12, SpatialFunction a22)
      : a11_(std::move(a11)), a12_(std::move(a12)), a22_(std::move(a22)) {}

  static MatrixField identity() { return MatrixField(); }

  Sym2 operator()(double x, double y) const { return {a11_(x, y), a12_(x, y), a22_(x, y)}; }

  std::vector<Sym2> sample(const FunctionSpace& space) const {
    std::vector<Sym2> out;
    out.reserve(space.num_points());
    for (const auto& pt : space.points()) out.push_back((*this)(pt.x, pt.y));
    return out;
  }

  /// Smallest eigenvalue of A over the quadrature points.
  double min_eigenvalue(const FunctionSpace& space) const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& a : sample(space)) m = std::min(m, a.min_eigenvalue());
    return m;
  }

  /// Throws unless <A xi, xi> >= |xi|^2 at every quadrature point.
  void check_ellipticity(const FunctionSpace& space) const {
    for (const auto& pt : space.points()) {
      auto a = (*this)(pt.x, pt.y);
      if (!(a.min_eigenvalue() >= 1.0 - 1e-12)) {
        std::ostringstream msg;
        msg << "matrix coefficient is not uniformly elliptic at (" << pt.x << ", " << pt.y
            << "): smallest eigenvalue " << a.min_eigenvalue() << " < 1";
        throw InvariantViolation(msg.str());
      }
    }
  }

private:
  SpatialFunction a11_, a12_, a22_;
};

/// alpha(x, t) with declared bounds 0 < lambda_lo <= alpha <= lambda_hi.
class AlphaCoefficient {
public:
  AlphaCoefficient(StateFunction alpha, double lambda_lo, double lambda_hi,
                   bool depends_on_state = true)
      : alpha_(std::move(alpha)), lambda_lo_(lambda_lo), lambda_hi_(lambda_hi),
        depends_on_state_(depends_on_state) {
    if (!(lambda_lo_ > 0.0) || !(lambda_lo_ <= lambda_hi_)) {
      throw InvariantViolation("alpha bounds must satisfy 0 < lambda <= Lambda");
    }
  }

  static AlphaCoefficient from_expression(const Expression& e, double lambda_lo,
                                          double lambda_hi) {
    return AlphaCoefficient(state_function(e), lambda_lo, lambda_hi, e.uses_variable("t"));
  }

  static AlphaCoefficient constant(double value) {
    return AlphaCoefficient([value](double, double, double) { return value; }, value, value,
                            false);
  }

  double operator()(double x, double y, double t) const { return alpha_(x, y, t); }
  double lambda_lo() const noexcept { return lambda_lo_; }
  double lambda_hi() const noexcept { return lambda_hi_; }
  bool depends_on_state() const noexcept { return depends_on_state_; }

  /// alpha(x_q, v(x_q)) at every quadrature point.
  std::vector<double> sample(const FunctionSpace& space, const std::vector<double>& v_samples) const {
    std::vector<double> out(space.num_points());
    const auto& pts = space.points();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha_(pts[i].x, pts[i].y, v_samples[i]);
    return out;
  }

  /// Spot-checks the declared bounds at every quadrature point and the states
  /// t = +-t_check (j / levels)^3, j = 0..levels.
  void check_bounds(const FunctionSpace& space, double t_check = 1e3, int levels = 20) const {
    std::vector<double> states{0.0};
    if (depends_on_state_) {
      for (int j = 1; j <= levels; ++j) {
        double s = static_cast<double>(j) / levels;
        states.push_back(t_check * s * s * s);
        states.push_back(-t_check * s * s * s);
      }
    }
    for (const auto& pt : space.points()) {
      for (double t : states) {
        double a = alpha_(pt.x, pt.y, t);
        if (!(a >= lambda_lo_ && a <= lambda_hi_)) {
          std::ostringstream msg;
          msg << "alpha(" << pt.x << ", " << pt.y << ", " << t << ") = " << a
              << " violates the declared bounds [" << lambda_lo_ << ", " << lambda_hi_ << "]";
          throw InvariantViolation(msg.str());
        }
      }
    }
  }

private:
  StateFunction alpha_;
  double lambda_lo_;
  double lambda_hi_;
  bool depends_on_state_;
};

/// Right-hand side f, either a function of (x, y) or a P1 field.
class SourceTerm {
public:
  SourceTerm() : source_(constant_function(0.0)) {}
  explicit SourceTerm(SpatialFunction f) : source_(std::move(f)) {}
  explicit SourceTerm(DiscreteField f) : source_(std::move(f)) {}

  static SourceTerm constant(double c) { return SourceTerm(constant_function(c)); }

  std::vector<double> sample(const FunctionSpace& space) const {
    std::vector<double> out;
    if (const auto* fn = std::get_if<SpatialFunction>(&source_)) {
      out = space.sample(*fn);
    } else {
      const auto& field = std::get<DiscreteField>(source_);
      if (&field.mesh() != &space.mesh()) {
        throw InvariantViolation("source field lives on a different mesh");
      }
      out = space.sample(field);
    }
    for (double v : out) {
      if (!std::isfinite(v)) throw InvariantViolation("source term is not finite at a quadrature point");
    }
    return out;
  }

  /// Integral of |f|^{p'(x)}.
  double conjugate_modular(const FunctionSpace& space, const ExponentField& p) const {
    return modular(sample(space), p.conjugate_samples(), space.weights());
  }

private:
  std::variant<SpatialFunction, DiscreteField> source_;
};

/// Clarkson-type inequality for s >= 2:
///   lhs = (F(xi1) + F(xi2)) / 2
///   rhs = F((xi1 + xi2) / 2) + F((xi1 - xi2) / 2)
/// with F(xi) = <A xi, xi>^{s/2}. Expected lhs >= rhs.
inline InequalitySides check_clarkson(const Vec2& xi1, const Vec2& xi2, const Sym2& a, double s) {
  auto f = [&](const Vec2& v) { return std::pow(a.quadratic(v), 0.5 * s); };
  Vec2 half_sum{0.5 * (xi1[0] + xi2[0]), 0.5 * (xi1[1] + xi2[1])};
  Vec2 half_diff{0.5 * (xi1[0] - xi2[0]), 0.5 * (xi1[1] - xi2[1])};
  return {0.5 * (f(xi1) + f(xi2)), f(half_sum) + f(half_diff)};
}

/// Gradient inequality for F(xi) = <A xi, xi>^{s/2}, s >= 2:
///   lhs = F(xi2)
///   rhs = F(xi1) + s <A xi1, xi1>^{(s-2)/2} <A xi1, xi2 - xi1>
/// Expected lhs >= rhs. For xi1 = 0 the second term is 0.
inline InequalitySides check_monotonicity(const Vec2& xi1, const Vec2& xi2, const Sym2& a,
                                          double s) {
  double q1 = a.quadratic(xi1);
  double q2 = a.quadratic(xi2);
  double term = 0.0;
  if (q1 > 0.0) {
    Vec2 d{xi2[0] - xi1[0], xi2[1] - xi1[1]};
    term = s * std::pow(q1, 0.5 * (s - 2.0)) * a.bilinear(xi1, d);
  }
  return {std::pow(q2, 0.5 * s), std::pow(q1, 0.5 * s) + term};
}

} // namespace apx
