#pragma once

// Fixed-point driver for the full problem: relaxed Picard iteration
// v_{k+1} = (1 - theta) v_k + theta T(v_k), v_0 = 0, where T(v) solves the
// problem with alpha(x, .) frozen at v. Each iterate is monitored against the
// a-priori bounds
//
//   integral |grad T(v)|^p <= C,   integral |T(v)|^p <= C1 = C / lambda1,
//
// with C = C_eps integral |f|^{p'} / (lambda - eps / lambda1) and
// C_eps = eps^{-(p+ - 1)}. lambda1 is estimated numerically by minimizing the
// Rayleigh-type quotient integral |grad u|^p / integral |u|^p.

#include "apx/assembly.hpp"
#include "apx/error.hpp"
#include "apx/geometry.hpp"
#include "apx/inner_solver.hpp"
#include "apx/varexp.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace apx {

/// R(u) = integral |grad u|^{p(x)} / integral |u|^{p(x)}; +inf for u = 0.
inline double rayleigh_quotient(const FunctionSpace& space, const DiscreteField& u,
                                const ExponentField& p) {
  double den = modular(space, u, p);
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  return gradient_modular(space, u, p) / den;
}

struct Lambda1Options {
  int restarts = 4;          // random starts in addition to the linear eigenvector start
  int max_iters = 300;       // descent steps per start
  double rel_tol = 1e-12;    // stop when the relative decrease falls below this
  std::uint64_t seed = 42;
  bool record_probes = false;  // keep every probe quotient in the estimate
};

struct Lambda1Estimate {
  double value = std::numeric_limits<double>::infinity();
  DiscreteField minimizer;
  int restarts_used = 0;
  std::size_t probes_evaluated = 0;
  std::vector<double> probe_values;  // filled when record_probes is set
};

namespace detail {

/// P1 stiffness and quadrature mass matrices over the free nodes.
inline std::pair<SparseMatrix, SparseMatrix> stiffness_and_mass(const FunctionSpace& space) {
  std::vector<Eigen::Triplet<double>> k_trip, m_trip;
  const std::size_t nq = space.points_per_element();
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    const auto& t = space.mesh().triangle(e);
    const auto& g = space.gradients(e);
    const double area = space.mesh().element_area(e);
    for (int r = 0; r < 3; ++r) {
      const int kr = space.free_index(t[r]);
      if (kr < 0) continue;
      for (int c = 0; c < 3; ++c) {
        const int kc = space.free_index(t[c]);
        if (kc < 0) continue;
        k_trip.emplace_back(kr, kc, area * (g[r][0] * g[c][0] + g[r][1] * g[c][1]));
        double m = 0.0;
        for (std::size_t q = 0; q < nq; ++q) {
          const auto& b = space.rule().points[q];
          m += space.weights()[e * nq + q] * b[r] * b[c];
        }
        m_trip.emplace_back(kr, kc, m);
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(space.num_free());
  SparseMatrix k(n, n), m(n, n);
  k.setFromTriplets(k_trip.begin(), k_trip.end());
  m.setFromTriplets(m_trip.begin(), m_trip.end());
  return {std::move(k), std::move(m)};
}

/// Gradient of R over the free nodes, given G = grad modular, M = modular.
inline Eigen::VectorXd rayleigh_gradient(const FunctionSpace& space, const DiscreteField& u,
                                         const ExponentField& p, double g_val, double m_val) {
  const std::size_t nq = space.points_per_element();
  const auto& ps = p.samples();
  const auto& w = space.weights();
  const auto& rule = space.rule();
  Eigen::VectorXd grad_g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space.num_free()));
  Eigen::VectorXd grad_m = grad_g;
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    const auto& t = space.mesh().triangle(e);
    const auto& g = space.gradients(e);
    const auto xi = space.gradient(u, e);
    const double norm = std::hypot(xi[0], xi[1]);
    for (std::size_t q = 0; q < nq; ++q) {
      const std::size_t i = e * nq + q;
      const auto& b = rule.points[q];
      const double uq = b[0] * u[t[0]] + b[1] * u[t[1]] + b[2] * u[t[2]];
      const double cg = norm > 0.0 ? ps[i] * std::pow(norm, ps[i] - 2.0) : 0.0;
      const double cm = uq != 0.0 ? ps[i] * std::pow(std::abs(uq), ps[i] - 2.0) * uq : 0.0;
      for (int j = 0; j < 3; ++j) {
        const int k = space.free_index(t[j]);
        if (k < 0) continue;
        grad_g[k] += w[i] * cg * (xi[0] * g[j][0] + xi[1] * g[j][1]);
        grad_m[k] += w[i] * cm * b[j];
      }
    }
  }
  return (grad_g - (g_val / m_val) * grad_m) / m_val;
}

/// The mu > 0 with modular(u / mu) = 1, by Newton's method in s = log mu on
/// the convex decreasing map s -> sum a_i exp(-p_i s), a_i = w_i |u_i|^{p_i}.
inline double unit_modular_scale(const FunctionSpace& space, const DiscreteField& u,
                                 const ExponentField& p) {
  const auto samples = space.sample(u);
  const auto& ps = p.samples();
  std::vector<double> a(samples.size());
  double rho = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    a[i] = samples[i] != 0.0 ? space.weights()[i] * std::pow(std::abs(samples[i]), ps[i]) : 0.0;
    rho += a[i];
  }
  if (rho == 0.0) return 0.0;
  double s = std::log(rho) / (rho > 1.0 ? p.p_plus() : p.p_minus());
  for (int it = 0; it < 100; ++it) {
    double f = -1.0;
    double df = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] == 0.0) continue;
      const double term = a[i] * std::exp(-ps[i] * s);
      f += term;
      df -= ps[i] * term;
    }
    const double step = f / df;
    s -= step;
    if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(s))) break;
  }
  return std::exp(s);
}

} // namespace detail

/// Estimates lambda1 = inf R(u) over nonzero discrete fields.
///
/// Starts: the first eigenvector of the linear (p = 2) stiffness/mass pair,
/// then `restarts` random non-negative fields. Each start runs descent
/// preconditioned by the P1 stiffness matrix, rescaling every iterate to
/// unit modular. The returned value is the smallest quotient of every probe
/// evaluated, so it never exceeds R of any of them.
inline Lambda1Estimate estimate_lambda1(const FunctionSpace& space, const ExponentField& p,
                                        const Lambda1Options& opts = {}) {
  if (opts.restarts < 1) throw ConfigError("lambda1 restarts must be >= 1");
  if (opts.max_iters < 1) throw ConfigError("lambda1 max_iters must be >= 1");
  if (space.num_free() == 0) {
    throw InvariantViolation("degenerate mesh: no interior nodes for the lambda1 estimate");
  }
  auto [stiff, mass] = detail::stiffness_and_mass(space);
  Eigen::SimplicialLDLT<SparseMatrix> kinv(stiff);
  if (kinv.info() != Eigen::Success) throw LinearSolveFailure("stiffness factorization failed");

  Lambda1Estimate best;
  auto probe = [&](const DiscreteField& u) {
    double r = rayleigh_quotient(space, u, p);
    ++best.probes_evaluated;
    if (opts.record_probes) best.probe_values.push_back(r);
    if (r < best.value) {
      best.value = r;
      best.minimizer = u;
    }
    return r;
  };
  auto normalize = [&](DiscreteField u) {
    double mu = detail::unit_modular_scale(space, u, p);
    if (mu > 0.0) u *= 1.0 / mu;
    return u;
  };

  auto descend = [&](DiscreteField u) {
    u = normalize(std::move(u));
    double r = probe(u);
    double t0 = 1.0;
    for (int it = 0; it < opts.max_iters; ++it) {
      const double g_val = gradient_modular(space, u, p);
      const double m_val = modular(space, u, p);
      Eigen::VectorXd grad = detail::rayleigh_gradient(space, u, p, g_val, m_val);
      Eigen::VectorXd d = -kinv.solve(grad);
      const double slope = grad.dot(d);
      if (!(slope < 0.0)) break;
      double t = t0;
      bool accepted = false;
      double r_new = r;
      DiscreteField trial;
      for (int bt = 0; bt < 40; ++bt) {
        trial = u;
        for (std::size_t k = 0; k < space.num_free(); ++k) {
          trial[space.free_nodes()[k]] += t * d[static_cast<Eigen::Index>(k)];
        }
        trial = normalize(std::move(trial));
        r_new = probe(trial);
        if (r_new <= r + 1e-4 * t * slope) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) break;
      const double decrease = r - r_new;
      u = std::move(trial);
      r = r_new;
      t0 = std::min(1.0, 2.0 * t);
      if (decrease <= opts.rel_tol * std::abs(r)) break;
    }
  };

  // Linear eigenvector by inverse iteration.
  {
    Eigen::VectorXd x = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(space.num_free()));
    for (int it = 0; it < 500; ++it) {
      Eigen::VectorXd y = kinv.solve(mass * x);
      y /= std::sqrt(y.dot(mass * y));
      const double change = (y - x).lpNorm<Eigen::Infinity>();
      x = std::move(y);
      if (change < 1e-13) break;
    }
    if (x.sum() < 0.0) x = -x;
    descend(space.extend_from_free(x));
  }
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int s = 0; s < opts.restarts; ++s) {
    std::vector<double> coeffs(space.num_free());
    for (double& c : coeffs) c = unit(rng);
    descend(space.extend_from_free(coeffs));
    ++best.restarts_used;
  }
  // R is not scale invariant for variable p; scan the scale of the best field.
  const DiscreteField base = best.minimizer;
  for (int k = -8; k <= 8; ++k) {
    if (k == 0) continue;
    probe(std::ldexp(1.0, k) * base);
  }
  return best;
}

struct BoundConstants {
  double epsilon = 0.0;
  double c_epsilon = 0.0;
  double c = 0.0;   // bound on integral |grad T(v)|^p
  double c1 = 0.0;  // bound on integral |T(v)|^p
  double source_conjugate_modular = 0.0;
};

class NonpositiveDenominator : public InvariantViolation {
public:
  explicit NonpositiveDenominator(const std::string& what) : InvariantViolation(what) {}
};

/// eps = min(1, lambda * lambda1) / 2, C_eps = eps^{-(p+ - 1)},
/// C = C_eps * source_conjugate_modular / (lambda - eps / lambda1), C1 = C / lambda1.
inline BoundConstants lemma2_constants(double source_conjugate_modular, double p_plus,
                                        double lambda_lo, double lambda1) {
  if (!(lambda1 > 0.0) || !(lambda_lo > 0.0)) {
    throw NonpositiveDenominator("bound constants need lambda > 0 and lambda1 > 0 (lambda1 = " +
                                 std::to_string(lambda1) + ")");
  }
  BoundConstants k;
  k.source_conjugate_modular = source_conjugate_modular;
  k.epsilon = 0.5 * std::min(1.0, lambda_lo * lambda1);
  const double denominator = lambda_lo - k.epsilon / lambda1;
  if (!(denominator > 0.0)) {
    throw NonpositiveDenominator("lambda - eps / lambda1 is not positive");
  }
  k.c_epsilon = std::pow(k.epsilon, -(p_plus - 1.0));
  k.c = k.c_epsilon * source_conjugate_modular / denominator;
  k.c1 = k.c / lambda1;
  return k;
}

inline BoundConstants lemma2_constants(const ProblemData& data, double lambda1) {
  return lemma2_constants(data.source().conjugate_modular(data.space(), data.exponent()),
                          data.exponent().p_plus(), data.alpha().lambda_lo(), lambda1);
}

struct OuterOptions {
  double fix_tol = 1e-8;  // on the Luxemburg norm of v_{k+1} - v_k
  int max_outer = 50;
  double theta = 1.0;
  double min_theta = 1.0 / 16.0;
  bool monitor_bounds = true;
  double bound_slack = 1e-6;
  Lambda1Options lambda1;

  void validate() const {
    if (!(fix_tol > 0.0) || max_outer < 1 || !(theta > 0.0 && theta <= 1.0) ||
        !(min_theta > 0.0 && min_theta <= theta)) {
      throw ConfigError("invalid outer solver options");
    }
  }
};

struct OuterIterate {
  int index = 0;
  double theta = 1.0;
  double diff_norm = 0.0;      // Luxemburg norm of v_{k+1} - v_k
  double diff_modular = 0.0;
  double gradient_modular = 0.0;  // of T(v_k)
  double modular = 0.0;           // of T(v_k)
  double iterate_modular = 0.0;   // of v_k
  double energy = 0.0;            // frozen energy at T(v_k)
  double lemma2_slack = 0.0;      // C - gradient_modular
  double remark1_slack = 0.0;     // C1 - modular
  bool ball_invariant = true;     // modular(v_k) <= C1 + slack
  int inner_iterations = 0;
  InnerStatus inner_status = InnerStatus::converged;
};

enum class OuterStatus { converged, max_outer_exceeded, inner_failed };

inline const char* to_string(OuterStatus s) {
  switch (s) {
    case OuterStatus::converged: return "converged";
    case OuterStatus::max_outer_exceeded: return "max_outer_exceeded";
    case OuterStatus::inner_failed: return "inner_failed";
  }
  return "unknown";
}

struct SolveReport {
  OuterStatus status = OuterStatus::max_outer_exceeded;
  int outer_iterations = 0;
  std::vector<OuterIterate> iterations;
  bool bounds_monitored = false;
  double lambda1_estimate = 0.0;
  BoundConstants constants;
  bool self_consistent = false;
  double self_consistency_residual = 0.0;

  bool converged() const { return status == OuterStatus::converged; }

  bool bounds_hold(double slack = 1e-6) const {
    for (const auto& it : iterations) {
      if (it.lemma2_slack < -slack || it.remark1_slack < -slack || !it.ball_invariant) return false;
    }
    return true;
  }
};

struct FixedPointResult {
  DiscreteField u;
  SolveReport report;
};

/// Max-norm of the weak residual with alpha frozen at u itself.
inline double self_consistency_residual(const std::shared_ptr<const ProblemData>& data,
                                        const DiscreteField& u) {
  Eigen::VectorXd r = FrozenProblem(data, u).residual(u);
  return r.size() ? r.lpNorm<Eigen::Infinity>() : 0.0;
}

/// True iff the weak identity holds with alpha frozen at u, componentwise
/// within tol on the free hat functions.
inline bool self_consistency_check(const std::shared_ptr<const ProblemData>& data,
                                   const DiscreteField& u, double tol) {
  return self_consistency_residual(data, u) <= tol;
}

inline FixedPointResult fixed_point_solve(const std::shared_ptr<const ProblemData>& data,
                                          const InnerOptions& inner = {},
                                          const OuterOptions& outer = {}) {
  outer.validate();
  inner.validate();
  const auto& space = data->space();
  const auto& p = data->exponent();

  FixedPointResult result{space.zero_field(), {}};
  auto& report = result.report;
  if (outer.monitor_bounds) {
    report.bounds_monitored = true;
    report.lambda1_estimate = estimate_lambda1(space, p, outer.lambda1).value;
    report.constants = lemma2_constants(*data, report.lambda1_estimate);
  }

  DiscreteField v = space.zero_field();
  DiscreteField warm = space.zero_field();
  double theta = outer.theta;
  double previous_diff = std::numeric_limits<double>::infinity();
  int growth_streak = 0;
  report.status = OuterStatus::max_outer_exceeded;

  for (int k = 1; k <= outer.max_outer; ++k) {
    FrozenProblem frozen(data, v);
    InnerResult solved = solve_frozen(frozen, warm, inner);

    OuterIterate rec;
    rec.index = k;
    rec.theta = theta;
    rec.inner_iterations = solved.report.iterations;
    rec.inner_status = solved.report.status;
    rec.gradient_modular = gradient_modular(space, solved.u, p);
    rec.modular = modular(space, solved.u, p);
    rec.iterate_modular = modular(space, v, p);
    rec.energy = frozen.energy(solved.u);
    if (report.bounds_monitored) {
      rec.lemma2_slack = report.constants.c - rec.gradient_modular;
      rec.remark1_slack = report.constants.c1 - rec.modular;
      rec.ball_invariant = rec.iterate_modular <= report.constants.c1 + outer.bound_slack;
    }

    DiscreteField next = theta == 1.0 ? solved.u : (1.0 - theta) * v + theta * solved.u;
    DiscreteField diff = next - v;
    rec.diff_norm = luxemburg_norm(space, diff, p);
    rec.diff_modular = modular(space, diff, p);
    report.iterations.push_back(rec);
    report.outer_iterations = k;
    warm = std::move(solved.u);
    v = std::move(next);

    if (!solved.report.converged()) {
      report.status = OuterStatus::inner_failed;
      break;
    }
    if (rec.diff_norm <= outer.fix_tol) {
      report.status = OuterStatus::converged;
      break;
    }
    growth_streak = rec.diff_norm > previous_diff ? growth_streak + 1 : 0;
    if (growth_streak >= 2 && theta > outer.min_theta) {
      theta = std::max(outer.min_theta, 0.5 * theta);
      growth_streak = 0;
    }
    previous_diff = rec.diff_norm;
  }

  result.u = std::move(v);
  report.self_consistency_residual = self_consistency_residual(data, result.u);
  report.self_consistent = report.self_consistency_residual <= 10.0 * inner.grad_tol;
  return result;
}

/// Empirical continuity of T: Luxemburg norms of T(v + 2^{-n} w) - T(v) for
/// n = 1..levels.
inline std::vector<double> continuity_probe(const std::shared_ptr<const ProblemData>& data,
                                            const DiscreteField& v, const DiscreteField& w,
                                            int levels, const InnerOptions& inner = {}) {
  const auto& space = data->space();
  auto t_v = solve_frozen(FrozenProblem(data, v), inner).u;
  std::vector<double> norms;
  for (int n = 1; n <= levels; ++n) {
    DiscreteField vn = v + std::ldexp(1.0, -n) * w;
    auto t_vn = solve_frozen(FrozenProblem(data, vn), inner).u;
    norms.push_back(luxemburg_norm(space, t_vn - t_v, data->exponent()));
  }
  return norms;
}

} // namespace apx
