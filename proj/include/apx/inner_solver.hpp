#pragma once

// T(v): minimizer of the frozen convex energy by damped Newton descent.

#include "apx/assembly.hpp"
#include "apx/error.hpp"
#include "apx/geometry.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace apx {

struct InnerOptions {
  double grad_tol = 1e-10;  // on the max-norm of the residual
  int max_iters = 200;
  double eps_reg = 1e-8;
  double backtrack = 0.5;
  double armijo = 1e-4;
  int max_backtracks = 80;

  void validate() const {
    if (!(grad_tol > 0.0) || max_iters < 1 || !(eps_reg >= 0.0) || !(armijo > 0.0) ||
        max_backtracks < 1 || !(backtrack > 0.0 && backtrack < 1.0)) {
      throw ConfigError("invalid inner solver options");
    }
  }
};

enum class InnerStatus { converged, max_iters_exceeded, line_search_failed };

inline const char* to_string(InnerStatus s) {
  switch (s) {
    case InnerStatus::converged: return "converged";
    case InnerStatus::max_iters_exceeded: return "max_iters_exceeded";
    case InnerStatus::line_search_failed: return "line_search_failed";
  }
  return "unknown";
}

struct InnerStep {
  double energy = 0.0;
  double residual_norm = 0.0;  // max-norm
  double step_length = 0.0;    // 0 for the initial state
  bool gradient_fallback = false;
};

struct InnerReport {
  int iterations = 0;
  std::vector<InnerStep> history;  // history[0] is the initial iterate
  InnerStatus status = InnerStatus::max_iters_exceeded;
  bool converged() const { return status == InnerStatus::converged; }
};

struct InnerResult {
  DiscreteField u;
  InnerReport report;
};

class LinearSolveFailure : public Error {
public:
  explicit LinearSolveFailure(const std::string& what) : Error(ExitCode::non_convergence, what) {}
};

/// Damped Newton on the frozen energy.
///
/// Each direction solves H(u, eps_reg) d = -r with a sparse LDL^T
/// factorization and falls back to -r when it is not a descent direction.
/// Steps are accepted by Armijo backtracking on the true energy. Once the
/// energy decrease drops below rounding level, a step is also accepted when
/// the energy does not grow by more than that level and the residual shrinks.
inline InnerResult solve_frozen(const FrozenProblem& problem, DiscreteField u0,
                                const InnerOptions& opts = {}) {
  opts.validate();
  const auto& space = problem.space();
  if (!u0.satisfies_dirichlet()) {
    throw InvariantViolation("initial iterate violates the Dirichlet condition");
  }
  InnerResult result{std::move(u0), {}};
  auto& u = result.u;
  auto& report = result.report;

  double energy = problem.energy(u);
  Eigen::VectorXd r = problem.residual(u);
  double rnorm = r.size() ? r.lpNorm<Eigen::Infinity>() : 0.0;
  report.history.push_back({energy, rnorm, 0.0, false});

  Eigen::SimplicialLDLT<SparseMatrix> solver;
  bool pattern_known = false;
  for (int it = 0; it < opts.max_iters; ++it) {
    if (rnorm <= opts.grad_tol) {
      report.status = InnerStatus::converged;
      return result;
    }
    SparseMatrix h = problem.hessian(u, opts.eps_reg);
    if (!pattern_known) {
      solver.analyzePattern(h);
      pattern_known = true;
    }
    solver.factorize(h);
    if (solver.info() != Eigen::Success) {
      throw LinearSolveFailure("Hessian factorization failed (eps_reg = " +
                               std::to_string(opts.eps_reg) + ")");
    }
    Eigen::VectorXd d = solver.solve(-r);
    if (solver.info() != Eigen::Success || !d.allFinite()) {
      throw LinearSolveFailure("Hessian solve produced a non-finite direction");
    }
    bool fallback = false;
    double slope = r.dot(d);
    if (!(slope < 0.0)) {
      d = -r;
      slope = -r.squaredNorm();
      fallback = true;
    }

    const double rounding = 64.0 * std::numeric_limits<double>::epsilon() *
                            std::max(1.0, std::abs(energy));
    double t = 1.0;
    bool accepted = false;
    DiscreteField trial = u;
    double trial_energy = energy;
    Eigen::VectorXd trial_r;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      trial = u;
      for (std::size_t k = 0; k < space.num_free(); ++k) {
        trial[space.free_nodes()[k]] += t * d[static_cast<Eigen::Index>(k)];
      }
      trial_energy = problem.energy(trial);
      if (trial_energy <= energy + opts.armijo * t * slope) {
        accepted = true;
        trial_r = problem.residual(trial);
        break;
      }
      if (trial_energy <= energy + rounding && -opts.armijo * t * slope < rounding) {
        trial_r = problem.residual(trial);
        if (trial_r.lpNorm<Eigen::Infinity>() < rnorm) {
          accepted = true;
          break;
        }
      }
      t *= opts.backtrack;
    }
    if (!accepted) {
      report.status = InnerStatus::line_search_failed;
      return result;
    }
    u = std::move(trial);
    energy = trial_energy;
    r = std::move(trial_r);
    rnorm = r.lpNorm<Eigen::Infinity>();
    ++report.iterations;
    report.history.push_back({energy, rnorm, t, fallback});
  }
  report.status = rnorm <= opts.grad_tol ? InnerStatus::converged : InnerStatus::max_iters_exceeded;
  return result;
}

inline InnerResult solve_frozen(const FrozenProblem& problem, const InnerOptions& opts = {}) {
  return solve_frozen(problem, problem.space().zero_field(), opts);
}

/// Discrete weak-solution certificate: |<J'(u), phi_k>| <= tol for every free
/// hat function.
inline bool weak_residual_check(const FrozenProblem& problem, const DiscreteField& u, double tol) {
  Eigen::VectorXd r = problem.residual(u);
  return r.size() == 0 || r.lpNorm<Eigen::Infinity>() <= tol;
}

} // namespace apx
