#pragma once

// Randomized sweeps over the pointwise and integral inequalities: Clarkson,
// the gradient (monotonicity) inequality, Hoelder in variable-exponent
// spaces and the norm/modular relations.

#include "apx/coefficients.hpp"
#include "apx/geometry.hpp"
#include "apx/varexp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace apx {

struct InequalityTally {
  std::string name;
  long draws = 0;
  long violations = 0;
  double min_slack = std::numeric_limits<double>::infinity();

  void record(double slack, double tol) {
    ++draws;
    min_slack = std::min(min_slack, slack);
    if (slack < -tol) ++violations;
  }
};

struct CheckOptions {
  std::uint64_t seed = 42;
  long draws = 10000;
  double tol = 1e-12;  // on the relative slack
  int mesh_n = 4;      // square mesh for the integral inequalities
};

struct CheckResult {
  std::vector<InequalityTally> tallies;
  bool passed() const {
    for (const auto& t : tallies) {
      if (t.violations != 0) return false;
    }
    return true;
  }
};

/// Slack of lhs >= rhs relative to max(1, |lhs|, |rhs|).
inline double relative_slack(double lhs, double rhs) {
  return (lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)});
}

/// Random symmetric A with eigenvalues in [1, 4].
inline Sym2 random_elliptic_matrix(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> eig(1.0, 4.0);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  const double l1 = eig(rng), l2 = eig(rng), th = angle(rng);
  const double c = std::cos(th), s = std::sin(th);
  return {l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c};
}

inline CheckResult run_inequality_checks(const CheckOptions& opts) {
  if (opts.draws < 1) throw ConfigError("draw count must be positive");
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  InequalityTally clarkson{"clarkson"}, mono{"monotonicity"};
  for (long k = 0; k < opts.draws; ++k) {
    const Sym2 a = random_elliptic_matrix(rng);
    const double scale = std::pow(10.0, 2.0 * unit(rng));
    const Vec2 xi1{scale * unit(rng), scale * unit(rng)};
    const Vec2 xi2{scale * unit(rng), scale * unit(rng)};
    const double s = 2.0 + 4.0 * u01(rng);
    const auto c = check_clarkson(xi1, xi2, a, s);
    clarkson.record(relative_slack(c.lhs, c.rhs), opts.tol);
    const auto m = check_monotonicity(xi1, xi2, a, s);
    mono.record(relative_slack(m.lhs, m.rhs), opts.tol);
  }

  auto mesh = std::make_shared<const Mesh>(structured_square_mesh(opts.mesh_n));
  FunctionSpace space(mesh);
  InequalityTally holder{"holder"}, relations{"modular_relations"};
  auto random_field = [&](double scale) {
    DiscreteField f = space.zero_field();
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = scale * unit(rng);
    return f;
  };
  for (long k = 0; k < opts.draws; ++k) {
    const double lo = 2.0 + 1.5 * u01(rng);
    const double hi = lo + 2.0 * u01(rng);
    const double kx = 1.0 + 3.0 * u01(rng), ky = 3.0 * u01(rng), phase = 6.0 * u01(rng);
    ExponentField p(
        space,
        [=](double x, double y) {
          return lo + (hi - lo) * (0.5 + 0.5 * std::sin(phase + std::numbers::pi * (kx * x + ky * y)));
        },
        ExponentMode::diagnostic);
    const DiscreteField u = random_field(std::pow(10.0, 2.0 * unit(rng)));
    const DiscreteField v = random_field(std::pow(10.0, 2.0 * unit(rng)));
    const auto h = holder_pairing(space, u, v, p);
    holder.record(relative_slack(h.rhs, h.lhs), opts.tol);
    const auto r = check_modular_relations(space, u, p);
    relations.record(r.min_slack(), opts.tol);
  }
  return {{clarkson, mono, holder, relations}};
}

} // namespace apx
