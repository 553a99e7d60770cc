#include "apx/inner_solver.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace apx;

namespace {

struct Fixture {
  std::shared_ptr<const Mesh> mesh;
  std::shared_ptr<const FunctionSpace> space;
  std::shared_ptr<const ProblemData> data;
};

Fixture make(Mesh m, std::function<double(double, double)> p, SourceTerm f, ExponentMode mode = ExponentMode::solver,
             AlphaCoefficient alpha = AlphaCoefficient::constant(1.0), MatrixField a = {}) {
  Fixture s;
  s.mesh = std::make_shared<const Mesh>(std::move(m));
  s.space = std::make_shared<const FunctionSpace>(s.mesh);
  s.data = std::make_shared<const ProblemData>(s.space, ExponentField(*s.space, std::move(p), mode), std::move(a),
                                               std::move(alpha), std::move(f));
  return s;
}

std::function<double(double, double)> varp() {
  return [](double x, double y) { return 3.0 + 0.5 * std::sin(3.0 * x) * std::cos(2.0 * y); };
}

AlphaCoefficient state_alpha() {
  return AlphaCoefficient([](double x, double, double t) { return 1.0 + 0.5 * x + 0.5 / (1.0 + t * t); }, 1.0, 2.0);
}

MatrixField aniso() {
  return MatrixField([](double x, double) { return 2.0 + x; }, constant_function(0.5), constant_function(2.0));
}

} // namespace

TEST(SolveFrozen, ZeroSourceGivesZero) {
  auto s = make(structured_square_mesh(8), varp(), SourceTerm::constant(0.0));
  FrozenProblem fp(s.data, s.space->zero_field());
  auto res = solve_frozen(fp);
  EXPECT_TRUE(res.report.converged());
  EXPECT_LE(res.report.iterations, 1);
  EXPECT_EQ(res.u.max_abs(), 0.0);
}

TEST(SolveFrozen, LinearCaseMatchesPoissonInOneStep) {
  auto s = make(structured_square_mesh(16), [](double, double) { return 2.0; }, SourceTerm::constant(1.0),
                ExponentMode::diagnostic);
  FrozenProblem fp(s.data, s.space->zero_field());
  InnerOptions opts;
  opts.eps_reg = 0.0;
  auto res = solve_frozen(fp, opts);
  ASSERT_TRUE(res.report.converged());
  EXPECT_EQ(res.report.iterations, 1);
  auto ref = oracle::poisson_solution(*s.mesh, 1.0);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(res.u[i], ref[i], 1e-9);
}

TEST(SolveFrozen, DiskProblemErrorDecreases) {
  // -div(|grad u| grad u) = 1 on the unit disk: u = (2/3) sqrt(1/2) (1 - r^{3/2})
  auto exact = [](double x, double y) {
    return 2.0 / 3.0 * std::sqrt(0.5) * (1.0 - std::pow(x * x + y * y, 0.75));
  };
  double prev = 1e300;
  for (int level = 1; level <= 3; ++level) {
    auto s = make(polygonal_disk_mesh(8, level), [](double, double) { return 3.0; }, SourceTerm::constant(1.0));
    FrozenProblem fp(s.data, s.space->zero_field());
    auto res = solve_frozen(fp);
    ASSERT_TRUE(res.report.converged()) << level;
    double err = 0.0;
    for (std::size_t i = 0; i < s.mesh->num_nodes(); ++i) {
      const auto& q = s.mesh->node(i);
      err = std::max(err, std::abs(res.u[i] - exact(q.x, q.y)));
    }
    EXPECT_LT(err, prev) << level;
    prev = err;
  }
  EXPECT_LE(prev, 5e-3);
}

TEST(SolveFrozen, EnergyDecreasesMonotonically) {
  std::mt19937_64 rng(21);
  auto s = make(structured_square_mesh(12), varp(), SourceTerm::constant(10.0), ExponentMode::solver, state_alpha(),
                aniso());
  for (int trial = 0; trial < 3; ++trial) {
    auto v = oracle::random_field(s.mesh, rng, -1.0, 1.0, true);
    auto u0 = oracle::random_field(s.mesh, rng, -1.0, 1.0, true);
    FrozenProblem fp(s.data, v);
    auto res = solve_frozen(fp, u0);
    ASSERT_TRUE(res.report.converged());
    const auto& h = res.report.history;
    ASSERT_EQ(h.size(), static_cast<std::size_t>(res.report.iterations + 1));
    for (std::size_t k = 1; k < h.size(); ++k) {
      EXPECT_LE(h[k].energy, h[k - 1].energy + 64.0 * 2.2e-16 * std::max(1.0, std::abs(h[k - 1].energy)));
    }
    EXPECT_LE(h.back().residual_norm, InnerOptions{}.grad_tol);
  }
}

TEST(SolveFrozen, MinimizerIsLocallyOptimal) {
  auto s = make(structured_square_mesh(10), varp(), SourceTerm::constant(4.0), ExponentMode::solver, state_alpha(),
                aniso());
  std::mt19937_64 rng(22);
  FrozenProblem fp(s.data, oracle::random_field(s.mesh, rng, -1.0, 1.0, true));
  auto res = solve_frozen(fp);
  ASSERT_TRUE(res.report.converged());
  const double e0 = fp.energy(res.u);
  for (int node : s.space->free_nodes()) {
    for (double h : {1e-4, -1e-4}) {
      DiscreteField w = res.u;
      w[node] += h;
      EXPECT_GE(fp.energy(w), e0 - 1e-10);
    }
  }
}

TEST(SolveFrozen, EnergyIdentityBound) {
  // testing the equation with u gives integral alpha <A grad u, grad u>^{p/2} = integral f u,
  // and alpha >= lambda, A >= I bound the left side below
  auto s = make(structured_square_mesh(12), varp(), SourceTerm([](double x, double y) { return 5.0 + 3.0 * x * y; }),
                ExponentMode::solver, state_alpha(), aniso());
  FrozenProblem fp(s.data, s.space->zero_field());
  auto res = solve_frozen(fp);
  ASSERT_TRUE(res.report.converged());
  const auto us = s.space->sample(res.u);
  const auto& fs = s.data->source_samples();
  double fu = 0.0;
  for (std::size_t i = 0; i < us.size(); ++i) fu += s.space->weights()[i] * fs[i] * us[i];
  EXPECT_LE(1.0 * gradient_modular(*s.space, res.u, s.data->exponent()), fu + 1e-8);
  EXPECT_GT(fu, 0.0);
}

TEST(WeakResidualCheck, Certificates) {
  auto s = make(structured_square_mesh(8), varp(), SourceTerm::constant(3.0));
  FrozenProblem fp(s.data, s.space->zero_field());
  InnerOptions opts;
  auto res = solve_frozen(fp, opts);
  ASSERT_TRUE(res.report.converged());
  EXPECT_TRUE(weak_residual_check(fp, res.u, 10.0 * opts.grad_tol));
  EXPECT_FALSE(weak_residual_check(fp, s.space->zero_field(), 10.0 * opts.grad_tol));
  DiscreteField bumped = res.u;
  bumped[s.space->free_nodes()[s.space->num_free() / 2]] += 1e-2;
  EXPECT_FALSE(weak_residual_check(fp, bumped, 10.0 * opts.grad_tol));
}

TEST(SolveFrozen, OptionValidation) {
  auto s = make(structured_square_mesh(3), varp(), SourceTerm::constant(1.0));
  FrozenProblem fp(s.data, s.space->zero_field());
  InnerOptions bad;
  bad.grad_tol = 0.0;
  EXPECT_THROW(solve_frozen(fp, bad), ConfigError);
  bad = {};
  bad.backtrack = 1.0;
  EXPECT_THROW(solve_frozen(fp, bad), ConfigError);
  bad = {};
  bad.max_iters = 0;
  EXPECT_THROW(solve_frozen(fp, bad), ConfigError);
  DiscreteField nonzero(s.mesh);
  nonzero[s.mesh->boundary_nodes().front()] = 1.0;
  EXPECT_THROW(solve_frozen(fp, nonzero), InvariantViolation);
}

TEST(SolveFrozen, IterationCapReported) {
  auto s = make(structured_square_mesh(8), varp(), SourceTerm::constant(50.0));
  FrozenProblem fp(s.data, s.space->zero_field());
  InnerOptions opts;
  opts.max_iters = 1;
  auto res = solve_frozen(fp, opts);
  EXPECT_EQ(res.report.status, InnerStatus::max_iters_exceeded);
  EXPECT_STREQ(to_string(res.report.status), "max_iters_exceeded");
}
