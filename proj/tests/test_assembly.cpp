#include "apx/assembly.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdlib>
#include <random>

using namespace apx;

namespace {

struct Fixture {
  std::shared_ptr<const Mesh> mesh;
  std::shared_ptr<const FunctionSpace> space;
  std::shared_ptr<const ProblemData> data;
};

Fixture make_problem(int n, std::function<double(double, double)> p, double f,
                   ExponentMode mode = ExponentMode::solver,
                   AlphaCoefficient alpha = AlphaCoefficient::constant(1.0), MatrixField a = {}) {
  Fixture s;
  s.mesh = std::make_shared<const Mesh>(structured_square_mesh(n));
  s.space = std::make_shared<const FunctionSpace>(s.mesh);
  ExponentField pf(*s.space, std::move(p), mode);
  s.data = std::make_shared<const ProblemData>(s.space, pf, std::move(a), std::move(alpha), SourceTerm::constant(f));
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

Eigen::VectorXd free_vector(const FunctionSpace& space, const DiscreteField& u) {
  auto v = space.restrict_to_free(u);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

TEST(Energy, ZeroAtZero) {
  auto s = make_problem(6, varp(), 3.0);
  FrozenProblem fp(s.data, s.space->zero_field());
  EXPECT_EQ(fp.energy(s.space->zero_field()), 0.0);
}

TEST(Energy, NonnegativeWithoutSource) {
  std::mt19937_64 rng(3);
  auto s = make_problem(6, varp(), 0.0, ExponentMode::solver, state_alpha(), aniso());
  for (int k = 0; k < 20; ++k) {
    auto u = oracle::random_field(s.mesh, rng, -2.0, 2.0, true);
    FrozenProblem fp(s.data, u);
    EXPECT_GE(fp.energy(u), 0.0);
  }
}

TEST(Energy, HatFunctionClosedForm) {
  // p = 4, f = 0, identity A, alpha = 1: J = sum over elements area/4 |grad u|^4
  auto s = make_problem(2, [](double, double) { return 4.0; }, 0.0);
  DiscreteField u(s.mesh);
  int centre = -1;
  for (std::size_t i = 0; i < s.mesh->num_nodes(); ++i) {
    if (std::abs(s.mesh->node(i).x - 0.5) < 1e-14 && std::abs(s.mesh->node(i).y - 0.5) < 1e-14) centre = int(i);
  }
  ASSERT_GE(centre, 0);
  u[centre] = 1.0;
  double expected = 0.0;
  for (const auto& t : s.mesh->triangles()) {
    const auto& a = s.mesh->node(t[0]);
    const auto& b = s.mesh->node(t[1]);
    const auto& c = s.mesh->node(t[2]);
    const double area = 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
    const double bb[3] = {b.y - c.y, c.y - a.y, a.y - b.y};
    const double cc[3] = {c.x - b.x, a.x - c.x, b.x - a.x};
    double gx = 0.0, gy = 0.0;
    for (int j = 0; j < 3; ++j) {
      gx += u[t[j]] * bb[j] / (2.0 * area);
      gy += u[t[j]] * cc[j] / (2.0 * area);
    }
    const double g2 = gx * gx + gy * gy;
    expected += area / 4.0 * g2 * g2;
  }
  FrozenProblem fp(s.data, u);
  EXPECT_NEAR(fp.energy(u), expected, 1e-14 * expected);
  EXPECT_GT(expected, 0.0);
}

TEST(Residual, ZeroStateGivesNegativeLoad) {
  auto s = make_problem(7, varp(), 2.5);
  FrozenProblem fp(s.data, s.space->zero_field());
  auto r = fp.residual(s.space->zero_field());
  auto sys = oracle::p1_system(*s.mesh, 2.5);
  ASSERT_EQ(r.size(), sys.load.size());
  for (Eigen::Index k = 0; k < r.size(); ++k) {
    const int node = sys.free[static_cast<std::size_t>(k)];
    EXPECT_NEAR(r[s.space->free_index(node)], -sys.load[k], 1e-15);
  }
}

TEST(Residual, ZeroWithoutSourceAtZero) {
  auto s = make_problem(5, varp(), 0.0);
  FrozenProblem fp(s.data, s.space->zero_field());
  EXPECT_EQ(fp.residual(s.space->zero_field()).lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(ResidualProperty, MatchesEnergyDifferences) {
  std::mt19937_64 rng(11);
  auto s = make_problem(5, varp(), 1.5, ExponentMode::solver, state_alpha(), aniso());
  for (int trial = 0; trial < 5; ++trial) {
    auto u = oracle::random_field(s.mesh, rng, -1.0, 1.0, true);
    auto v = oracle::random_field(s.mesh, rng, -1.0, 1.0, true);
    FrozenProblem fp(s.data, v);
    auto r = fp.residual(u);
    const double h = 1e-5 * (1.0 + u.max_abs());
    for (std::size_t k = 0; k < s.space->num_free(); ++k) {
      const int node = s.space->free_nodes()[k];
      DiscreteField up = u, um = u;
      up[node] += h;
      um[node] -= h;
      const double fd = (fp.energy(up) - fp.energy(um)) / (2.0 * h);
      EXPECT_NEAR(r[static_cast<Eigen::Index>(k)], fd, 1e-6) << "node " << node;
    }
  }
}

TEST(HessianProperty, MatchesResidualDifferences) {
  std::mt19937_64 rng(12);
  auto s = make_problem(5, varp(), 1.0, ExponentMode::solver, state_alpha(), aniso());
  for (int trial = 0; trial < 5; ++trial) {
    auto u = oracle::random_field(s.mesh, rng, -1.0, 1.0, true);
    auto d = oracle::random_field(s.mesh, rng, -1.0, 1.0, true);
    FrozenProblem fp(s.data, u);
    const double h = 1e-6;
    DiscreteField up = u, um = u;
    up += h * d;
    um -= h * d;
    Eigen::VectorXd fd = (fp.residual(up) - fp.residual(um)) / (2.0 * h);
    Eigen::VectorXd hd = fp.hessian(u, 0.0) * free_vector(*s.space, d);
    EXPECT_LE((fd - hd).lpNorm<Eigen::Infinity>(), 1e-5 * std::max(1.0, hd.lpNorm<Eigen::Infinity>()));
  }
}

TEST(Hessian, QuadraticCaseIsTheStiffnessMatrix) {
  auto s = make_problem(6, [](double, double) { return 2.0; }, 0.0, ExponentMode::diagnostic);
  FrozenProblem fp(s.data, s.space->zero_field());
  std::mt19937_64 rng(1);
  auto u = oracle::random_field(s.mesh, rng, -1.0, 1.0, true);
  Eigen::MatrixXd h(fp.hessian(u, 1e-3));
  auto sys = oracle::p1_system(*s.mesh, 0.0);
  Eigen::MatrixXd k(sys.stiffness);
  ASSERT_EQ(h.rows(), k.rows());
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.cols(); ++j) {
      const int ni = sys.free[std::size_t(i)], nj = sys.free[std::size_t(j)];
      EXPECT_NEAR(h(s.space->free_index(ni), s.space->free_index(nj)), k(i, j), 1e-13);
    }
  }
}

TEST(HessianProperty, ExactlySymmetricAndPositiveSemidefinite) {
  std::mt19937_64 rng(13);
  auto s = make_problem(6, varp(), 1.0, ExponentMode::solver, state_alpha(), aniso());
  for (int trial = 0; trial < 5; ++trial) {
    auto u = oracle::random_field(s.mesh, rng, -3.0, 3.0, true);
    FrozenProblem fp(s.data, u);
    for (double eps : {0.0, 1e-8, 1e-2}) {
      Eigen::MatrixXd h(fp.hessian(u, eps));
      EXPECT_EQ((h - h.transpose()).cwiseAbs().maxCoeff(), 0.0);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
      EXPECT_GE(es.eigenvalues()[0], -1e-10);
    }
  }
}

TEST(EnergyProperty, ConvexAlongSegments) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto s = make_problem(6, varp(), 2.0, ExponentMode::solver, state_alpha(), aniso());
  for (int trial = 0; trial < 50; ++trial) {
    auto u = oracle::random_field(s.mesh, rng, -2.0, 2.0, true);
    auto w = oracle::random_field(s.mesh, rng, -2.0, 2.0, true);
    FrozenProblem fp(s.data, oracle::random_field(s.mesh, rng, -2.0, 2.0, true));
    const double t = unit(rng);
    auto mid = (1.0 - t) * u + t * w;
    const double lhs = fp.energy(mid);
    const double rhs = (1.0 - t) * fp.energy(u) + t * fp.energy(w);
    EXPECT_LE(lhs, rhs + 1e-12 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(EnergyProperty, CoerciveAlongRays) {
  std::mt19937_64 rng(15);
  auto s = make_problem(5, varp(), 5.0);
  FrozenProblem fp(s.data, s.space->zero_field());
  for (int trial = 0; trial < 10; ++trial) {
    auto d = oracle::random_field(s.mesh, rng, -1.0, 1.0, true);
    double prev = -1e300;
    for (double t : {10.0, 100.0, 1000.0}) {
      const double e = fp.energy(t * d);
      EXPECT_GT(e, prev);
      prev = e;
    }
    EXPECT_GT(prev, 0.0);
  }
}

TEST(Assembly, IndependentOfThreadCount) {
  std::mt19937_64 rng(16);
  Fixture s;
  s.mesh = std::make_shared<const Mesh>(structured_square_mesh(48));
  s.space = std::make_shared<const FunctionSpace>(s.mesh);
  s.data = std::make_shared<const ProblemData>(s.space, ExponentField(*s.space, varp()), aniso(), state_alpha(),
                                               SourceTerm::constant(1.0));
  auto u = oracle::random_field(s.mesh, rng, -1.0, 1.0, true);
  FrozenProblem fp(s.data, u);
  setenv("APX_THREADS", "1", 1);
  const double e1 = fp.energy(u);
  Eigen::VectorXd r1 = fp.residual(u);
  Eigen::MatrixXd h1(fp.hessian(u, 1e-8));
  setenv("APX_THREADS", "4", 1);
  const double e4 = fp.energy(u);
  Eigen::VectorXd r4 = fp.residual(u);
  Eigen::MatrixXd h4(fp.hessian(u, 1e-8));
  unsetenv("APX_THREADS");
  EXPECT_EQ(e1, e4);
  EXPECT_EQ((r1 - r4).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((h1 - h4).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ProblemDataTest, RejectsMismatchedInputs) {
  auto mesh = std::make_shared<const Mesh>(structured_square_mesh(3));
  auto space = std::make_shared<const FunctionSpace>(mesh);
  auto other = std::make_shared<const FunctionSpace>(mesh, 2);
  EXPECT_THROW(ProblemData(space, ExponentField::constant(*other, 3.0), MatrixField{}, AlphaCoefficient::constant(1.0),
                           SourceTerm::constant(1.0)),
               InvariantViolation);
  EXPECT_THROW(ProblemData(space, ExponentField::constant(*space, 3.0),
                           MatrixField(constant_function(0.5), constant_function(0.0), constant_function(1.0)),
                           AlphaCoefficient::constant(1.0), SourceTerm::constant(1.0)),
               InvariantViolation);
  auto data = std::make_shared<const ProblemData>(space, ExponentField::constant(*space, 3.0), MatrixField{},
                                                  AlphaCoefficient::constant(1.0), SourceTerm::constant(1.0));
  EXPECT_THROW(FrozenProblem(data, std::vector<double>(3, 1.0)), InvariantViolation);
  auto foreign = std::make_shared<const Mesh>(structured_square_mesh(3));
  EXPECT_THROW(FrozenProblem(data, DiscreteField(foreign)), InvariantViolation);
}
