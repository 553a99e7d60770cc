#pragma once

// Manufactured solutions: builtin (u*, f) pairs, an independent
// finite-difference oracle for f = -div(alpha(x, u*) <A grad u*, grad u*>^{(p-2)/2} A grad u*),
// and convergence tables.

#include "apx/assembly.hpp"
#include "apx/coefficients.hpp"
#include "apx/error.hpp"
#include "apx/expr.hpp"
#include "apx/geometry.hpp"
#include "apx/inner_solver.hpp"
#include "apx/outer_solver.hpp"
#include "apx/varexp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace apx {

enum class DomainKind { square, disk };

/// Values on a uniform grid over a box, evaluated by bilinear interpolation
/// (clamped to the box).
class GridField {
public:
  GridField(double x0, double y0, double spacing, int nx, int ny, std::vector<double> values)
      : x0_(x0), y0_(y0), h_(spacing), nx_(nx), ny_(ny), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(nx_ + 1) * (ny_ + 1)) {
      throw InvariantViolation("grid field value count does not match its dimensions");
    }
  }

  double node(int i, int j) const { return values_[static_cast<std::size_t>(j) * (nx_ + 1) + i]; }
  int nx() const noexcept { return nx_; }
  int ny() const noexcept { return ny_; }
  double spacing() const noexcept { return h_; }
  Point position(int i, int j) const { return {x0_ + i * h_, y0_ + j * h_}; }

  double operator()(double x, double y) const {
    double sx = std::clamp((x - x0_) / h_, 0.0, static_cast<double>(nx_));
    double sy = std::clamp((y - y0_) / h_, 0.0, static_cast<double>(ny_));
    int i = std::min(static_cast<int>(sx), nx_ - 1);
    int j = std::min(static_cast<int>(sy), ny_ - 1);
    double fx = sx - i;
    double fy = sy - j;
    return (1 - fx) * (1 - fy) * node(i, j) + fx * (1 - fy) * node(i + 1, j) +
           (1 - fx) * fy * node(i, j + 1) + fx * fy * node(i + 1, j + 1);
  }

private:
  double x0_, y0_, h_;
  int nx_, ny_;
  std::vector<double> values_;
};

struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

/// f = -div(alpha(x, u*) <A grad u*, grad u*>^{(p-2)/2} A grad u*) on a grid of
/// spacing 1 / fine_n: grad u* by central differences, then the divergence of
/// the flux by central differences at the same spacing.
inline GridField oracle_rhs(const SpatialFunction& u_star, const SpatialFunction& p,
                            const StateFunction& alpha, const MatrixField& a, int fine_n,
                            const Box& box = {}) {
  if (fine_n < 1) throw ConfigError("oracle resolution must be positive");
  const double h = 1.0 / fine_n;
  const int nx = static_cast<int>(std::lround((box.x1 - box.x0) * fine_n));
  const int ny = static_cast<int>(std::lround((box.y1 - box.y0) * fine_n));
  // u on [-2, n+2], flux on [-1, n+1], f on [0, n]
  const int ux = nx + 5, uy = ny + 5;
  std::vector<double> u(static_cast<std::size_t>(ux) * uy);
  auto u_at = [&](int i, int j) -> double& { return u[static_cast<std::size_t>(j + 2) * ux + (i + 2)]; };
  for (int j = -2; j <= ny + 2; ++j) {
    for (int i = -2; i <= nx + 2; ++i) u_at(i, j) = u_star(box.x0 + i * h, box.y0 + j * h);
  }
  const int fxn = nx + 3, fyn = ny + 3;
  std::vector<Vec2> flux(static_cast<std::size_t>(fxn) * fyn);
  auto flux_at = [&](int i, int j) -> Vec2& { return flux[static_cast<std::size_t>(j + 1) * fxn + (i + 1)]; };
  for (int j = -1; j <= ny + 1; ++j) {
    for (int i = -1; i <= nx + 1; ++i) {
      const double x = box.x0 + i * h;
      const double y = box.y0 + j * h;
      Vec2 g{(u_at(i + 1, j) - u_at(i - 1, j)) / (2.0 * h), (u_at(i, j + 1) - u_at(i, j - 1)) / (2.0 * h)};
      const Sym2 m = a(x, y);
      const double q = m.quadratic(g);
      const double px = p(x, y);
      const double c = q > 0.0 ? alpha(x, y, u_at(i, j)) * std::pow(q, 0.5 * (px - 2.0)) : 0.0;
      const auto ag = m.apply(g);
      flux_at(i, j) = {c * ag[0], c * ag[1]};
    }
  }
  std::vector<double> f(static_cast<std::size_t>(nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      const double div = (flux_at(i + 1, j)[0] - flux_at(i - 1, j)[0]) / (2.0 * h) +
                         (flux_at(i, j + 1)[1] - flux_at(i, j - 1)[1]) / (2.0 * h);
      f[static_cast<std::size_t>(j) * (nx + 1) + i] = -div;
    }
  }
  return GridField(box.x0, box.y0, h, nx, ny, std::move(f));
}

struct ManufacturedCase {
  std::string name;
  DomainKind domain = DomainKind::square;
  int disk_boundary_nodes = 8;
  Expression exact_u;           // over (x, y)
  SpatialFunction exponent;
  bool diagnostic = false;      // admits p == 2
  StateFunction alpha;
  double lambda_lo = 1.0;
  double lambda_hi = 1.0;
  bool alpha_depends_on_state = false;
  MatrixField matrix;
  std::optional<SpatialFunction> rhs;  // empty: use the finite-difference oracle
};

inline Box case_box(const ManufacturedCase& c) {
  return c.domain == DomainKind::square ? Box{0.0, 0.0, 1.0, 1.0} : Box{-1.0, -1.0, 1.0, 1.0};
}

/// Builtin cases: "disk-p3", "square-p2-linear", "square-varp".
inline ManufacturedCase builtin_case(const std::string& name) {
  const std::vector<std::string> xy{"x", "y"};
  ManufacturedCase c;
  c.name = name;
  c.matrix = MatrixField::identity();
  if (name == "disk-p3") {
    // u(r) = (p-1)/p (1/2)^{1/(p-1)} (1 - r^{p/(p-1)}) with p = 3
    c.domain = DomainKind::disk;
    c.exact_u = Expression::parse("(2/3)*sqrt(1/2)*(1 - (x^2 + y^2)^(3/4))", xy);
    c.exponent = constant_function(3.0);
    c.alpha = [](double, double, double) { return 1.0; };
    c.rhs = constant_function(1.0);
  } else if (name == "square-p2-linear") {
    c.exact_u = Expression::parse("sin(pi*x)*sin(pi*y)", xy);
    c.exponent = constant_function(2.0);
    c.diagnostic = true;
    c.alpha = [](double, double, double) { return 1.0; };
    c.rhs = spatial_function(Expression::parse("2*pi^2*sin(pi*x)*sin(pi*y)", xy));
  } else if (name == "square-varp") {
    c.exact_u = Expression::parse("sin(pi*x)*sin(pi*y)", xy);
    c.exponent = spatial_function(Expression::parse("3 + 0.5*sin(pi*x)", xy));
    c.alpha = state_function(Expression::parse("1 + 1/(1 + t^2)", {"x", "y", "t"}));
    c.lambda_lo = 1.0;
    c.lambda_hi = 2.0;
    c.alpha_depends_on_state = true;
  } else {
    throw ConfigError("unknown manufactured case '" + name +
                      "' (known: disk-p3, square-p2-linear, square-varp)");
  }
  return c;
}

/// Largest |u*| over the boundary nodes of a mesh.
inline double boundary_defect(const ManufacturedCase& c, const Mesh& mesh) {
  auto u = spatial_function(c.exact_u);
  double worst = 0.0;
  for (int i : mesh.boundary_nodes()) worst = std::max(worst, std::abs(u(mesh.node(i).x, mesh.node(i).y)));
  return worst;
}

inline Mesh case_mesh(const ManufacturedCase& c, int level) {
  return c.domain == DomainKind::square ? structured_square_mesh(level)
                                        : polygonal_disk_mesh(c.disk_boundary_nodes, level);
}

struct ConvergenceRow {
  double h = 0.0;
  std::size_t nodes = 0;
  double linf_error = 0.0;    // max nodal error
  double energy_error = 0.0;  // Luxemburg norm of |grad(u_h - I_h u*)|
  double observed_order = std::numeric_limits<double>::quiet_NaN();
  int outer_iterations = 0;
};

struct ConvergenceOptions {
  InnerOptions inner;
  OuterOptions outer;
  int quadrature_degree = 4;
  int oracle_fine_n = 512;  // raised to 4x the finest square resolution when needed

  ConvergenceOptions() { outer.monitor_bounds = false; }
};

/// Solves the case on each level (square: n cells per side; disk: refinement
/// count) and tabulates errors against u*. Observed order is the log-ratio of
/// successive L-infinity errors over the log-ratio of mesh sizes.
inline std::vector<ConvergenceRow> convergence_study(const ManufacturedCase& c,
                                                     const std::vector<int>& levels,
                                                     const ConvergenceOptions& opts = {}) {
  if (levels.size() < 3) throw ConfigError("a convergence study needs at least 3 mesh sizes");
  SpatialFunction rhs;
  if (c.rhs) {
    rhs = *c.rhs;
  } else {
    int fine_n = opts.oracle_fine_n;
    if (c.domain == DomainKind::square) {
      fine_n = std::max(fine_n, 4 * *std::max_element(levels.begin(), levels.end()));
    }
    auto grid = std::make_shared<const GridField>(
        oracle_rhs(spatial_function(c.exact_u), c.exponent, c.alpha, c.matrix, fine_n, case_box(c)));
    rhs = [grid](double x, double y) { return (*grid)(x, y); };
  }
  auto exact = spatial_function(c.exact_u);
  std::vector<ConvergenceRow> rows;
  for (int level : levels) {
    auto mesh = std::make_shared<const Mesh>(case_mesh(c, level));
    auto space = std::make_shared<const FunctionSpace>(mesh, opts.quadrature_degree);
    ExponentField p(*space, c.exponent, c.diagnostic ? ExponentMode::diagnostic : ExponentMode::solver);
    AlphaCoefficient alpha(c.alpha, c.lambda_lo, c.lambda_hi, c.alpha_depends_on_state);
    auto data = std::make_shared<const ProblemData>(space, p, c.matrix, alpha, SourceTerm(rhs));
    auto solved = fixed_point_solve(data, opts.inner, opts.outer);
    if (!solved.report.converged()) {
      throw NonConvergence("solve failed on level " + std::to_string(level) + " of case " + c.name);
    }
    DiscreteField interp = DiscreteField::interpolate(mesh, exact);
    interp.apply_dirichlet();
    ConvergenceRow row;
    row.h = mesh->max_edge_length();
    row.nodes = mesh->num_nodes();
    for (std::size_t i = 0; i < mesh->num_nodes(); ++i) {
      row.linf_error = std::max(row.linf_error,
                                std::abs(solved.u[i] - exact(mesh->node(i).x, mesh->node(i).y)));
    }
    row.energy_error = gradient_luxemburg_norm(*space, solved.u - interp, p);
    row.outer_iterations = solved.report.outer_iterations;
    if (!rows.empty()) {
      const auto& prev = rows.back();
      row.observed_order = std::log(prev.linf_error / row.linf_error) / std::log(prev.h / row.h);
    }
    rows.push_back(row);
  }
  return rows;
}

/// CSV columns: h, nodes, Linf_error, energy_error, observed_order.
inline void write_convergence_csv(const std::vector<ConvergenceRow>& rows, std::ostream& out) {
  auto num = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "h,nodes,Linf_error,energy_error,observed_order\n";
  for (const auto& r : rows) {
    out << num(r.h) << ',' << r.nodes << ',' << num(r.linf_error) << ',' << num(r.energy_error)
        << ',' << num(r.observed_order) << '\n';
  }
}

} // namespace apx
