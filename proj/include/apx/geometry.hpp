#pragma once

// Triangulated 2D domains, P1 fields and quadrature.

#include "apx/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace apx {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

using Triangle = std::array<int, 3>;
using Vec2 = std::array<double, 2>;

class MeshError : public InvariantViolation {
public:
  explicit MeshError(const std::string& what) : InvariantViolation(what) {}
};

inline double signed_area(const Point& a, const Point& b, const Point& c) {
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

/// Conforming triangulation with counter-clockwise triangles.
///
/// Construction validates the mesh: node indices in range, strictly positive
/// areas, and every edge shared by at most two triangles with opposite
/// orientation. Boundary nodes are those incident to an edge owned by a single
/// triangle.
class Mesh {
public:
  Mesh(std::vector<Point> nodes, std::vector<Triangle> triangles)
      : nodes_(std::move(nodes)), triangles_(std::move(triangles)) {
    validate_and_classify();
  }

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_triangles() const noexcept { return triangles_.size(); }
  const std::vector<Point>& nodes() const noexcept { return nodes_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }
  const Point& node(std::size_t i) const { return nodes_[i]; }
  const Triangle& triangle(std::size_t e) const { return triangles_[e]; }
  const std::vector<double>& element_areas() const noexcept { return areas_; }
  double element_area(std::size_t e) const { return areas_[e]; }

  /// Sorted indices of nodes on the boundary.
  const std::vector<int>& boundary_nodes() const noexcept { return boundary_nodes_; }
  const std::vector<bool>& boundary_mask() const noexcept { return boundary_mask_; }
  bool is_boundary(std::size_t i) const { return boundary_mask_[i]; }

  /// Boundary edges as (a, b) in the orientation of their owning triangle.
  const std::vector<std::pair<int, int>>& boundary_edges() const noexcept {
    return boundary_edges_;
  }

  double total_area() const {
    double sum = 0.0;
    for (double a : areas_) sum += a;
    return sum;
  }

  double max_edge_length() const {
    double h = 0.0;
    for (const auto& t : triangles_) {
      for (int k = 0; k < 3; ++k) {
        const auto& a = nodes_[t[k]];
        const auto& b = nodes_[t[(k + 1) % 3]];
        h = std::max(h, std::hypot(b.x - a.x, b.y - a.y));
      }
    }
    return h;
  }

private:
  void validate_and_classify() {
    const int n = static_cast<int>(nodes_.size());
    areas_.resize(triangles_.size());
    // undirected edge -> (count, first directed from-node)
    std::map<std::pair<int, int>, std::pair<int, int>> edges;
    for (std::size_t e = 0; e < triangles_.size(); ++e) {
      const auto& t = triangles_[e];
      for (int v : t) {
        if (v < 0 || v >= n) {
          throw MeshError("triangle " + std::to_string(e) + " references node " +
                          std::to_string(v) + " out of range [0, " + std::to_string(n) + ")");
        }
      }
      double area = signed_area(nodes_[t[0]], nodes_[t[1]], nodes_[t[2]]);
      if (!(area > 0.0)) {
        throw MeshError("triangle " + std::to_string(e) +
                        " has non-positive area (degenerate or clockwise)");
      }
      areas_[e] = area;
      for (int k = 0; k < 3; ++k) {
        int a = t[k];
        int b = t[(k + 1) % 3];
        auto key = std::minmax(a, b);
        auto [it, inserted] = edges.try_emplace({key.first, key.second}, 0, a);
        auto& [count, from] = it->second;
        if (!inserted && from == a) {
          throw MeshError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                          ") appears twice with the same orientation");
        }
        if (++count > 2) {
          throw MeshError("edge (" + std::to_string(key.first) + ", " +
                          std::to_string(key.second) + ") shared by more than two triangles");
        }
      }
    }
    boundary_mask_.assign(nodes_.size(), false);
    for (const auto& [key, info] : edges) {
      if (info.first == 1) {
        boundary_mask_[key.first] = true;
        boundary_mask_[key.second] = true;
        int from = info.second;
        int to = from == key.first ? key.second : key.first;
        boundary_edges_.emplace_back(from, to);
      }
    }
    for (int i = 0; i < n; ++i) {
      if (boundary_mask_[i]) boundary_nodes_.push_back(i);
    }
  }

  std::vector<Point> nodes_;
  std::vector<Triangle> triangles_;
  std::vector<double> areas_;
  std::vector<bool> boundary_mask_;
  std::vector<int> boundary_nodes_;
  std::vector<std::pair<int, int>> boundary_edges_;
};

/// Uniform red refinement: every triangle is split into four. Midpoints of
/// boundary edges are passed through `project_boundary` when given.
inline Mesh refine_uniform(const Mesh& mesh,
                           const std::function<Point(const Point&)>& project_boundary = {}) {
  std::vector<Point> nodes = mesh.nodes();
  std::map<std::pair<int, int>, int> midpoint;
  std::set<std::pair<int, int>> boundary_edge;
  for (const auto& [a, b] : mesh.boundary_edges()) {
    auto key = std::minmax(a, b);
    boundary_edge.emplace(key.first, key.second);
  }
  auto mid = [&](int a, int b) {
    auto key = std::minmax(a, b);
    std::pair<int, int> k{key.first, key.second};
    auto it = midpoint.find(k);
    if (it != midpoint.end()) return it->second;
    Point m{0.5 * (nodes[a].x + nodes[b].x), 0.5 * (nodes[a].y + nodes[b].y)};
    if (project_boundary && boundary_edge.count(k) != 0) m = project_boundary(m);
    nodes.push_back(m);
    int index = static_cast<int>(nodes.size()) - 1;
    midpoint.emplace(k, index);
    return index;
  };
  std::vector<Triangle> triangles;
  triangles.reserve(4 * mesh.num_triangles());
  for (const auto& t : mesh.triangles()) {
    int a = t[0], b = t[1], c = t[2];
    int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
    triangles.push_back({a, ab, ca});
    triangles.push_back({ab, b, bc});
    triangles.push_back({ca, bc, c});
    triangles.push_back({ab, bc, ca});
  }
  return Mesh(std::move(nodes), std::move(triangles));
}

/// Unit square split into n x n cells, each cut along its SW-NE diagonal.
inline Mesh structured_square_mesh(int n) {
  if (n < 1) throw MeshError("structured_square_mesh requires n >= 1");
  std::vector<Point> nodes;
  nodes.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      nodes.push_back({static_cast<double>(i) / n, static_cast<double>(j) / n});
    }
  }
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  std::vector<Triangle> triangles;
  triangles.reserve(2 * static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      int sw = id(i, j), se = id(i + 1, j), ne = id(i + 1, j + 1), nw = id(i, j + 1);
      triangles.push_back({sw, se, ne});
      triangles.push_back({sw, ne, nw});
    }
  }
  return Mesh(std::move(nodes), std::move(triangles));
}

/// Fan triangulation of the regular n_boundary-gon inscribed in the unit
/// circle, refined `refinement` times with new boundary nodes moved onto the
/// circle.
inline Mesh polygonal_disk_mesh(int n_boundary, int refinement) {
  if (n_boundary < 8) throw MeshError("polygonal_disk_mesh requires n_boundary >= 8");
  if (refinement < 0) throw MeshError("polygonal_disk_mesh requires refinement >= 0");
  std::vector<Point> nodes{{0.0, 0.0}};
  for (int k = 0; k < n_boundary; ++k) {
    double angle = 2.0 * std::numbers::pi * k / n_boundary;
    nodes.push_back({std::cos(angle), std::sin(angle)});
  }
  std::vector<Triangle> triangles;
  for (int k = 0; k < n_boundary; ++k) {
    triangles.push_back({0, 1 + k, 1 + (k + 1) % n_boundary});
  }
  Mesh mesh(std::move(nodes), std::move(triangles));
  auto to_circle = [](const Point& p) {
    double r = std::hypot(p.x, p.y);
    return Point{p.x / r, p.y / r};
  };
  for (int r = 0; r < refinement; ++r) mesh = refine_uniform(mesh, to_circle);
  return mesh;
}

namespace detail {

inline std::string shortest(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

} // namespace detail

/// Text format:
///   nodes N
///   x y          (N lines)
///   triangles M
///   i j k        (M lines, 0-based)
/// Lines starting with '#' and blank lines are ignored.
inline void write_mesh(const Mesh& mesh, std::ostream& out) {
  out << "nodes " << mesh.num_nodes() << '\n';
  for (const auto& p : mesh.nodes()) {
    out << detail::shortest(p.x) << ' ' << detail::shortest(p.y) << '\n';
  }
  out << "triangles " << mesh.num_triangles() << '\n';
  for (const auto& t : mesh.triangles()) {
    out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  }
}

inline Mesh read_mesh(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto next = [&](std::string& out) {
    while (std::getline(in, out)) {
      ++line_no;
      auto first = out.find_first_not_of(" \t\r");
      if (first == std::string::npos || out[first] == '#') continue;
      return true;
    }
    return false;
  };
  auto fail = [&](const std::string& msg) -> MeshError {
    return MeshError("mesh file line " + std::to_string(line_no) + ": " + msg);
  };
  auto header = [&](const char* keyword) {
    if (!next(line)) throw fail(std::string("missing '") + keyword + "' header");
    std::istringstream ss(line);
    std::string word;
    long long count = -1;
    std::string extra;
    if (!(ss >> word >> count) || word != keyword || count < 0 || (ss >> extra)) {
      throw fail(std::string("expected '") + keyword + " <count>'");
    }
    return static_cast<std::size_t>(count);
  };

  std::size_t n = header("nodes");
  std::vector<Point> nodes(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!next(line)) throw fail("unexpected end of file in node list");
    std::istringstream ss(line);
    std::string extra;
    if (!(ss >> nodes[i].x >> nodes[i].y) || (ss >> extra)) throw fail("expected 'x y'");
  }
  std::size_t m = header("triangles");
  std::vector<Triangle> triangles(m);
  for (std::size_t e = 0; e < m; ++e) {
    if (!next(line)) throw fail("unexpected end of file in triangle list");
    std::istringstream ss(line);
    std::string extra;
    auto& t = triangles[e];
    if (!(ss >> t[0] >> t[1] >> t[2]) || (ss >> extra)) throw fail("expected 'i j k'");
    for (int v : t) {
      if (v < 0 || static_cast<std::size_t>(v) >= n) {
        throw fail("node index " + std::to_string(v) + " out of range");
      }
    }
    if (!(signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]) > 0.0)) {
      throw fail("triangle has non-positive area");
    }
  }
  if (next(line)) throw fail("trailing content after triangle list");
  return Mesh(std::move(nodes), std::move(triangles));
}

inline void save_mesh(const Mesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ExitCode::config_error, "cannot open '" + path + "' for writing");
  write_mesh(mesh, out);
}

inline Mesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mesh file '" + path + "'");
  return read_mesh(in);
}

/// Symmetric rule on the reference triangle. Weights sum to one; they are
/// scaled by the element area when integrating.
struct QuadratureRule {
  int degree = 0;
  std::vector<std::array<double, 3>> points;  // barycentric
  std::vector<double> weights;

  std::size_t size() const noexcept { return weights.size(); }
};

/// Smallest available positive-weight rule exact to at least `degree`
/// (available degrees: 1, 2, 4, 5).
inline QuadratureRule quadrature_rule(int degree) {
  QuadratureRule rule;
  auto orbit3 = [&rule](double a, double w) {
    double b = 1.0 - 2.0 * a;
    rule.points.push_back({b, a, a});
    rule.points.push_back({a, b, a});
    rule.points.push_back({a, a, b});
    rule.weights.insert(rule.weights.end(), 3, w);
  };
  if (degree <= 1) {
    rule.degree = 1;
    rule.points.push_back({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    rule.weights.push_back(1.0);
  } else if (degree == 2) {
    rule.degree = 2;
    orbit3(1.0 / 6.0, 1.0 / 3.0);
  } else if (degree <= 4) {
    rule.degree = 4;
    orbit3(0.44594849091596488632, 0.22338158967801146570);
    orbit3(0.091576213509770743460, 0.10995174365532186764);
  } else if (degree == 5) {
    rule.degree = 5;
    const double s = std::sqrt(15.0);
    rule.points.push_back({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    rule.weights.push_back(9.0 / 40.0);
    orbit3((6.0 - s) / 21.0, (155.0 - s) / 1200.0);
    orbit3((6.0 + s) / 21.0, (155.0 + s) / 1200.0);
  } else {
    throw ConfigError("no quadrature rule of degree " + std::to_string(degree) +
                      " (supported: 1, 2, 4, 5)");
  }
  return rule;
}

/// P1 nodal field. The Dirichlet mask is the mesh boundary.
class DiscreteField {
public:
  DiscreteField() = default;
  explicit DiscreteField(std::shared_ptr<const Mesh> mesh)
      : mesh_(std::move(mesh)), values_(mesh_->num_nodes(), 0.0) {}
  DiscreteField(std::shared_ptr<const Mesh> mesh, std::vector<double> values)
      : mesh_(std::move(mesh)), values_(std::move(values)) {
    if (values_.size() != mesh_->num_nodes()) {
      throw InvariantViolation("field has " + std::to_string(values_.size()) +
                               " values for a mesh with " +
                               std::to_string(mesh_->num_nodes()) + " nodes");
    }
  }

  /// Nodal interpolant of g.
  static DiscreteField interpolate(std::shared_ptr<const Mesh> mesh,
                                   const std::function<double(double, double)>& g) {
    DiscreteField f(std::move(mesh));
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto& p = f.mesh_->node(i);
      f.values_[i] = g(p.x, p.y);
    }
    return f;
  }

  const Mesh& mesh() const { return *mesh_; }
  const std::shared_ptr<const Mesh>& mesh_ptr() const noexcept { return mesh_; }
  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  const std::vector<bool>& dirichlet_mask() const { return mesh_->boundary_mask(); }

  bool satisfies_dirichlet() const {
    for (int i : mesh_->boundary_nodes()) {
      if (values_[i] != 0.0) return false;
    }
    return true;
  }

  void apply_dirichlet() {
    for (int i : mesh_->boundary_nodes()) values_[i] = 0.0;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  DiscreteField& operator+=(const DiscreteField& other) {
    check_same_mesh(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }
  DiscreteField& operator-=(const DiscreteField& other) {
    check_same_mesh(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
  }
  DiscreteField& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  friend DiscreteField operator+(DiscreteField a, const DiscreteField& b) { return a += b; }
  friend DiscreteField operator-(DiscreteField a, const DiscreteField& b) { return a -= b; }
  friend DiscreteField operator*(double s, DiscreteField a) { return a *= s; }

private:
  void check_same_mesh(const DiscreteField& other) const {
    if (mesh_ != other.mesh_) throw InvariantViolation("fields live on different meshes");
  }

  std::shared_ptr<const Mesh> mesh_;
  std::vector<double> values_;
};

/// Gradients of the three barycentric basis functions of triangle e.
inline std::array<Vec2, 3> basis_gradients(const Mesh& mesh, std::size_t e) {
  const auto& t = mesh.triangle(e);
  const auto& p0 = mesh.node(t[0]);
  const auto& p1 = mesh.node(t[1]);
  const auto& p2 = mesh.node(t[2]);
  double det = 2.0 * mesh.element_area(e);
  return {{{(p1.y - p2.y) / det, (p2.x - p1.x) / det},
           {(p2.y - p0.y) / det, (p0.x - p2.x) / det},
           {(p0.y - p1.y) / det, (p1.x - p0.x) / det}}};
}

/// The constant gradient of the P1 interpolant on triangle e.
inline Vec2 gradient_on_element(const DiscreteField& field, std::size_t e) {
  const auto& t = field.mesh().triangle(e);
  auto g = basis_gradients(field.mesh(), e);
  Vec2 out{0.0, 0.0};
  for (int k = 0; k < 3; ++k) {
    out[0] += field[t[k]] * g[k][0];
    out[1] += field[t[k]] * g[k][1];
  }
  return out;
}

/// Mesh plus quadrature with everything that element loops need
/// precomputed: physical quadrature points, area-scaled weights, basis
/// gradients, and the numbering of free (non-Dirichlet) nodes.
class FunctionSpace {
public:
  FunctionSpace(std::shared_ptr<const Mesh> mesh, QuadratureRule rule)
      : mesh_(std::move(mesh)), rule_(std::move(rule)) {
    const std::size_t ne = mesh_->num_triangles();
    const std::size_t nq = rule_.size();
    points_.resize(ne * nq);
    weights_.resize(ne * nq);
    grads_.resize(ne);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto& t = mesh_->triangle(e);
      grads_[e] = basis_gradients(*mesh_, e);
      for (std::size_t q = 0; q < nq; ++q) {
        const auto& b = rule_.points[q];
        Point p{0.0, 0.0};
        for (int k = 0; k < 3; ++k) {
          p.x += b[k] * mesh_->node(t[k]).x;
          p.y += b[k] * mesh_->node(t[k]).y;
        }
        points_[e * nq + q] = p;
        weights_[e * nq + q] = rule_.weights[q] * mesh_->element_area(e);
      }
    }
    free_index_.assign(mesh_->num_nodes(), -1);
    for (std::size_t i = 0; i < mesh_->num_nodes(); ++i) {
      if (!mesh_->is_boundary(i)) {
        free_index_[i] = static_cast<int>(free_nodes_.size());
        free_nodes_.push_back(static_cast<int>(i));
      }
    }
  }

  FunctionSpace(std::shared_ptr<const Mesh> mesh, int quadrature_degree = 4)
      : FunctionSpace(std::move(mesh), quadrature_rule(quadrature_degree)) {}

  const Mesh& mesh() const { return *mesh_; }
  const std::shared_ptr<const Mesh>& mesh_ptr() const noexcept { return mesh_; }
  const QuadratureRule& rule() const noexcept { return rule_; }
  std::size_t num_elements() const noexcept { return mesh_->num_triangles(); }
  std::size_t points_per_element() const noexcept { return rule_.size(); }
  std::size_t num_points() const noexcept { return points_.size(); }

  /// Quadrature points, element-major: index e * points_per_element() + q.
  const std::vector<Point>& points() const noexcept { return points_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::array<Vec2, 3>& gradients(std::size_t e) const { return grads_[e]; }

  const std::vector<int>& free_nodes() const noexcept { return free_nodes_; }
  int free_index(std::size_t node) const { return free_index_[node]; }
  std::size_t num_free() const noexcept { return free_nodes_.size(); }

  DiscreteField zero_field() const { return DiscreteField(mesh_); }

  /// Values of a P1 field at all quadrature points.
  std::vector<double> sample(const DiscreteField& u) const {
    const std::size_t nq = rule_.size();
    std::vector<double> out(points_.size());
    for (std::size_t e = 0; e < num_elements(); ++e) {
      const auto& t = mesh_->triangle(e);
      for (std::size_t q = 0; q < nq; ++q) {
        const auto& b = rule_.points[q];
        out[e * nq + q] = b[0] * u[t[0]] + b[1] * u[t[1]] + b[2] * u[t[2]];
      }
    }
    return out;
  }

  /// Values of g(x, y) at all quadrature points.
  std::vector<double> sample(const std::function<double(double, double)>& g) const {
    std::vector<double> out(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) out[i] = g(points_[i].x, points_[i].y);
    return out;
  }

  Vec2 gradient(const DiscreteField& u, std::size_t e) const {
    const auto& t = mesh_->triangle(e);
    const auto& g = grads_[e];
    return {u[t[0]] * g[0][0] + u[t[1]] * g[1][0] + u[t[2]] * g[2][0],
            u[t[0]] * g[0][1] + u[t[1]] * g[1][1] + u[t[2]] * g[2][1]};
  }

  /// Integral of sampled quadrature values.
  double integrate(const std::vector<double>& samples) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) sum += weights_[i] * samples[i];
    return sum;
  }

  /// Free-node coefficients of a field.
  std::vector<double> restrict_to_free(const DiscreteField& u) const {
    std::vector<double> out(free_nodes_.size());
    for (std::size_t k = 0; k < free_nodes_.size(); ++k) out[k] = u[free_nodes_[k]];
    return out;
  }

  /// Field with the given free-node coefficients and zero boundary values.
  template <typename Vector>
  DiscreteField extend_from_free(const Vector& coeffs) const {
    DiscreteField u(mesh_);
    for (std::size_t k = 0; k < free_nodes_.size(); ++k) u[free_nodes_[k]] = coeffs[k];
    return u;
  }

private:
  std::shared_ptr<const Mesh> mesh_;
  QuadratureRule rule_;
  std::vector<Point> points_;
  std::vector<double> weights_;
  std::vector<std::array<Vec2, 3>> grads_;
  std::vector<int> free_index_;
  std::vector<int> free_nodes_;
};

} // namespace apx
