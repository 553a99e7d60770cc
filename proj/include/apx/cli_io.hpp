#pragma once

// Run configuration, field files, reports, and the run modes behind the
// command-line tool.

#include "apx/assembly.hpp"
#include "apx/checks.hpp"
#include "apx/coefficients.hpp"
#include "apx/error.hpp"
#include "apx/expr.hpp"
#include "apx/geometry.hpp"
#include "apx/inner_solver.hpp"
#include "apx/mms.hpp"
#include "apx/outer_solver.hpp"
#include "apx/varexp.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace apx {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

enum class RunMode { solve, lambda1, mms, check };

inline const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::solve: return "solve";
    case RunMode::lambda1: return "lambda1";
    case RunMode::mms: return "mms";
    case RunMode::check: return "check";
  }
  return "unknown";
}

inline RunMode parse_mode(const std::string& s) {
  if (s == "solve") return RunMode::solve;
  if (s == "lambda1") return RunMode::lambda1;
  if (s == "mms") return RunMode::mms;
  if (s == "check") return RunMode::check;
  throw ConfigError("unknown mode '" + s + "' (expected solve, lambda1, mms or check)");
}

enum class DomainType { square, disk, file };

enum class FieldFormat { csv, vtk };

struct RunConfig {
  RunMode mode = RunMode::solve;

  DomainType domain = DomainType::square;
  int n = 16;
  int n_boundary = 8;
  int refinement = 0;
  fs::path mesh_file;

  std::string p_text;
  std::string alpha_text;
  double lambda_lo = 0.0;
  double lambda_hi = 0.0;
  std::string a11_text = "1", a12_text = "0", a22_text = "1";
  std::string f_text;
  fs::path f_field;
  double alpha_t_check = 1e3;

  Expression p, alpha, a11, a12, a22, f;

  InnerOptions inner;
  OuterOptions outer;
  int quadrature_degree = 4;

  fs::path output_dir = "out";
  std::vector<FieldFormat> formats{FieldFormat::csv};
  std::string prefix = "solution";

  std::uint64_t seed = 42;
  std::string mms_case = "disk-p3";
  int mms_levels = 3;
  long check_draws = 10000;
};

namespace detail {

/// Strips an inline comment and surrounding quotes from an INI value.
inline std::string clean_value(const std::string& raw, const std::string& key) {
  std::string s = raw;
  auto trim = [](std::string& t) {
    const auto b = t.find_first_not_of(" \t\r");
    const auto e = t.find_last_not_of(" \t\r");
    t = b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
  };
  trim(s);
  if (!s.empty() && (s.front() == '"' || s.front() == '\'')) {
    const char q = s.front();
    const auto close = s.find(q, 1);
    if (close == std::string::npos) throw ConfigError("unterminated quote in value of '" + key + "'");
    std::string rest = s.substr(close + 1);
    trim(rest);
    if (!rest.empty() && rest.front() != ';' && rest.front() != '#') {
      throw ConfigError("unexpected text after quoted value of '" + key + "'");
    }
    return s.substr(1, close - 1);
  }
  for (const char* marker : {" ;", " #", "\t;", "\t#"}) {
    const auto pos = s.find(marker);
    if (pos != std::string::npos) s = s.substr(0, pos);
  }
  trim(s);
  return s;
}

class ConfigReader {
public:
  ConfigReader(const boost::property_tree::ptree& tree) {
    static const std::map<std::string, std::set<std::string>> known{
        {"domain", {"type", "n", "n_boundary", "refinement", "mesh"}},
        {"problem", {"p", "alpha", "lambda", "Lambda", "a11", "a12", "a22", "f", "f_field",
                     "alpha_t_check"}},
        {"solver", {"grad_tol", "max_iters", "eps_reg", "backtrack", "armijo", "max_backtracks",
                    "fix_tol", "max_outer", "theta", "min_theta", "quadrature_degree",
                    "monitor_bounds", "bound_slack", "lambda1_restarts", "lambda1_max_iters"}},
        {"output", {"directory", "format", "prefix"}},
        {"run", {"mode", "seed", "case", "levels", "draws"}},
    };
    for (const auto& [section, body] : tree) {
      auto it = known.find(section);
      if (it == known.end()) {
        if (body.empty()) throw ConfigError("key '" + section + "' must appear inside a section");
        throw ConfigError("unknown section [" + section + "]");
      }
      for (const auto& [key, value] : body) {
        if (!it->second.count(key)) throw ConfigError("unknown key '" + section + "." + key + "'");
        values_[section + "." + key] = clean_value(value.data(), section + "." + key);
      }
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string text(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  }

  std::string text(const std::string& key, const std::string& fallback) const {
    return has(key) ? text(key) : fallback;
  }

  double number(const std::string& key) const {
    const std::string s = text(key);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw ConfigError("key '" + key + "' expects a number, got '" + s + "'");
    }
    return v;
  }

  double number(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  long integer(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const std::string s = text(key);
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("key '" + key + "' expects an integer, got '" + s + "'");
    }
    return v;
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string s = text(key);
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
    throw ConfigError("key '" + key + "' expects true or false, got '" + s + "'");
  }

private:
  std::map<std::string, std::string> values_;
};

inline Expression parse_expression(const std::string& key, const std::string& source,
                                   const std::vector<std::string>& vars) {
  try {
    return Expression::parse(source, vars);
  } catch (const ParseError& e) {
    throw ConfigError("bad expression for '" + key + "' at offset " + std::to_string(e.offset()) +
                      ": " + e.what());
  }
}

inline int positive_int(long v, const std::string& key, long min = 1) {
  if (v < min || v > 1'000'000) {
    throw ConfigError("key '" + key + "' must be an integer >= " + std::to_string(min));
  }
  return static_cast<int>(v);
}

} // namespace detail

/// Everything a solve or lambda1 run needs, built from a config.
struct ProblemSetup {
  std::shared_ptr<const Mesh> mesh;
  std::shared_ptr<const FunctionSpace> space;
  std::shared_ptr<const ProblemData> data;  // solve mode only
  std::optional<ExponentField> exponent;
};

inline Mesh build_mesh(const RunConfig& cfg) {
  switch (cfg.domain) {
    case DomainType::square: return structured_square_mesh(cfg.n);
    case DomainType::disk: return polygonal_disk_mesh(cfg.n_boundary, cfg.refinement);
    case DomainType::file:
      try {
        return load_mesh(cfg.mesh_file);
      } catch (const MeshError& e) {
        throw ConfigError(std::string("mesh file: ") + e.what());
      }
  }
  throw ConfigError("unknown domain type");
}

inline DiscreteField read_field_csv(std::shared_ptr<const Mesh> mesh, const fs::path& path);

/// Samples every coefficient on the configured mesh and checks the
/// structural hypotheses. Solve mode requires p_minus > 2.
inline ProblemSetup build_problem(const RunConfig& cfg) {
  ProblemSetup s;
  s.mesh = std::make_shared<const Mesh>(build_mesh(cfg));
  s.space = std::make_shared<const FunctionSpace>(s.mesh, cfg.quadrature_degree);
  if (cfg.mode != RunMode::solve && cfg.mode != RunMode::lambda1) return s;
  const auto mode = cfg.mode == RunMode::solve ? ExponentMode::solver : ExponentMode::diagnostic;
  s.exponent.emplace(*s.space, spatial_function(cfg.p), mode);
  if (cfg.mode == RunMode::lambda1) return s;
  MatrixField a(spatial_function(cfg.a11), spatial_function(cfg.a12), spatial_function(cfg.a22));
  AlphaCoefficient alpha(state_function(cfg.alpha), cfg.lambda_lo, cfg.lambda_hi,
                         cfg.alpha.uses_variable("t"));
  SourceTerm f = cfg.f_field.empty() ? SourceTerm(spatial_function(cfg.f))
                                     : SourceTerm(read_field_csv(s.mesh, cfg.f_field));
  s.data = std::make_shared<const ProblemData>(s.space, *s.exponent, std::move(a), std::move(alpha),
                                               std::move(f), cfg.alpha_t_check);
  return s;
}

inline RunConfig parse_config_text(const std::string& text, const fs::path& base_dir = ".",
                                   std::optional<RunMode> mode_override = std::nullopt) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  detail::ConfigReader r(tree);
  RunConfig cfg;
  cfg.mode = mode_override ? *mode_override : parse_mode(r.text("run.mode", "solve"));
  cfg.seed = static_cast<std::uint64_t>(r.integer("run.seed", 42));
  cfg.mms_case = r.text("run.case", cfg.mms_case);
  cfg.mms_levels = detail::positive_int(r.integer("run.levels", 3), "run.levels", 3);
  cfg.check_draws = detail::positive_int(r.integer("run.draws", 10000), "run.draws");

  if (cfg.mode == RunMode::solve || cfg.mode == RunMode::lambda1) {
    const std::string type = r.text("domain.type");
    if (type == "square") {
      cfg.domain = DomainType::square;
      cfg.n = detail::positive_int(r.integer("domain.n", 16), "domain.n");
    } else if (type == "disk") {
      cfg.domain = DomainType::disk;
      cfg.n_boundary = detail::positive_int(r.integer("domain.n_boundary", 8), "domain.n_boundary", 8);
      cfg.refinement = detail::positive_int(r.integer("domain.refinement", 0), "domain.refinement", 0);
    } else if (type == "file") {
      cfg.domain = DomainType::file;
      cfg.mesh_file = base_dir / r.text("domain.mesh");
    } else {
      throw ConfigError("domain.type must be square, disk or file, got '" + type + "'");
    }

    const std::vector<std::string> xy{"x", "y"};
    cfg.p_text = r.text("problem.p");
    cfg.p = detail::parse_expression("problem.p", cfg.p_text, xy);
  }

  if (cfg.mode == RunMode::solve) {
    const std::vector<std::string> xy{"x", "y"};
    cfg.alpha_text = r.text("problem.alpha");
    cfg.alpha = detail::parse_expression("problem.alpha", cfg.alpha_text, {"x", "y", "t"});
    cfg.lambda_lo = r.number("problem.lambda");
    cfg.lambda_hi = r.number("problem.Lambda");
    if (!(cfg.lambda_lo > 0.0) || !(cfg.lambda_lo <= cfg.lambda_hi)) {
      throw ConfigError("declared bounds must satisfy 0 < lambda <= Lambda");
    }
    cfg.alpha_t_check = r.number("problem.alpha_t_check", cfg.alpha_t_check);
    if (!(cfg.alpha_t_check >= 0.0)) throw ConfigError("problem.alpha_t_check must be >= 0");
    cfg.a11_text = r.text("problem.a11", "1");
    cfg.a12_text = r.text("problem.a12", "0");
    cfg.a22_text = r.text("problem.a22", "1");
    cfg.a11 = detail::parse_expression("problem.a11", cfg.a11_text, xy);
    cfg.a12 = detail::parse_expression("problem.a12", cfg.a12_text, xy);
    cfg.a22 = detail::parse_expression("problem.a22", cfg.a22_text, xy);
    if (r.has("problem.f") == r.has("problem.f_field")) {
      throw ConfigError("exactly one of problem.f and problem.f_field is required");
    }
    if (r.has("problem.f")) {
      cfg.f_text = r.text("problem.f");
      cfg.f = detail::parse_expression("problem.f", cfg.f_text, xy);
    } else {
      cfg.f_field = base_dir / r.text("problem.f_field");
    }
  }

  cfg.inner.grad_tol = r.number("solver.grad_tol", cfg.inner.grad_tol);
  cfg.inner.max_iters = detail::positive_int(r.integer("solver.max_iters", cfg.inner.max_iters), "solver.max_iters");
  cfg.inner.eps_reg = r.number("solver.eps_reg", cfg.inner.eps_reg);
  cfg.inner.backtrack = r.number("solver.backtrack", cfg.inner.backtrack);
  cfg.inner.armijo = r.number("solver.armijo", cfg.inner.armijo);
  cfg.inner.max_backtracks = detail::positive_int(
      r.integer("solver.max_backtracks", cfg.inner.max_backtracks), "solver.max_backtracks");
  cfg.outer.fix_tol = r.number("solver.fix_tol", cfg.outer.fix_tol);
  cfg.outer.max_outer = detail::positive_int(r.integer("solver.max_outer", cfg.outer.max_outer), "solver.max_outer");
  cfg.outer.theta = r.number("solver.theta", cfg.outer.theta);
  cfg.outer.min_theta = r.number("solver.min_theta", std::min(cfg.outer.min_theta, cfg.outer.theta));
  cfg.outer.monitor_bounds = r.boolean("solver.monitor_bounds", cfg.outer.monitor_bounds);
  cfg.outer.bound_slack = r.number("solver.bound_slack", cfg.outer.bound_slack);
  cfg.outer.lambda1.restarts = detail::positive_int(
      r.integer("solver.lambda1_restarts", cfg.outer.lambda1.restarts), "solver.lambda1_restarts");
  cfg.outer.lambda1.max_iters = detail::positive_int(
      r.integer("solver.lambda1_max_iters", cfg.outer.lambda1.max_iters), "solver.lambda1_max_iters");
  cfg.outer.lambda1.seed = cfg.seed;
  cfg.quadrature_degree = static_cast<int>(r.integer("solver.quadrature_degree", 4));
  if (cfg.quadrature_degree != 1 && cfg.quadrature_degree != 2 && cfg.quadrature_degree != 4 &&
      cfg.quadrature_degree != 5) {
    throw ConfigError("solver.quadrature_degree must be 1, 2, 4 or 5");
  }
  cfg.inner.validate();
  cfg.outer.validate();

  cfg.output_dir = r.text("output.directory", "out");
  cfg.prefix = r.text("output.prefix", "solution");
  const std::string format = r.text("output.format", "csv");
  if (format == "csv") {
    cfg.formats = {FieldFormat::csv};
  } else if (format == "vtk") {
    cfg.formats = {FieldFormat::vtk};
  } else if (format == "both") {
    cfg.formats = {FieldFormat::csv, FieldFormat::vtk};
  } else {
    throw ConfigError("output.format must be csv, vtk or both, got '" + format + "'");
  }
  return cfg;
}

/// Reads and validates a config file. All expressions are parsed, and for
/// solve and lambda1 runs every coefficient is sampled on the mesh and
/// checked against its declared hypotheses.
inline RunConfig parse_config(const fs::path& path,
                              std::optional<RunMode> mode_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig cfg = parse_config_text(buf.str(), path.parent_path(), mode_override);
  build_problem(cfg);
  return cfg;
}

// ---- fields ----------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_field_csv(const DiscreteField& u, std::ostream& out) {
  out << "x,y,u\n";
  for (std::size_t i = 0; i < u.size(); ++i) {
    const auto& p = u.mesh().node(i);
    out << format_double(p.x) << ',' << format_double(p.y) << ',' << format_double(u[i]) << '\n';
  }
}

inline void write_field_vtk(const DiscreteField& u, std::ostream& out) {
  const auto& mesh = u.mesh();
  out << "# vtk DataFile Version 3.0\n"
      << "apx field u\n"
      << "ASCII\n"
      << "DATASET UNSTRUCTURED_GRID\n"
      << "POINTS " << mesh.num_nodes() << " double\n";
  for (const auto& p : mesh.nodes()) out << format_double(p.x) << ' ' << format_double(p.y) << " 0\n";
  out << "CELLS " << mesh.num_triangles() << ' ' << 4 * mesh.num_triangles() << '\n';
  for (const auto& t : mesh.triangles()) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  out << "CELL_TYPES " << mesh.num_triangles() << '\n';
  for (std::size_t e = 0; e < mesh.num_triangles(); ++e) out << "5\n";
  out << "POINT_DATA " << mesh.num_nodes() << '\n'
      << "SCALARS u double 1\n"
      << "LOOKUP_TABLE default\n";
  for (std::size_t i = 0; i < u.size(); ++i) out << format_double(u[i]) << '\n';
}

inline void write_field(const DiscreteField& u, FieldFormat format, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ExitCode::config_error, "cannot write field file '" + path.string() + "'");
  if (format == FieldFormat::csv) {
    write_field_csv(u, out);
  } else {
    write_field_vtk(u, out);
  }
  if (!out) throw Error(ExitCode::config_error, "write failed for '" + path.string() + "'");
}

/// Reads a CSV field written by write_field_csv. Rows must list the mesh
/// nodes in order; coordinates are checked against the mesh.
inline DiscreteField read_field_csv(std::shared_ptr<const Mesh> mesh, std::istream& in,
                                    const std::string& origin = "field") {
  std::string line;
  if (!std::getline(in, line) || line != "x,y,u") {
    throw ConfigError(origin + ": expected header 'x,y,u'");
  }
  std::vector<double> values;
  values.reserve(mesh->num_nodes());
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    double cols[3];
    const char* ptr = line.data();
    const char* end = line.data() + line.size();
    for (int c = 0; c < 3; ++c) {
      auto res = std::from_chars(ptr, end, cols[c]);
      if (res.ec != std::errc()) {
        throw ConfigError(origin + " line " + std::to_string(line_no) + ": bad number");
      }
      ptr = res.ptr;
      if (c < 2) {
        if (ptr == end || *ptr != ',') {
          throw ConfigError(origin + " line " + std::to_string(line_no) + ": expected 3 columns");
        }
        ++ptr;
      }
    }
    if (ptr != end) throw ConfigError(origin + " line " + std::to_string(line_no) + ": trailing text");
    const std::size_t i = values.size();
    if (i >= mesh->num_nodes()) throw ConfigError(origin + ": more rows than mesh nodes");
    const auto& node = mesh->node(i);
    if (std::abs(node.x - cols[0]) > 1e-12 || std::abs(node.y - cols[1]) > 1e-12) {
      throw ConfigError(origin + " line " + std::to_string(line_no) +
                        ": coordinates do not match mesh node " + std::to_string(i));
    }
    values.push_back(cols[2]);
  }
  if (values.size() != mesh->num_nodes()) {
    throw ConfigError(origin + ": " + std::to_string(values.size()) + " rows for " +
                      std::to_string(mesh->num_nodes()) + " mesh nodes");
  }
  return DiscreteField(std::move(mesh), std::move(values));
}

inline DiscreteField read_field_csv(std::shared_ptr<const Mesh> mesh, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open field file '" + path.string() + "'");
  return read_field_csv(std::move(mesh), in, path.string());
}

// ---- reports ---------------------------------------------------------------

/// Key/value report lines plus a JSON mirror, built together so the two never
/// disagree.
class Report {
public:
  void set(const std::string& key, double v) {
    lines_.push_back(key + " " + format_double(v));
    json_[key] = v;
  }
  void set(const std::string& key, long long v) {
    lines_.push_back(key + " " + std::to_string(v));
    json_[key] = v;
  }
  void set(const std::string& key, int v) { set(key, static_cast<long long>(v)); }
  void set(const std::string& key, std::size_t v) { set(key, static_cast<long long>(v)); }
  void set(const std::string& key, bool v) {
    lines_.push_back(key + (v ? " true" : " false"));
    json_[key] = v;
  }
  void set(const std::string& key, const std::string& v) {
    lines_.push_back(key + " " + v);
    json_[key] = v;
  }
  void set(const std::string& key, const char* v) { set(key, std::string(v)); }

  void note(const std::string& text) {
    lines_.push_back("note " + text);
    json_["notes"].push_back(text);
  }

  /// A whitespace-separated table in the text form, an array of objects in JSON.
  void table(const std::string& name, const std::vector<std::string>& columns,
             const std::vector<std::vector<std::string>>& rows, const json& rows_json) {
    std::string header = "table " + name;
    for (const auto& c : columns) header += " " + c;
    lines_.push_back(header);
    for (const auto& r : rows) {
      std::string line = " ";
      for (const auto& c : r) line += " " + c;
      lines_.push_back(line);
    }
    json_[name] = rows_json;
  }

  std::string text() const {
    std::string out;
    for (const auto& l : lines_) out += l + "\n";
    return out;
  }
  std::string json_text() const { return json_.dump(2) + "\n"; }
  const json& data() const noexcept { return json_; }

  void save(const fs::path& dir, const std::string& stem) const {
    write_text(dir / (stem + ".txt"), text());
    write_text(dir / (stem + ".json"), json_text());
  }

  static void write_text(const fs::path& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw Error(ExitCode::config_error, "cannot write '" + path.string() + "'");
    out << body;
  }

private:
  std::vector<std::string> lines_;
  json json_ = json::object();
};

inline void describe_mesh(Report& r, const Mesh& mesh) {
  r.set("mesh_nodes", mesh.num_nodes());
  r.set("mesh_triangles", mesh.num_triangles());
  r.set("mesh_boundary_nodes", mesh.boundary_nodes().size());
  r.set("mesh_max_edge", mesh.max_edge_length());
}

inline Report solve_report(const RunConfig& cfg, const ProblemData& data, const FixedPointResult& res) {
  const auto& rep = res.report;
  Report r;
  r.set("mode", "solve");
  r.set("status", to_string(rep.status));
  r.set("outer_iterations", rep.outer_iterations);
  describe_mesh(r, data.space().mesh());
  r.set("quadrature_degree", cfg.quadrature_degree);
  r.set("p", cfg.p_text);
  r.set("alpha", cfg.alpha_text);
  r.set("a11", cfg.a11_text);
  r.set("a12", cfg.a12_text);
  r.set("a22", cfg.a22_text);
  r.set("f", cfg.f_field.empty() ? cfg.f_text : "field:" + cfg.f_field.filename().string());
  r.set("seed", static_cast<long long>(cfg.seed));
  r.set("p_minus", data.exponent().p_minus());
  r.set("p_plus", data.exponent().p_plus());
  r.set("lambda", data.alpha().lambda_lo());
  r.set("Lambda", data.alpha().lambda_hi());
  r.set("bounds_monitored", rep.bounds_monitored);
  if (rep.bounds_monitored) {
    r.set("lambda1_estimate", rep.lambda1_estimate);
    r.set("source_conjugate_modular", rep.constants.source_conjugate_modular);
    r.set("epsilon", rep.constants.epsilon);
    r.set("C_epsilon", rep.constants.c_epsilon);
    r.set("C", rep.constants.c);
    r.set("C1", rep.constants.c1);
    r.set("bounds_hold", rep.bounds_hold(cfg.outer.bound_slack));
  }
  r.set("self_consistent", rep.self_consistent);
  r.set("self_consistency_residual", rep.self_consistency_residual);
  r.set("solution_max_abs", res.u.max_abs());
  if (rep.bounds_monitored) {
    r.note("constants use the numerical lambda1 estimate (an upper bound over the discrete space)");
    r.note("epsilon = min(1, lambda * lambda1) / 2 keeps lambda - epsilon / lambda1 positive");
  }
  r.note("smoothness of the matrix entries is not verified");

  const std::vector<std::string> cols{"k", "theta", "diff_norm", "diff_modular", "gradient_modular",
                                      "modular", "iterate_modular", "energy", "lemma2_slack",
                                      "remark1_slack", "ball_invariant", "inner_iterations",
                                      "inner_status"};
  std::vector<std::vector<std::string>> rows;
  json rows_json = json::array();
  for (const auto& it : rep.iterations) {
    rows.push_back({std::to_string(it.index), format_double(it.theta), format_double(it.diff_norm),
                    format_double(it.diff_modular), format_double(it.gradient_modular),
                    format_double(it.modular), format_double(it.iterate_modular),
                    format_double(it.energy),
                    rep.bounds_monitored ? format_double(it.lemma2_slack) : "-",
                    rep.bounds_monitored ? format_double(it.remark1_slack) : "-",
                    it.ball_invariant ? "true" : "false", std::to_string(it.inner_iterations),
                    to_string(it.inner_status)});
    json row;
    row["k"] = it.index;
    row["theta"] = it.theta;
    row["diff_norm"] = it.diff_norm;
    row["diff_modular"] = it.diff_modular;
    row["gradient_modular"] = it.gradient_modular;
    row["modular"] = it.modular;
    row["iterate_modular"] = it.iterate_modular;
    row["energy"] = it.energy;
    if (rep.bounds_monitored) {
      row["lemma2_slack"] = it.lemma2_slack;
      row["remark1_slack"] = it.remark1_slack;
    }
    row["ball_invariant"] = it.ball_invariant;
    row["inner_iterations"] = it.inner_iterations;
    row["inner_status"] = to_string(it.inner_status);
    rows_json.push_back(row);
  }
  r.table("iterations", cols, rows, rows_json);
  return r;
}

// ---- run modes -------------------------------------------------------------

struct RunOutcome {
  ExitCode code = ExitCode::success;
  std::string summary;
};

inline void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ExitCode::config_error, "cannot create output directory '" + dir.string() + "'");
}

inline RunOutcome run_solve(const RunConfig& cfg) {
  ProblemSetup setup = build_problem(cfg);
  auto result = fixed_point_solve(setup.data, cfg.inner, cfg.outer);
  prepare_output_dir(cfg.output_dir);
  for (auto format : cfg.formats) {
    write_field(result.u, format,
                cfg.output_dir / (cfg.prefix + (format == FieldFormat::csv ? ".csv" : ".vtk")));
  }
  Report report = solve_report(cfg, *setup.data, result);
  report.save(cfg.output_dir, "report");

  const auto& rep = result.report;
  RunOutcome out;
  out.summary = std::string("status ") + to_string(rep.status) + ", outer iterations " +
                std::to_string(rep.outer_iterations) + ", self-consistency residual " +
                format_double(rep.self_consistency_residual);
  if (!rep.converged() || !rep.self_consistent) {
    out.code = ExitCode::non_convergence;
  } else if (rep.bounds_monitored && !rep.bounds_hold(cfg.outer.bound_slack)) {
    out.code = ExitCode::invariant_violation;
    out.summary += ", a priori bound violated";
  }
  return out;
}

inline RunOutcome run_lambda1(const RunConfig& cfg) {
  ProblemSetup setup = build_problem(cfg);
  auto est = estimate_lambda1(*setup.space, *setup.exponent, cfg.outer.lambda1);
  prepare_output_dir(cfg.output_dir);
  write_field(est.minimizer, FieldFormat::csv, cfg.output_dir / "lambda1_minimizer.csv");
  Report r;
  r.set("mode", "lambda1");
  describe_mesh(r, *setup.mesh);
  r.set("quadrature_degree", cfg.quadrature_degree);
  r.set("p", cfg.p_text);
  r.set("p_minus", setup.exponent->p_minus());
  r.set("p_plus", setup.exponent->p_plus());
  r.set("seed", static_cast<long long>(cfg.seed));
  r.set("restarts_used", est.restarts_used);
  r.set("probes_evaluated", static_cast<long long>(est.probes_evaluated));
  r.set("lambda1_estimate", est.value);
  r.save(cfg.output_dir, "lambda1_report");
  return {ExitCode::success, "lambda1 estimate " + format_double(est.value)};
}

/// Square cases run on n = 8 * 2^k, disk cases on refinement 1..levels.
inline std::vector<int> mms_levels(const ManufacturedCase& c, int levels) {
  std::vector<int> out;
  for (int k = 0; k < levels; ++k) out.push_back(c.domain == DomainKind::square ? 8 << k : k + 1);
  return out;
}

inline RunOutcome run_mms(const RunConfig& cfg, std::ostream& table_out) {
  auto c = builtin_case(cfg.mms_case);
  ConvergenceOptions opts;
  opts.inner = cfg.inner;
  opts.outer = cfg.outer;
  opts.outer.monitor_bounds = false;
  opts.quadrature_degree = cfg.quadrature_degree;
  auto rows = convergence_study(c, mms_levels(c, cfg.mms_levels), opts);
  write_convergence_csv(rows, table_out);
  return {ExitCode::success, "mms case " + c.name + ", " + std::to_string(rows.size()) + " levels"};
}

inline RunOutcome run_check(const RunConfig& cfg, std::ostream& out) {
  CheckOptions opts;
  opts.seed = cfg.seed;
  opts.draws = cfg.check_draws;
  auto res = run_inequality_checks(opts);
  out << "inequality draws violations min_relative_slack\n";
  for (const auto& t : res.tallies) {
    out << t.name << ' ' << t.draws << ' ' << t.violations << ' ' << format_double(t.min_slack) << '\n';
  }
  if (!res.passed()) return {ExitCode::invariant_violation, "inequality violations found"};
  return {ExitCode::success, "no inequality violations"};
}

/// Runs the configured mode. Tables from mms and check go to `out`.
inline RunOutcome run(const RunConfig& cfg, std::ostream& out = std::cout) {
  switch (cfg.mode) {
    case RunMode::solve: return run_solve(cfg);
    case RunMode::lambda1: return run_lambda1(cfg);
    case RunMode::mms: return run_mms(cfg, out);
    case RunMode::check: return run_check(cfg, out);
  }
  throw ConfigError("unknown mode");
}

/// Machine-readable error record.
inline std::string error_record(ExitCode code, const std::string& kind, const std::string& message) {
  json j;
  j["status"] = "error";
  j["exit_code"] = static_cast<int>(code);
  j["kind"] = kind;
  j["message"] = message;
  return j.dump();
}

} // namespace apx
