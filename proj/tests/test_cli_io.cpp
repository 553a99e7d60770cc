#include "apx/cli_io.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <sys/wait.h>

using namespace apx;
namespace fs = std::filesystem;

namespace {

const std::string kMinimal = R"([domain]
type = square
n = 4

[problem]
p = "3"
alpha = "1"
lambda = 1
Lambda = 1
f = "1"
)";

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("apx_cli_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
  auto pos = text.find(from);
  if (pos == std::string::npos) throw std::runtime_error("pattern not found: " + from);
  return text.replace(pos, from.size(), to);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(APX_EXE) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int config_error_code(const std::string& text) {
  try {
    build_problem(parse_config_text(text));
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return 0;
}

} // namespace

TEST(Config, MinimalConfigIsValid) {
  auto cfg = parse_config_text(kMinimal);
  EXPECT_EQ(cfg.mode, RunMode::solve);
  EXPECT_EQ(cfg.n, 4);
  EXPECT_EQ(cfg.p_text, "3");
  EXPECT_NO_THROW(build_problem(cfg));
}

TEST(Config, BadExpressionReportsOffset) {
  try {
    parse_config_text(replace(kMinimal, "p = \"3\"", "p = \"2.5-?\""));
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("problem.p"), std::string::npos) << msg;
    EXPECT_NE(msg.find("offset 4"), std::string::npos) << msg;
    EXPECT_EQ(e.code(), ExitCode::config_error);
  }
}

TEST(Config, HypothesisViolationsAreInvariantErrors) {
  EXPECT_EQ(config_error_code(replace(kMinimal, "alpha = \"1\"", "alpha = \"0.5\"")), 4);
  EXPECT_EQ(config_error_code(replace(kMinimal, "p = \"3\"", "p = \"2\"")), 4);
  EXPECT_EQ(config_error_code(replace(kMinimal, "f = \"1\"", "f = \"1\"\na12 = \"0.5\"")), 4);
  EXPECT_EQ(config_error_code(replace(kMinimal, "f = \"1\"", "f = \"1/(x - x)\"")), 4);
}

TEST(Config, UnknownOrMissingEntriesRejected) {
  EXPECT_EQ(config_error_code(kMinimal + "bogus = 1\n"), 2);
  EXPECT_EQ(config_error_code(kMinimal + "[extra]\nk = 1\n"), 2);
  EXPECT_EQ(config_error_code(replace(kMinimal, "f = \"1\"\n", "")), 2);
  EXPECT_EQ(config_error_code(replace(kMinimal, "n = 4", "n = 0")), 2);
  EXPECT_EQ(config_error_code(replace(kMinimal, "type = square", "type = hexagon")), 2);
  EXPECT_EQ(config_error_code(kMinimal + "[run]\nmode = dance\n"), 2);
  EXPECT_EQ(config_error_code(kMinimal + "[solver]\ntheta = 2\n"), 2);
}

TEST(Config, QuotesAndInlineCommentsStripped) {
  auto cfg = parse_config_text(replace(kMinimal, "f = \"1\"", "f = 2*x  ; load\n[solver]\nmax_outer = 7 # cap"));
  EXPECT_EQ(cfg.f_text, "2*x");
  EXPECT_EQ(cfg.outer.max_outer, 7);
}

TEST(Config, SolverAndOutputKeys) {
  auto cfg = parse_config_text(kMinimal + R"([solver]
grad_tol = 1e-9
theta = 0.5
min_theta = 0.125
quadrature_degree = 5
monitor_bounds = false
[output]
directory = results
format = both
prefix = field
)",
                               "/base");
  EXPECT_EQ(cfg.inner.grad_tol, 1e-9);
  EXPECT_EQ(cfg.outer.theta, 0.5);
  EXPECT_EQ(cfg.quadrature_degree, 5);
  EXPECT_FALSE(cfg.outer.monitor_bounds);
  EXPECT_EQ(cfg.formats.size(), 2u);
  EXPECT_EQ(cfg.prefix, "field");
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"minimal.ini", "square_varp.ini", "constant_alpha.ini", "anisotropic.ini", "disk_p3.ini",
                           "lambda1_p2.ini"}) {
    EXPECT_NO_THROW(parse_config(fs::path(APX_CONFIG_DIR) / name)) << name;
  }
  EXPECT_THROW(parse_config("/nonexistent/config.ini"), ConfigError);
}

TEST(FieldIo, SmallestMeshHasFourZeroRows) {
  auto mesh = std::make_shared<const Mesh>(structured_square_mesh(1));
  std::ostringstream out;
  write_field_csv(DiscreteField(mesh), out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x,y,u");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0");
  }
  EXPECT_EQ(rows, 4);
}

TEST(FieldIoProperty, CsvRoundTripIsBitExact) {
  auto mesh = std::make_shared<const Mesh>(polygonal_disk_mesh(12, 2));
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> d(-1e3, 1e3);
  for (int trial = 0; trial < 10; ++trial) {
    DiscreteField u(mesh);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = d(rng) * std::pow(10.0, trial - 5);
    std::ostringstream out;
    write_field_csv(u, out);
    std::istringstream in(out.str());
    auto back = read_field_csv(mesh, in, "memory");
    for (std::size_t i = 0; i < u.size(); ++i) ASSERT_EQ(back[i], u[i]);
  }
}

TEST(FieldIo, CsvReaderRejectsMismatches) {
  auto mesh = std::make_shared<const Mesh>(structured_square_mesh(1));
  std::istringstream bad_header("a,b,c\n");
  EXPECT_THROW(read_field_csv(mesh, bad_header, "memory"), ConfigError);
  std::istringstream short_file("x,y,u\n0,0,0\n");
  EXPECT_THROW(read_field_csv(mesh, short_file, "memory"), ConfigError);
  std::istringstream moved("x,y,u\n0,0,0\n1,0,0\n0,1,0\n0.5,0.5,0\n");
  EXPECT_THROW(read_field_csv(mesh, moved, "memory"), ConfigError);
}

TEST(FieldIo, VtkLayout) {
  auto mesh = std::make_shared<const Mesh>(structured_square_mesh(3));
  std::ostringstream out;
  write_field_vtk(DiscreteField(mesh), out);
  std::istringstream in(out.str());
  std::string line;
  bool in_types = false;
  int types = 0;
  bool saw_points = false, saw_data = false;
  while (std::getline(in, line)) {
    if (line.rfind("POINTS 16", 0) == 0) saw_points = true;
    if (line.rfind("POINT_DATA 16", 0) == 0) saw_data = true;
    if (line.rfind("CELL_TYPES", 0) == 0) {
      EXPECT_EQ(line, "CELL_TYPES 18");
      in_types = true;
      continue;
    }
    if (in_types) {
      if (line.rfind("POINT_DATA", 0) == 0 || line.empty()) {
        in_types = false;
      } else {
        EXPECT_EQ(line, "5");
        ++types;
      }
    }
  }
  EXPECT_TRUE(saw_points);
  EXPECT_TRUE(saw_data);
  EXPECT_EQ(types, 18);
}

TEST(Modes, SolveConstantAlphaConfig) {
  auto cfg = parse_config(fs::path(APX_CONFIG_DIR) / "constant_alpha.ini");
  cfg.output_dir = scratch_dir("solve");
  auto outcome = run(cfg);
  EXPECT_EQ(outcome.code, ExitCode::success) << outcome.summary;
  auto report = json::parse(slurp(cfg.output_dir / "report.json"));
  EXPECT_EQ(report["self_consistent"], true);
  EXPECT_EQ(report["outer_iterations"], 2);
  EXPECT_TRUE(fs::exists(cfg.output_dir / "solution.csv"));
  EXPECT_TRUE(fs::exists(cfg.output_dir / "report.txt"));
  fs::remove_all(cfg.output_dir);
}

TEST(Modes, SolveIsDeterministic) {
  auto cfg = parse_config(fs::path(APX_CONFIG_DIR) / "anisotropic.ini");
  cfg.n = 8;
  cfg.output_dir = scratch_dir("det_a");
  ASSERT_EQ(run(cfg).code, ExitCode::success);
  auto first = cfg.output_dir;
  cfg.output_dir = scratch_dir("det_b");
  ASSERT_EQ(run(cfg).code, ExitCode::success);
  for (const char* f : {"report.txt", "report.json", "solution.vtk"}) {
    EXPECT_EQ(slurp(first / f), slurp(cfg.output_dir / f)) << f;
  }
  fs::remove_all(first);
  fs::remove_all(cfg.output_dir);
}

TEST(Modes, CheckSeedFortyTwo) {
  auto cfg = parse_config_text("[run]\nmode = check\nseed = 42\ndraws = 10000\n");
  std::ostringstream out;
  auto outcome = run(cfg, out);
  EXPECT_EQ(outcome.code, ExitCode::success) << out.str();
  std::istringstream in(out.str());
  std::string line, name;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    long draws = 0, violations = -1;
    row >> name >> draws >> violations;
    EXPECT_EQ(draws, 10000) << name;
    EXPECT_EQ(violations, 0) << name;
    ++rows;
  }
  EXPECT_EQ(rows, 4);
}

TEST(Modes, Lambda1WithinTwoPercent) {
  auto cfg = parse_config(fs::path(APX_CONFIG_DIR) / "lambda1_p2.ini");
  cfg.output_dir = scratch_dir("lambda1");
  ASSERT_EQ(run(cfg).code, ExitCode::success);
  auto report = json::parse(slurp(cfg.output_dir / "lambda1_report.json"));
  const double exact = 2.0 * std::numbers::pi * std::numbers::pi;
  EXPECT_LE(std::abs(report["lambda1_estimate"].get<double>() - exact) / exact, 0.02);
  EXPECT_TRUE(fs::exists(cfg.output_dir / "lambda1_minimizer.csv"));
  fs::remove_all(cfg.output_dir);
}

TEST(Modes, MmsTable) {
  auto cfg = parse_config_text("[run]\nmode = mms\ncase = square-p2-linear\nlevels = 3\n");
  std::ostringstream out;
  EXPECT_EQ(run(cfg, out).code, ExitCode::success);
  EXPECT_EQ(out.str().rfind("h,nodes,Linf_error,energy_error,observed_order\n", 0), 0u);
}

TEST(ErrorRecord, IsJson) {
  auto j = json::parse(error_record(ExitCode::config_error, "config", "bad"));
  EXPECT_EQ(j["exit_code"], 2);
  EXPECT_EQ(j["kind"], "config");
  EXPECT_EQ(j["message"], "bad");
}

TEST(Executable, ExitCodes) {
  auto dir = scratch_dir("exe");
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
    return (dir / name).string();
  };
  const std::string out = " --out " + (dir / "o").string();
  EXPECT_EQ(run_cli("solve --config " + write("ok.ini", kMinimal) + out), 0);
  EXPECT_EQ(run_cli("solve --config " + write("bad.ini", replace(kMinimal, "p = \"3\"", "p = \"2.5-?\"")) + out), 2);
  EXPECT_EQ(run_cli("solve --config " + write("alpha.ini", replace(kMinimal, "alpha = \"1\"", "alpha = \"0.5\"")) + out),
            4);
  EXPECT_EQ(run_cli("solve --config " +
                    write("cap.ini", kMinimal + "[solver]\nmax_iters = 1\nmonitor_bounds = false\n") + out),
            3);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("mms --case nope --levels 3"), 2);
  EXPECT_EQ(run_cli("check --seed 42 --draws 500"), 0);
  EXPECT_EQ(run_cli("mesh gen --square 3 --out " + (dir / "m.txt").string()), 0);
  EXPECT_EQ(run_cli("mesh info " + (dir / "m.txt").string()), 0);
  fs::remove_all(dir);
}
