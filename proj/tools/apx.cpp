#include "apx/cli_io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

int fail(apx::ExitCode code, const std::string& kind, const std::string& message) {
  std::cerr << apx::error_record(code, kind, message) << '\n';
  return static_cast<int>(code);
}

const char* kind_of(apx::ExitCode code) {
  switch (code) {
    case apx::ExitCode::config_error: return "config_error";
    case apx::ExitCode::non_convergence: return "non_convergence";
    case apx::ExitCode::invariant_violation: return "invariant_violation";
    case apx::ExitCode::success: return "success";
  }
  return "error";
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"apx: variable-exponent nonlinear elliptic solver"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  auto* solve = app.add_subcommand("solve", "Solve the configured problem");
  solve->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  solve->add_option("--out", out_dir, "Output directory (overrides output.directory)");
  solve->add_option("--seed", seed, "Seed for the lambda1 estimator");

  auto* lambda1 = app.add_subcommand("lambda1", "Estimate lambda1 for the configured exponent");
  lambda1->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  lambda1->add_option("--out", out_dir, "Output directory (overrides output.directory)");
  lambda1->add_option("--seed", seed, "Seed for random restarts");

  std::string mms_case;
  int mms_levels = 3;
  std::string mms_out;
  auto* mms = app.add_subcommand("mms", "Convergence study on a builtin manufactured case");
  mms->add_option("--case", mms_case, "disk-p3, square-p2-linear or square-varp")->required();
  mms->add_option("--levels", mms_levels, "Number of mesh sizes (>= 3)");
  mms->add_option("--out", mms_out, "CSV output file (default stdout)");

  std::uint64_t check_seed = 42;
  long check_draws = 10000;
  auto* check = app.add_subcommand("check", "Randomized inequality suite");
  check->add_option("--seed", check_seed, "Random seed");
  check->add_option("--draws", check_draws, "Draws per inequality");

  auto* mesh = app.add_subcommand("mesh", "Mesh generation and inspection");
  mesh->require_subcommand(1);
  int square_n = 0;
  int disk_nb = 0;
  int disk_refine = 0;
  std::string mesh_out;
  auto* gen = mesh->add_subcommand("gen", "Write a generated mesh");
  auto* sq_opt = gen->add_option("--square", square_n, "Unit square with n x n cells");
  auto* disk_opt = gen->add_option("--disk", disk_nb, "Unit disk from an n-gon (n >= 8)");
  sq_opt->excludes(disk_opt);
  gen->add_option("--refine", disk_refine, "Disk refinement levels");
  gen->add_option("--out", mesh_out, "Mesh file")->required();
  std::string mesh_in;
  auto* info = mesh->add_subcommand("info", "Describe a mesh file");
  info->add_option("file", mesh_in, "Mesh file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(apx::ExitCode::config_error, "usage", e.what());
  }

  try {
    apx::RunConfig cfg;
    if (solve->parsed() || lambda1->parsed()) {
      const auto mode = solve->parsed() ? apx::RunMode::solve : apx::RunMode::lambda1;
      cfg = apx::parse_config(config_path, mode);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (seed) {
        cfg.seed = *seed;
        cfg.outer.lambda1.seed = *seed;
      }
    } else if (mms->parsed()) {
      if (mms_levels < 3) {
        return fail(apx::ExitCode::config_error, "config_error", "--levels must be at least 3");
      }
      cfg.mode = apx::RunMode::mms;
      cfg.mms_case = mms_case;
      cfg.mms_levels = mms_levels;
    } else if (check->parsed()) {
      cfg.mode = apx::RunMode::check;
      cfg.seed = check_seed;
      cfg.check_draws = check_draws;
    } else if (gen->parsed()) {
      if (*sq_opt) {
        if (square_n < 1) return fail(apx::ExitCode::config_error, "config_error", "--square must be >= 1");
        apx::save_mesh(apx::structured_square_mesh(square_n), mesh_out);
      } else if (*disk_opt) {
        if (disk_nb < 8 || disk_refine < 0) {
          return fail(apx::ExitCode::config_error, "config_error",
                      "--disk needs n >= 8 and --refine >= 0");
        }
        apx::save_mesh(apx::polygonal_disk_mesh(disk_nb, disk_refine), mesh_out);
      } else {
        return fail(apx::ExitCode::config_error, "config_error", "mesh gen needs --square or --disk");
      }
      return 0;
    } else if (info->parsed()) {
      const apx::Mesh m = apx::load_mesh(mesh_in);
      std::cout << "nodes " << m.num_nodes() << '\n'
                << "triangles " << m.num_triangles() << '\n'
                << "boundary_nodes " << m.boundary_nodes().size() << '\n'
                << "total_area " << apx::format_double(m.total_area()) << '\n'
                << "max_edge " << apx::format_double(m.max_edge_length()) << '\n';
      return 0;
    }

    apx::RunOutcome outcome;
    if (cfg.mode == apx::RunMode::mms && !mms_out.empty()) {
      std::ofstream table(mms_out);
      if (!table) return fail(apx::ExitCode::config_error, "config_error", "cannot write " + mms_out);
      outcome = apx::run(cfg, table);
    } else {
      outcome = apx::run(cfg, std::cout);
    }
    if (outcome.code != apx::ExitCode::success) {
      return fail(outcome.code, kind_of(outcome.code), outcome.summary);
    }
    std::cerr << outcome.summary << '\n';
    return 0;
  } catch (const apx::Error& e) {
    return fail(e.code(), kind_of(e.code()), e.what());
  } catch (const std::exception& e) {
    return fail(apx::ExitCode::invariant_violation, "internal", e.what());
  }
}
