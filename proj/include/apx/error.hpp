#pragma once

#include <stdexcept>
#include <string>

namespace apx {

// Process exit codes used by the command-line driver.
enum class ExitCode : int {
  success = 0,
  config_error = 2,
  non_convergence = 3,
  invariant_violation = 4,
};

class Error : public std::runtime_error {
public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

private:
  ExitCode code_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::config_error, what) {}
};

class InvariantViolation : public Error {
public:
  explicit InvariantViolation(const std::string& what)
      : Error(ExitCode::invariant_violation, what) {}
};

class NonConvergence : public Error {
public:
  explicit NonConvergence(const std::string& what)
      : Error(ExitCode::non_convergence, what) {}
};

} // namespace apx
