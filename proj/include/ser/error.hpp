#pragma once

#include <stdexcept>
#include <string>

namespace ser {

/// Process exit codes reported by the command-line tool.
enum class ExitCode : int { Ok = 0, Usage = 1, Data = 2, Numeric = 3 };

/// Base for every error this library throws. Carries the exit code the
/// command-line tool maps it to.
class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ExitCode::Usage, what) {}
};

/// Malformed, missing or inconsistent input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::Data, what) {}
};

/// Non-finite values, divergence, failed gradient checks.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ExitCode::Numeric, what) {}
};

}  // namespace ser
