#pragma once

#include <stdexcept>
#include <string>

namespace msnn {

// Broad families used to map failures onto process exit codes.
enum class ErrorKind {
  kConfig,  // bad parameters, unknown keys, missing weights
  kData,    // malformed or inconsistent input data
  kBudget,  // search would exceed a configured enumeration budget
  kUsage,   // API misuse by the caller
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorKind::kData, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConflictError : public Error {
 public:
  explicit ConflictError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

// Querying an outcome that was never observed.
class MissingEntryError : public Error {
 public:
  explicit MissingEntryError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class DegenerateMatrixError : public Error {
 public:
  explicit DegenerateMatrixError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class BudgetError : public Error {
 public:
  explicit BudgetError(const std::string& what) : Error(ErrorKind::kBudget, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

// Process exit code for a failure of the given kind: 2 config, 3 data, 4 budget.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace msnn
