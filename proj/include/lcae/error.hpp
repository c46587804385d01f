#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lcae {

// Exit codes shared by the command-line tools.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, divergence = 3 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

// File could not be opened or parsed.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Input contains NaN/Inf values.
class DataIntegrityError : public Error {
 public:
  DataIntegrityError(const std::string& what, std::size_t bad_count)
      : Error(what), bad_count_(bad_count) {}
  std::size_t bad_count() const noexcept { return bad_count_; }

 private:
  std::size_t bad_count_;
};

// Zero variance, constant volumes and similar inputs with no usable signal.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

// Shape or dimension mismatch between arguments.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite activation or loss. `where` names the offending layer/term.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& where, const std::string& what)
      : Error(what + " [" + where + "]"), where_(where) {}
  const std::string& where() const noexcept { return where_; }
  ExitCode exit_code() const noexcept override { return ExitCode::divergence; }

 private:
  std::string where_;
};

// Metric cannot be computed, e.g. ROC with a single class.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// No room inside the foreground to place an anomaly.
class PlacementError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

}  // namespace lcae
