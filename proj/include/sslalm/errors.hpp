#pragma once

#include <stdexcept>
#include <string>

namespace sslalm {

// Base of every error the library throws. `exit_code` is what the CLI returns.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

// Caller violated a precondition (non-scalar loss, empty record set, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(what, 2) {}
};

// Incompatible tensor shapes. The message names the op and the dims.
class DimensionError : public ContractError {
 public:
  explicit DimensionError(const std::string& what) : ContractError(what) {}
};

class UnsupportedOpError : public ContractError {
 public:
  explicit UnsupportedOpError(const std::string& what) : ContractError(what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

// Malformed or missing files: spectrograms, checkpoints, datasets.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, 3) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, 4) {}
};

}  // namespace sslalm
