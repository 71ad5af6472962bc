#pragma once

#include <stdexcept>
#include <string>

namespace fscil {

// Error taxonomy. The CLI maps these onto distinct exit codes
// (config -> 2, data -> 3, anything else -> 4).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public ConfigError {
 public:
  explicit ValidationError(const std::string& msg) : ConfigError(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class InsufficientDataError : public DataError {
 public:
  explicit InsufficientDataError(const std::string& msg) : DataError(msg) {}
};

class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fscil
