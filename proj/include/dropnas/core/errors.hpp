#ifndef DROPNAS_CORE_ERRORS_HPP
#define DROPNAS_CORE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dropnas {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: config files, CLI flags, shape mismatches from wiring.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// NaN/Inf surfaced by a numeric kernel.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

// Internal invariant broken; indicates a bug, not bad input.
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error("contract violation: " + msg) {}
};

}  // namespace dropnas

#endif
