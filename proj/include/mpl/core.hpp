// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mpl {

// Bad data fed to an operation (wrong shape, empty input, out-of-range id).
class InvalidInputError : public std::runtime_error {
 public:
  explicit InvalidInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Inconsistent configuration (non-reconstructible STFT setup, route II
// without adapters, double adapter insertion, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke an internal contract (e.g. handed a gradient for a frozen
// tensor to the optimizer).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

inline void require_input(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInputError(msg);
}

inline void require_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace mpl
