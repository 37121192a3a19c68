#pragma once

#include <stdexcept>
#include <string>

namespace trireid {

/// Bad configuration value or malformed config document. CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset / manifest / protocol problem. CLI exit code 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite loss during optimization. CLI exit code 4.
struct DivergenceError : std::runtime_error {
  int step;
  std::string term;
  DivergenceError(int step_, std::string term_)
      : std::runtime_error("non-finite loss term '" + term_ + "' at step " +
                           std::to_string(step_)),
        step(step_),
        term(std::move(term_)) {}
};

}  // namespace trireid
