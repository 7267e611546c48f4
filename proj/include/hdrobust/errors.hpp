#pragma once

#include <stdexcept>
#include <string>

namespace hdrobust {

// Invalid user-supplied parameters or configuration. The CLI maps this to exit code 2.
class config_error : public std::invalid_argument {
 public:
  explicit config_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Runtime numerical failure (non-finite values, non-convergent subsolver).
// The CLI maps this to exit code 3.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hdrobust
