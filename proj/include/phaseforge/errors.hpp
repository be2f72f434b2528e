#ifndef PHASEFORGE_ERRORS_HPP
#define PHASEFORGE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace phaseforge {

// Violated precondition or shape/domain contract of an operation.
struct contract_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad or inconsistent configuration (missing inputs, invalid sections).
// The CLI maps this to exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File/dataset level failures (unreadable container, missing arrays).
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite state encountered during integration, training or inference.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace phaseforge

#endif
