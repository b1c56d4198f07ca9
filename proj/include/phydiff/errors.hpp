#pragma once

#include <stdexcept>
#include <string>

namespace phydiff {

// Tensor extents that do not agree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration values or unsupported options.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition (index out of range, non-scalar loss, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or incompatible on-disk data (checkpoints, profile files, CSV).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a NaN or Inf loss.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
  [[nodiscard]] long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace phydiff
