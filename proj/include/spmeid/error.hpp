#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spmeid {

/// Base of every error raised by the toolkit. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function (stoichiometry
/// outside (0,1), saturated electrode, non-positive concentration).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (cell file, plan, normalizer).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Parameter set for which the stoichiometry system has no admissible root.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, std::string cause)
      : Error(what + " [" + cause + "]"), cause_(std::move(cause)) {}
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::string cause_;
};

enum class SimFailure { CutoffBreach, Instability, Saturation };

/// Reference simulation aborted at a given step.
class SimulationError : public Error {
 public:
  SimulationError(SimFailure kind, std::size_t step, const std::string& what)
      : Error(what + " at step " + std::to_string(step)), kind_(kind), step_(step) {}
  SimFailure kind() const noexcept { return kind_; }
  std::size_t step() const noexcept { return step_; }

 private:
  SimFailure kind_;
  std::size_t step_;
};

/// Non-finite loss, diverging iteration, or similar numerical breakdown.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape mismatch in the autodiff engine.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// backward() called on a graph that has already been consumed.
class StaleTapeError : public Error {
 public:
  StaleTapeError() : Error("stale tape: backward() called twice without a new forward pass") {}
};

/// Malformed binary or text artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace spmeid
