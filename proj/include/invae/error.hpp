#pragma once

#include <stdexcept>
#include <string>

namespace invae {

enum class ErrorKind {
  InvalidArgument,
  InvalidDimension,
  InvalidPartition,
  Shape,
  Numeric,
  State,
  StableNodeIntervention,
  NothingToIntervene,
  InsufficientNodes,
  Arity,
  Pairing,
  DegeneratePolytope,
  RankImpossible,
  GenerationFailure,
  InsufficientBatch,
  DegenerateBandwidth,
  DegenerateTarget,
  TrainingDiverged,
  CannotEnforceInvariance,
  Domain,
  Precondition,
  Config,
  Parse,
  Schema,
  Io,
};

const char* to_string(ErrorKind kind);

/// Library error. Every failure path in invae throws this with a kind the
/// CLI maps onto its exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Thrown when training produces a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& message)
      : Error(ErrorKind::TrainingDiverged, "step " + std::to_string(step) + ": " + message),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Thrown by the JSON/CSV readers; carries the byte offset of the failure.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& message)
      : Error(ErrorKind::Parse, "at byte " + std::to_string(offset) + ": " + message),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace invae
