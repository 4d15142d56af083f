#pragma once

#include <stdexcept>
#include <string>

namespace mcdut {

// Failure categories surfaced by the toolkit. Every thrown error carries one,
// so callers (and the CLI) can map a failure to an exit path without string
// matching.
enum class ErrorKind {
  InvalidConfig,
  InvalidInput,
  DegenerateInput,
  InternalConsistency,
  Io,
  Dataset,
  Asset,
  DivergedTraining,
  IncompatibleCheckpoint,
  Numerical,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::InternalConsistency: return "internal-consistency";
    case ErrorKind::Io: return "io";
    case ErrorKind::Dataset: return "dataset";
    case ErrorKind::Asset: return "asset";
    case ErrorKind::DivergedTraining: return "diverged-training";
    case ErrorKind::IncompatibleCheckpoint: return "incompatible-checkpoint";
    case ErrorKind::Numerical: return "numerical";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) fail(kind, message);
}

}  // namespace mcdut
