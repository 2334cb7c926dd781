#pragma once

#include <stdexcept>
#include <string>

namespace ctfilter {

/* Failure taxonomy shared by the library and the CLI.  Codes are grouped by
   how a caller should react: reject the input, report a model/method
   capability mismatch, or treat the run as a numerical breakdown. */
enum class ErrorCode {
  NonSquare,
  NegativeOffDiagonal,
  InconsistentGenerator,
  InvalidTime,
  DomainError,
  ShapeError,
  GridTooCoarse,
  OutOfRange,
  InvalidConfig,
  IoError,
  UnsupportedModel,
  UnreachablePair,
  SupportOverflow,
  SolverInstability,
};

enum class ErrorKind { Config, Capability, Numeric };

constexpr ErrorKind kind_of(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnsupportedModel:
    case ErrorCode::UnreachablePair:
      return ErrorKind::Capability;
    case ErrorCode::SupportOverflow:
    case ErrorCode::SolverInstability:
      return ErrorKind::Numeric;
    default:
      return ErrorKind::Config;
  }
}

constexpr const char* name_of(ErrorCode c) {
  switch (c) {
    case ErrorCode::NonSquare: return "NonSquare";
    case ErrorCode::NegativeOffDiagonal: return "NegativeOffDiagonal";
    case ErrorCode::InconsistentGenerator: return "InconsistentGenerator";
    case ErrorCode::InvalidTime: return "InvalidTime";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::GridTooCoarse: return "GridTooCoarse";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnsupportedModel: return "UnsupportedModel";
    case ErrorCode::UnreachablePair: return "UnreachablePair";
    case ErrorCode::SupportOverflow: return "SupportOverflow";
    case ErrorCode::SolverInstability: return "SolverInstability";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(name_of(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }
  ErrorKind kind() const { return kind_of(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace ctfilter
