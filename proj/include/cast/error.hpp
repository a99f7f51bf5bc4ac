#pragma once

#include <stdexcept>
#include <string>

namespace cast {

enum class ErrorCode {
  MissingFile,
  SizeMismatch,
  ManifestInvalid,
  NonFiniteData,
  IoFailure,
  InvalidSpec,
  NonFiniteInput,
  ConvergenceFailure,
  ShapeMismatch,
  SolveFailure,
  InvalidK,
  ZeroDenominator,
  EmptySpectrum,
  InsufficientPoints,
  AllZeroSpectrum,
  DegenerateData,
  InvalidParams,
  ZeroCenteredKernel,
  InsufficientSequences,
  SizeTooLarge,
  TooFewLayers,
  InvalidArgument,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::ManifestInvalid: return "ManifestInvalid";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SolveFailure: return "SolveFailure";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::ZeroDenominator: return "ZeroDenominator";
    case ErrorCode::EmptySpectrum: return "EmptySpectrum";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::AllZeroSpectrum: return "AllZeroSpectrum";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::ZeroCenteredKernel: return "ZeroCenteredKernel";
    case ErrorCode::InsufficientSequences: return "InsufficientSequences";
    case ErrorCode::SizeTooLarge: return "SizeTooLarge";
    case ErrorCode::TooFewLayers: return "TooFewLayers";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// True for failures that come out of the numerics rather than from bad
/// input or configuration. The CLI maps these to exit code 2.
inline bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConvergenceFailure:
    case ErrorCode::SolveFailure:
    case ErrorCode::ZeroDenominator:
    case ErrorCode::InsufficientPoints:
    case ErrorCode::AllZeroSpectrum:
    case ErrorCode::EmptySpectrum:
    case ErrorCode::DegenerateData:
    case ErrorCode::ZeroCenteredKernel:
    case ErrorCode::NonFiniteInput:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cast
