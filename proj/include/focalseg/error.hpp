#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace focalseg {

enum class ErrorCode {
  NoBoundary,
  InvalidEpsilon,
  InvalidGamma,
  InvalidArgument,
  ShapeMismatch,
  NonFiniteInput,
  NonFiniteParam,
  NonFiniteLoss,
  UnknownLoss,
  InvalidPlacement,
  MissingPair,
  UnreadableImage,
  TooSmall,
  InvalidFraction,
  IoError,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Non-fatal diagnostics (e.g. a degenerate distance map) go through here.
void warn(std::string_view message);

}  // namespace focalseg
