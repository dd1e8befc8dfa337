#include "focalseg/error.hpp"

#include <iostream>

namespace focalseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NoBoundary: return "NoBoundary";
    case ErrorCode::InvalidEpsilon: return "InvalidEpsilon";
    case ErrorCode::InvalidGamma: return "InvalidGamma";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NonFiniteParam: return "NonFiniteParam";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::UnknownLoss: return "UnknownLoss";
    case ErrorCode::InvalidPlacement: return "InvalidPlacement";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::InvalidFraction: return "InvalidFraction";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

void warn(std::string_view message) { std::cerr << "warning: " << message << '\n'; }

}  // namespace focalseg
