#include "gflow/error.hpp"

namespace gflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::Io: return "Io";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::AllPixelsExcluded: return "AllPixelsExcluded";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::EmptyCluster: return "EmptyCluster";
    case ErrorCode::EmptySupport: return "EmptySupport";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, std::string_view module, const std::string& what)
    : std::runtime_error(std::string(module) + ": " + std::string(to_string(code)) + ": " + what),
      code_(code),
      module_(module),
      detail_(what) {}

}  // namespace gflow
