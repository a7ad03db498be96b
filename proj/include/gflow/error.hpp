#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gflow {

enum class ErrorCode {
  BadMagic,
  DimMismatch,
  NonFiniteData,
  Io,
  ConfigInvalid,
  BehindCamera,
  NonPositiveDepth,
  AllPixelsExcluded,
  EmptyRegion,
  EmptyCluster,
  EmptySupport,
  DegenerateConfiguration,
  SpecInvalid,
  UnknownId,
  TooFewPoints,
  LengthMismatch,
};

std::string_view to_string(ErrorCode code);

// Every contract violation surfaces as an Error carrying the module that
// raised it, so the CLI can name the failing contract.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string_view module, const std::string& what);

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }
  // Message without the module and code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string module_;
  std::string detail_;
};

}  // namespace gflow
