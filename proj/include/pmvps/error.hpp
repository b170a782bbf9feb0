#pragma once

#include <stdexcept>
#include <string>

namespace pmvps {

enum class ErrorCode {
  InvalidArgument,
  TooFewPoints,
  CollinearPoints,
  DuplicatePoints,
  DegenerateTriangle,
  ShapeMismatch,
  AllUnobserved,
  UnderConstrained,
  EmptyNormalField,
  NonAdjacent,
  EmptyInput,
  Divergence,
  EmptyOverlap,
  Io,
  NoUsablePatches,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pmvps
