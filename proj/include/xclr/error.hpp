#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace xclr {

enum class Errc {
  ZeroNormRow,
  ZeroNormColumn,
  DimMismatch,
  ShapeMismatch,
  SizeMismatch,
  NonPositiveTemperature,
  EmptySupport,
  SupportMismatch,
  TooFewSamples,
  UnknownClass,
  DegenerateTree,
  MissingLabels,
  BadPairing,
  LabelOutOfRange,
  IoError,
  BadMagic,
  TruncatedPayload,
  VersionUnsupported,
  ParseError,
  NonContiguousIndex,
  EmptySplit,
  SingleClass,
  DegenerateClasses,
  InvalidArgument,
  ConfigError,
};

std::string_view errc_name(Errc code);

// Every failure in the library surfaces as this exception. `index` carries the
// offending row, column or line number when one exists.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), index_(index) {}

  Errc code() const noexcept { return code_; }
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  Errc code_;
  std::optional<std::size_t> index_;
};

}  // namespace xclr
