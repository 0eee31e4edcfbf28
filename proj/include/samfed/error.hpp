#pragma once

#include <stdexcept>
#include <string>

namespace samfed {

enum class Errc {
  ShapeMismatch,
  NonFinite,
  NonScalarLoss,
  TapeReuse,
  InvalidConfig,
  UnknownLayer,
  RankTooLarge,
  EmptyDataset,
  ClassCountMismatch,
  IoError,
  EmptyBatch,
  LabelOutOfRange,
  FingerprintMismatch,
  ZeroWeight,
  MissingSoftLabels,
  NotInitialized,
  ConfigError,
  EmptyPublicSet,
  MissingPair,
  MalformedPgm,
  InsufficientData,
  InvalidSize,
  BadMagic,
};

const char* to_string(Errc code) noexcept;

// Every failure raised by the library carries one of the codes above so
// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }
  // The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

// True for errors caused by bad user input rather than a runtime fault.
bool is_usage_error(Errc code) noexcept;

}  // namespace samfed
