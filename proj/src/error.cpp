#include "samfed/error.hpp"

namespace samfed {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFinite: return "NonFinite";
    case Errc::NonScalarLoss: return "NonScalarLoss";
    case Errc::TapeReuse: return "TapeReuse";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::UnknownLayer: return "UnknownLayer";
    case Errc::RankTooLarge: return "RankTooLarge";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::ClassCountMismatch: return "ClassCountMismatch";
    case Errc::IoError: return "IoError";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::FingerprintMismatch: return "FingerprintMismatch";
    case Errc::ZeroWeight: return "ZeroWeight";
    case Errc::MissingSoftLabels: return "MissingSoftLabels";
    case Errc::NotInitialized: return "NotInitialized";
    case Errc::ConfigError: return "ConfigError";
    case Errc::EmptyPublicSet: return "EmptyPublicSet";
    case Errc::MissingPair: return "MissingPair";
    case Errc::MalformedPgm: return "MalformedPgm";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::InvalidSize: return "InvalidSize";
    case Errc::BadMagic: return "BadMagic";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

bool is_usage_error(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidConfig:
    case Errc::ConfigError:
    case Errc::UnknownLayer:
    case Errc::RankTooLarge:
    case Errc::InvalidSize:
    case Errc::FingerprintMismatch:
    case Errc::BadMagic:
    case Errc::MalformedPgm:
    case Errc::MissingPair:
    case Errc::LabelOutOfRange:
    case Errc::EmptyPublicSet:
    case Errc::InsufficientData:
      return true;
    default:
      return false;
  }
}

}  // namespace samfed
