#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace temploc {

enum class Errc {
  NonPositiveVoxel,
  EmptyReference,
  DegenerateConfiguration,
  ShapeMismatch,
  EmptyInput,
  MissingGroundTruth,
  EmptyCloud,
  BadRadii,
  ZeroFeatureRow,
  DimensionMismatch,
  EmptyLevelList,
  DegenerateRow,
  EmptyCorrespondences,
  BadK,
  InsufficientCorrespondences,
  NoConsensus,
  EmptyScan,
  MissingIntermediates,
  InvalidConfig,
  Parse,
  Io,
};

constexpr std::string_view to_string(Errc c) {
  switch (c) {
    case Errc::NonPositiveVoxel: return "NonPositiveVoxel";
    case Errc::EmptyReference: return "EmptyReference";
    case Errc::DegenerateConfiguration: return "DegenerateConfiguration";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::MissingGroundTruth: return "MissingGroundTruth";
    case Errc::EmptyCloud: return "EmptyCloud";
    case Errc::BadRadii: return "BadRadii";
    case Errc::ZeroFeatureRow: return "ZeroFeatureRow";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyLevelList: return "EmptyLevelList";
    case Errc::DegenerateRow: return "DegenerateRow";
    case Errc::EmptyCorrespondences: return "EmptyCorrespondences";
    case Errc::BadK: return "BadK";
    case Errc::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case Errc::NoConsensus: return "NoConsensus";
    case Errc::EmptyScan: return "EmptyScan";
    case Errc::MissingIntermediates: return "MissingIntermediates";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Parse: return "Parse";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace temploc
