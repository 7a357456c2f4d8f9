#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace deepsketch {

enum class ErrorCode {
  // datastore
  MissingColumn,
  TypeParseError,
  DuplicateTable,
  UnknownTable,
  UnknownColumn,
  InvalidSchema,
  InvalidSpec,
  InvalidQuery,
  Io,
  // queryir
  SyntaxError,
  NonFkJoin,
  UnsupportedOperator,
  EmptySample,
  NonDateColumnForYear,
  InvalidTemplate,
  // featurizer
  EmptyTrainingSet,
  DegenerateLabels,
  UnknownSymbol,
  // mscn
  ShapeMismatch,
  NonFiniteValue,
  EmptyCorpus,
  InvalidConfig,
  // sketch
  Cancelled,
  BadMagic,
  VersionMismatch,
  ChecksumMismatch,
  TruncatedFile,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::TypeParseError: return "TypeParseError";
    case ErrorCode::DuplicateTable: return "DuplicateTable";
    case ErrorCode::UnknownTable: return "UnknownTable";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::InvalidSchema: return "InvalidSchema";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidQuery: return "InvalidQuery";
    case ErrorCode::Io: return "Io";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::NonFkJoin: return "NonFkJoin";
    case ErrorCode::UnsupportedOperator: return "UnsupportedOperator";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::NonDateColumnForYear: return "NonDateColumnForYear";
    case ErrorCode::InvalidTemplate: return "InvalidTemplate";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::UnknownSymbol: return "UnknownSymbol";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Cancelled: return "Cancelled";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception. `code` is stable
/// and is what the CLI exit codes and HTTP statuses are derived from.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail, std::optional<std::size_t> position = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail),
        position_(position) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  // Byte offset into the SQL text for syntax errors; row index for CSV errors.
  std::optional<std::size_t> position() const noexcept { return position_; }

 private:
  ErrorCode code_;
  std::string detail_;
  std::optional<std::size_t> position_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail,
                              std::optional<std::size_t> position = std::nullopt) {
  throw Error(code, detail, position);
}

}  // namespace deepsketch
