#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace engraf {

enum class ErrorKind {
  // taxonomy
  DuplicateFine,
  NonSurjective,
  SparseIds,
  ParseError,
  UnknownLabel,
  InvalidShape,
  // data
  MissingFile,
  CorruptRecord,
  LabelOutOfRange,
  EmptyDataset,
  // model / loss
  InvalidConfig,
  ShapeMismatch,
  NonFiniteInput,
  MissingHead,
  // train
  ConfigMismatch,
  NonFiniteLoss,
  Io,
  ManifestMismatch,
  TruncatedBlob,
  DuplicateEntry,
  // cam
  UnknownBranch,
  ClassOutOfRange,
};

std::string_view to_string(ErrorKind kind);

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-checkable kind next to the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace engraf
