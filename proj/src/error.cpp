#include "engraf/error.hpp"

namespace engraf {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DuplicateFine: return "DuplicateFine";
    case ErrorKind::NonSurjective: return "NonSurjective";
    case ErrorKind::SparseIds: return "SparseIds";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::InvalidShape: return "InvalidShape";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::CorruptRecord: return "CorruptRecord";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::MissingHead: return "MissingHead";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::Io: return "Io";
    case ErrorKind::ManifestMismatch: return "ManifestMismatch";
    case ErrorKind::TruncatedBlob: return "TruncatedBlob";
    case ErrorKind::DuplicateEntry: return "DuplicateEntry";
    case ErrorKind::UnknownBranch: return "UnknownBranch";
    case ErrorKind::ClassOutOfRange: return "ClassOutOfRange";
  }
  return "Unknown";
}

}  // namespace engraf
