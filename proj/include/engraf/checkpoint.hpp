#pragma once

// Checkpoint directory: manifest.json plus weights.bin holding every
// parameter and batch-norm running statistic as little-endian float32, packed
// back to back in manifest order.

#include <filesystem>
#include <optional>

#include "engraf/train.hpp"

namespace engraf {

struct CheckpointMeta {
  EngrafConfig model;
  TrainConfig train;
  int epoch = 0;
  std::optional<EvalMetrics> metrics;
};

struct TensorEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t length = 0;  // bytes
};

void save_checkpoint(const Model<float>& model, const CheckpointMeta& meta, const std::filesystem::path& dir);

struct LoadedCheckpoint {
  Model<float> model;
  CheckpointMeta meta;
  std::vector<TensorEntry> tensors;
};

/// Errors: Io (missing or unreadable files), ManifestMismatch (names, shapes
/// or offsets disagree with the model the manifest describes), TruncatedBlob.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace engraf
