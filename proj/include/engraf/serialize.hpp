#pragma once

// JSON forms of the run-level records. Field names mirror the C++ structs.

#include <filesystem>

#include <json.hpp>

#include "engraf/train.hpp"

namespace engraf {

using Json = nlohmann::ordered_json;

Json to_json(const EngrafConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const LossBreakdown& loss);
Json to_json(const EvalMetrics& m);
Json to_json(const EpochRecord& rec, bool include_timing = true);
Json to_json(const std::vector<EpochRecord>& history, bool include_timing = true);

/// Missing fields keep their defaults; unknown fields are InvalidConfig.
EngrafConfig engraf_config_from_json(const Json& j, EngrafConfig base = {});
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});
EvalMetrics eval_metrics_from_json(const Json& j);

/// Run config file: {"model": {...}, "train": {...}}.
struct RunConfig {
  EngrafConfig model;
  TrainConfig train;
};
RunConfig load_run_config(const std::filesystem::path& path);
Json to_json(const RunConfig& cfg);

Json read_json(const std::filesystem::path& path);                  // Io on failure
void write_json(const Json& j, const std::filesystem::path& path);  // Io on failure

}  // namespace engraf
