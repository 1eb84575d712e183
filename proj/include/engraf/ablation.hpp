#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "engraf/serialize.hpp"

namespace engraf {

struct AblationEntry {
  Variant variant = Variant::resnet;
  int graft_size = 0;  // 0 for variants without a graft branch

  friend bool operator==(const AblationEntry&, const AblationEntry&) = default;
};

std::string entry_label(const AblationEntry& e);  // "resnet", "engraf(G=4)"

/// Accepts two forms:
///   axes:  "variant=resnet,two_branch,graft,engraf;G=2..5"
///          G values apply to engraf; graft is the single-block graft (G=1)
///          unless written "graft:<G>"; resnet and two_branch have no G.
///   list:  "resnet,two_branch,graft:1,engraf:4"
/// Errors: InvalidConfig on malformed specs, DuplicateEntry on repeats.
std::vector<AblationEntry> parse_ablation_grid(std::string_view spec);

/// Throws DuplicateEntry when two entries coincide.
void check_distinct(const std::vector<AblationEntry>& grid);

struct AblationRow {
  AblationEntry entry;
  EvalMetrics metrics;
  std::size_t param_count = 0;
  double wall_time = 0.0;  // seconds
};

/// Trains one model per entry from the same init seed, data order and
/// TrainConfig, so rows differ only in architecture.
std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& grid, const EngrafConfig& base,
                                      const Dataset& train, const Dataset& test, const Taxonomy& tax,
                                      const TrainConfig& cfg,
                                      const std::function<void(const AblationRow&)>& on_row = {});

std::string ablation_tsv(const std::vector<AblationRow>& rows);
Json ablation_json(const std::vector<AblationRow>& rows);

}  // namespace engraf
