#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace engraf {

using ClassId = int;

/// Fine -> coarse class mapping with one coarse level. Immutable once built;
/// construct through load_taxonomy, generate_synthetic_taxonomy or make().
class Taxonomy {
 public:
  Taxonomy() = default;

  /// Builds a taxonomy without validating it; see validate_taxonomy.
  static Taxonomy make(std::vector<ClassId> parent, std::vector<std::string> fine_names,
                       std::vector<std::string> coarse_names);

  int num_fine() const { return static_cast<int>(parent_.size()); }
  int num_coarse() const { return static_cast<int>(coarse_names_.size()); }
  const std::vector<ClassId>& parent() const { return parent_; }
  const std::vector<std::string>& fine_names() const { return fine_names_; }
  const std::vector<std::string>& coarse_names() const { return coarse_names_; }

  /// Fine ids whose parent is `coarse`, ascending.
  std::vector<ClassId> children(ClassId coarse) const;

  friend bool operator==(const Taxonomy&, const Taxonomy&) = default;

 private:
  std::vector<ClassId> parent_;
  std::vector<std::string> fine_names_;
  std::vector<std::string> coarse_names_;
};

struct LabelPair {
  ClassId fine = 0;
  ClassId coarse = 0;

  friend bool operator==(const LabelPair&, const LabelPair&) = default;
};

/// Reads `fine_id<TAB>fine_name<TAB>coarse_id<TAB>coarse_name` lines; `#` lines
/// and blank lines are skipped. Throws Error on any invariant violation.
Taxonomy load_taxonomy(const std::filesystem::path& path);
Taxonomy parse_taxonomy(const std::string& text);

void save_taxonomy(const Taxonomy& tax, const std::filesystem::path& path);
std::string format_taxonomy(const Taxonomy& tax);

/// parent(fine); throws UnknownLabel when fine is outside [0, C_K).
ClassId derive_coarse(const Taxonomy& tax, ClassId fine);

LabelPair make_label(const Taxonomy& tax, ClassId fine);

enum class TaxonomyRule {
  ParentMissing,     // a fine id has no (valid) parent
  NonSurjective,     // a coarse id has no children
  CoarseNotSmaller,  // C_{K-1} >= C_K
  NameCount,         // name list length differs from the class count
  Empty,
};

struct TaxonomyViolation {
  TaxonomyRule rule;
  int id = -1;  // offending id, -1 when the rule is global
  std::string message;
};

std::vector<TaxonomyViolation> validate_taxonomy(const Taxonomy& tax);

/// Contiguous near-equal blocks: parent(i) = min(i / ceil(c_fine / c_coarse), c_coarse - 1).
Taxonomy generate_synthetic_taxonomy(int c_fine, int c_coarse);

/// Restricts to the children of `coarse_ids` and re-indexes both levels densely
/// in the order given. `fine_map[old_fine]` is the new fine id or -1.
struct TaxonomySubset {
  Taxonomy taxonomy;
  std::vector<ClassId> fine_map;
};
TaxonomySubset restrict_taxonomy(const Taxonomy& tax, const std::vector<ClassId>& coarse_ids);

}  // namespace engraf
