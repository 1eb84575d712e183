#include "engraf/taxonomy.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "engraf/error.hpp"

namespace engraf {

Taxonomy Taxonomy::make(std::vector<ClassId> parent, std::vector<std::string> fine_names,
                        std::vector<std::string> coarse_names) {
  Taxonomy tax;
  tax.parent_ = std::move(parent);
  tax.fine_names_ = std::move(fine_names);
  tax.coarse_names_ = std::move(coarse_names);
  return tax;
}

std::vector<ClassId> Taxonomy::children(ClassId coarse) const {
  std::vector<ClassId> out;
  for (std::size_t i = 0; i < parent_.size(); ++i)
    if (parent_[i] == coarse) out.push_back(static_cast<ClassId>(i));
  return out;
}

namespace {

int parse_id(std::string_view field, int line_no) {
  int value = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || value < 0) {
    throw Error(ErrorKind::ParseError,
                "line " + std::to_string(line_no) + ": bad id '" + std::string(field) + "'");
  }
  return value;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

// Dense ids: keys of `names` must be exactly 0..N-1. A gap in the coarse ids is
// a coarse class without children, so it reports NonSurjective.
std::vector<std::string> densify(const std::map<int, std::string>& names, const char* level,
                                 ErrorKind gap_error) {
  std::vector<std::string> out;
  out.reserve(names.size());
  int expected = 0;
  for (const auto& [id, name] : names) {
    if (id != expected) {
      throw Error(gap_error, std::string(level) + " ids are not dense: missing id " +
                                            std::to_string(expected));
    }
    out.push_back(name);
    ++expected;
  }
  return out;
}

}  // namespace

Taxonomy parse_taxonomy(const std::string& text) {
  std::map<int, std::string> fine_names;
  std::map<int, std::string> coarse_names;
  std::map<int, int> parent;

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                                             std::to_string(fields.size()));
    }
    const int fine = parse_id(fields[0], line_no);
    const int coarse = parse_id(fields[2], line_no);

    if (auto it = parent.find(fine); it != parent.end()) {
      if (it->second != coarse) {
        throw Error(ErrorKind::DuplicateFine, "fine id " + std::to_string(fine) + " maps to coarse " +
                                                  std::to_string(it->second) + " and " + std::to_string(coarse));
      }
      throw Error(ErrorKind::ParseError, "fine id " + std::to_string(fine) + " listed twice");
    }
    parent.emplace(fine, coarse);
    fine_names.emplace(fine, std::string(fields[1]));

    const auto [it, inserted] = coarse_names.emplace(coarse, std::string(fields[3]));
    if (!inserted && it->second != fields[3]) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": coarse id " +
                                             std::to_string(coarse) + " has two names");
    }
  }
  if (parent.empty()) throw Error(ErrorKind::ParseError, "taxonomy has no entries");

  auto fine_list = densify(fine_names, "fine", ErrorKind::SparseIds);
  auto coarse_list = densify(coarse_names, "coarse", ErrorKind::NonSurjective);
  std::vector<ClassId> parents;
  parents.reserve(parent.size());
  for (const auto& [fine, coarse] : parent) parents.push_back(coarse);

  Taxonomy tax = Taxonomy::make(std::move(parents), std::move(fine_list), std::move(coarse_list));
  for (const auto& v : validate_taxonomy(tax)) {
    const auto kind = v.rule == TaxonomyRule::NonSurjective ? ErrorKind::NonSurjective : ErrorKind::ParseError;
    throw Error(kind, v.message);
  }
  return tax;
}

Taxonomy load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open taxonomy file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_taxonomy(buffer.str());
}

std::string format_taxonomy(const Taxonomy& tax) {
  std::ostringstream out;
  out << "# fine_id\tfine_name\tcoarse_id\tcoarse_name\n";
  for (int f = 0; f < tax.num_fine(); ++f) {
    const ClassId c = tax.parent()[f];
    out << f << '\t' << tax.fine_names()[f] << '\t' << c << '\t' << tax.coarse_names()[c] << '\n';
  }
  return out.str();
}

void save_taxonomy(const Taxonomy& tax, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write taxonomy file " + path.string());
  out << format_taxonomy(tax);
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

ClassId derive_coarse(const Taxonomy& tax, ClassId fine) {
  if (fine < 0 || fine >= tax.num_fine()) {
    throw Error(ErrorKind::UnknownLabel, "fine label " + std::to_string(fine) + " outside [0, " +
                                             std::to_string(tax.num_fine()) + ")");
  }
  return tax.parent()[static_cast<std::size_t>(fine)];
}

LabelPair make_label(const Taxonomy& tax, ClassId fine) { return {fine, derive_coarse(tax, fine)}; }

std::vector<TaxonomyViolation> validate_taxonomy(const Taxonomy& tax) {
  std::vector<TaxonomyViolation> out;
  const int cf = tax.num_fine();
  const int cc = tax.num_coarse();
  if (cf == 0 || cc == 0) {
    out.push_back({TaxonomyRule::Empty, -1, "taxonomy has no fine or no coarse classes"});
    return out;
  }
  if (cc >= cf) {
    out.push_back({TaxonomyRule::CoarseNotSmaller, -1,
                   "coarse count " + std::to_string(cc) + " is not smaller than fine count " + std::to_string(cf)});
  }
  if (static_cast<int>(tax.fine_names().size()) != cf) {
    out.push_back({TaxonomyRule::NameCount, -1, "fine name list has wrong length"});
  }
  std::vector<int> child_count(static_cast<std::size_t>(cc), 0);
  for (int f = 0; f < cf; ++f) {
    const ClassId c = tax.parent()[f];
    if (c < 0 || c >= cc) {
      out.push_back({TaxonomyRule::ParentMissing, f, "fine id " + std::to_string(f) + " has no valid parent"});
    } else {
      ++child_count[static_cast<std::size_t>(c)];
    }
  }
  for (int c = 0; c < cc; ++c) {
    if (child_count[static_cast<std::size_t>(c)] == 0) {
      out.push_back({TaxonomyRule::NonSurjective, c, "coarse id " + std::to_string(c) + " has no children"});
    }
  }
  return out;
}

Taxonomy generate_synthetic_taxonomy(int c_fine, int c_coarse) {
  if (c_fine <= 0 || c_coarse <= 0 || c_coarse >= c_fine) {
    throw Error(ErrorKind::InvalidShape, "need 1 <= c_coarse < c_fine, got (" + std::to_string(c_fine) + ", " +
                                             std::to_string(c_coarse) + ")");
  }
  const int block = (c_fine + c_coarse - 1) / c_coarse;
  std::vector<ClassId> parent(static_cast<std::size_t>(c_fine));
  if ((c_coarse - 1) * block < c_fine) {
    for (int i = 0; i < c_fine; ++i) parent[i] = std::min(i / block, c_coarse - 1);
  } else {
    // ceil-sized blocks would leave trailing coarse ids empty; fall back to
    // balanced blocks whose sizes differ by at most one.
    const int base = c_fine / c_coarse, extra = c_fine % c_coarse;
    int i = 0;
    for (int c = 0; c < c_coarse; ++c)
      for (int k = 0; k < base + (c < extra ? 1 : 0); ++k) parent[i++] = c;
  }
  std::vector<std::string> fine_names, coarse_names;
  for (int i = 0; i < c_fine; ++i) fine_names.push_back("fine_" + std::to_string(i));
  for (int c = 0; c < c_coarse; ++c) coarse_names.push_back("coarse_" + std::to_string(c));
  return Taxonomy::make(std::move(parent), std::move(fine_names), std::move(coarse_names));
}

TaxonomySubset restrict_taxonomy(const Taxonomy& tax, const std::vector<ClassId>& coarse_ids) {
  TaxonomySubset out;
  out.fine_map.assign(static_cast<std::size_t>(tax.num_fine()), -1);
  std::vector<ClassId> parent;
  std::vector<std::string> fine_names, coarse_names;
  for (std::size_t k = 0; k < coarse_ids.size(); ++k) {
    const ClassId c = coarse_ids[k];
    if (c < 0 || c >= tax.num_coarse()) {
      throw Error(ErrorKind::UnknownLabel, "coarse id " + std::to_string(c) + " out of range");
    }
    if (std::find(coarse_ids.begin(), coarse_ids.begin() + static_cast<long>(k), c) !=
        coarse_ids.begin() + static_cast<long>(k)) {
      throw Error(ErrorKind::DuplicateEntry, "coarse id " + std::to_string(c) + " listed twice");
    }
    coarse_names.push_back(tax.coarse_names()[c]);
    for (ClassId f : tax.children(c)) {
      out.fine_map[static_cast<std::size_t>(f)] = static_cast<ClassId>(parent.size());
      parent.push_back(static_cast<ClassId>(k));
      fine_names.push_back(tax.fine_names()[f]);
    }
  }
  out.taxonomy = Taxonomy::make(std::move(parent), std::move(fine_names), std::move(coarse_names));
  return out;
}

}  // namespace engraf
