#include "engraf/ablation.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <sstream>

#include "engraf/error.hpp"

namespace engraf {

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_spec(std::string_view spec, const std::string& why) {
  throw Error(ErrorKind::InvalidConfig, "grid '" + std::string(spec) + "': " + why);
}

int parse_int(std::string_view spec, std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) bad_spec(spec, "'" + std::string(s) + "' is not an integer");
  return v;
}

// "2..5", "2,3,4" or "4"
std::vector<int> parse_int_list(std::string_view spec, std::string_view s) {
  std::vector<int> out;
  for (auto part : split(s, ',')) {
    part = trim(part);
    const auto dots = part.find("..");
    if (dots == std::string_view::npos) {
      out.push_back(parse_int(spec, part));
      continue;
    }
    const int lo = parse_int(spec, trim(part.substr(0, dots)));
    const int hi = parse_int(spec, trim(part.substr(dots + 2)));
    if (hi < lo) bad_spec(spec, "empty range " + std::string(part));
    for (int g = lo; g <= hi; ++g) out.push_back(g);
  }
  return out;
}

AblationEntry make_entry(std::string_view spec, Variant v, std::optional<int> g) {
  const bool grafted = v == Variant::graft || v == Variant::engraf;
  if (!grafted) {
    if (g && *g != 0) bad_spec(spec, std::string(to_string(v)) + " takes no graft size");
    return {v, 0};
  }
  const int size = g.value_or(v == Variant::graft ? 1 : 4);
  if (size < 1) bad_spec(spec, "graft size must be >= 1");
  return {v, size};
}

Variant variant_of(std::string_view spec, std::string_view name) {
  try {
    return parse_variant(trim(name));
  } catch (const Error&) {
    bad_spec(spec, "unknown variant '" + std::string(trim(name)) + "'");
  }
}

}  // namespace

std::string entry_label(const AblationEntry& e) {
  std::string s(to_string(e.variant));
  if (e.variant == Variant::graft || e.variant == Variant::engraf) s += "(G=" + std::to_string(e.graft_size) + ")";
  return s;
}

void check_distinct(const std::vector<AblationEntry>& grid) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (grid[i] == grid[j]) throw Error(ErrorKind::DuplicateEntry, "grid lists " + entry_label(grid[i]) + " twice");
    }
  }
}

std::vector<AblationEntry> parse_ablation_grid(std::string_view spec) {
  std::vector<AblationEntry> grid;
  const std::string_view body = trim(spec);
  if (body.empty()) bad_spec(spec, "empty grid");

  if (body.find('=') != std::string_view::npos) {
    std::vector<std::string_view> variants;
    std::optional<std::vector<int>> sizes;
    for (auto clause : split(body, ';')) {
      clause = trim(clause);
      if (clause.empty()) continue;
      const auto eq = clause.find('=');
      if (eq == std::string_view::npos) bad_spec(spec, "expected key=value in '" + std::string(clause) + "'");
      const auto key = trim(clause.substr(0, eq));
      const auto value = trim(clause.substr(eq + 1));
      if (key == "variant") {
        variants = split(value, ',');
      } else if (key == "G" || key == "g") {
        sizes = parse_int_list(spec, value);
      } else {
        bad_spec(spec, "unknown axis '" + std::string(key) + "'");
      }
    }
    if (variants.empty()) bad_spec(spec, "no variants");
    for (auto name : variants) {
      name = trim(name);
      const auto colon = name.find(':');
      if (colon != std::string_view::npos) {
        grid.push_back(make_entry(spec, variant_of(spec, name.substr(0, colon)),
                                  parse_int(spec, trim(name.substr(colon + 1)))));
        continue;
      }
      const Variant v = variant_of(spec, name);
      if (v == Variant::engraf && sizes) {
        for (int g : *sizes) grid.push_back(make_entry(spec, v, g));
      } else {
        grid.push_back(make_entry(spec, v, std::nullopt));
      }
    }
  } else {
    for (auto item : split(body, ',')) {
      item = trim(item);
      if (item.empty()) bad_spec(spec, "empty entry");
      const auto colon = item.find(':');
      if (colon == std::string_view::npos) {
        grid.push_back(make_entry(spec, variant_of(spec, item), std::nullopt));
      } else {
        grid.push_back(make_entry(spec, variant_of(spec, item.substr(0, colon)),
                                  parse_int(spec, trim(item.substr(colon + 1)))));
      }
    }
  }
  check_distinct(grid);
  return grid;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& grid, const EngrafConfig& base,
                                      const Dataset& train, const Dataset& test, const Taxonomy& tax,
                                      const TrainConfig& cfg, const std::function<void(const AblationRow&)>& on_row) {
  check_distinct(grid);
  std::vector<EngrafConfig> configs;
  for (const auto& e : grid) {
    EngrafConfig c = base;
    c.variant = e.variant;
    c.graft_size = e.graft_size;
    validate_config(c);
    configs.push_back(c);
  }
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Model<float> model(configs[i], init_seed_for(cfg.seed));
    FitOptions opts;
    opts.measure_train_accuracy = false;
    fit(model, train, Dataset{train.image_size, {}}, tax, cfg, opts);
    AblationRow row;
    row.entry = grid[i];
    row.metrics = evaluate(model, test, tax, static_cast<std::size_t>(cfg.eval_batch_size), cfg.backend);
    row.param_count = param_count(model);
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(row);
    if (on_row) on_row(rows.back());
  }
  return rows;
}

std::string ablation_tsv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant\tG\tfine_top1\tcoarse_top1\tparam_count\twall_time\n";
  char buf[64];
  for (const auto& r : rows) {
    os << to_string(r.entry.variant) << '\t' << r.entry.graft_size << '\t';
    std::snprintf(buf, sizeof buf, "%.4f\t%.4f\t", r.metrics.fine_top1, r.metrics.coarse_top1);
    os << buf << r.param_count << '\t';
    std::snprintf(buf, sizeof buf, "%.2f", r.wall_time);
    os << buf << '\n';
  }
  return os.str();
}

Json ablation_json(const std::vector<AblationRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back(Json{{"variant", std::string(to_string(r.entry.variant))},
                       {"G", r.entry.graft_size},
                       {"label", entry_label(r.entry)},
                       {"fine_top1", r.metrics.fine_top1},
                       {"coarse_top1", r.metrics.coarse_top1},
                       {"consistency_rate", r.metrics.consistency_rate},
                       {"param_count", r.param_count},
                       {"wall_time", r.wall_time}});
  }
  return out;
}

}  // namespace engraf
