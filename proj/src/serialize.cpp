#include "engraf/serialize.hpp"

#include <fstream>
#include <set>

#include "engraf/error.hpp"

namespace engraf {

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorKind::InvalidConfig, std::string("unknown ") + what + " field '" + key + "'");
  }
}

template <typename V>
void read_field(const Json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("field '") + key + "': " + e.what());
  }
}

kernels::Backend parse_backend(const std::string& s) {
  if (s == "parallel") return kernels::Backend::parallel;
  if (s == "reference") return kernels::Backend::reference;
  throw Error(ErrorKind::InvalidConfig, "unknown backend '" + s + "'");
}

}  // namespace

Json to_json(const EngrafConfig& c) {
  Json j;
  j["backbone_depth"] = c.backbone_depth;
  j["variant"] = std::string(to_string(c.variant));
  j["graft_size"] = c.graft_size;
  j["hierarchy_depth"] = c.hierarchy_depth;
  j["num_fine"] = c.num_fine;
  j["num_coarse"] = c.num_coarse;
  j["input_size"] = c.input_size;
  j["stem"] = std::string(to_string(c.stem));
  j["base_width"] = c.base_width;
  if (!c.stage_blocks.empty()) {
    j["stage_blocks"] = c.stage_blocks;
    j["stage_widths"] = c.stage_widths;
  }
  return j;
}

EngrafConfig engraf_config_from_json(const Json& j, EngrafConfig c) {
  reject_unknown(j,
                 {"backbone_depth", "variant", "graft_size", "hierarchy_depth", "num_fine", "num_coarse", "input_size",
                  "stem", "base_width", "stage_blocks", "stage_widths"},
                 "model");
  read_field(j, "backbone_depth", c.backbone_depth);
  std::string s;
  if (j.contains("variant")) {
    read_field(j, "variant", s);
    c.variant = parse_variant(s);
  }
  read_field(j, "graft_size", c.graft_size);
  read_field(j, "hierarchy_depth", c.hierarchy_depth);
  read_field(j, "num_fine", c.num_fine);
  read_field(j, "num_coarse", c.num_coarse);
  read_field(j, "input_size", c.input_size);
  if (j.contains("stem")) {
    read_field(j, "stem", s);
    c.stem = parse_stem(s);
  }
  read_field(j, "base_width", c.base_width);
  read_field(j, "stage_blocks", c.stage_blocks);
  read_field(j, "stage_widths", c.stage_widths);
  return c;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["decay_milestones"] = c.decay_milestones;
  j["decay_factor"] = c.decay_factor;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["augment"] = c.augment;
  j["eval_batch_size"] = c.eval_batch_size;
  j["backend"] = std::string(kernels::to_string(c.backend));
  return j;
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  reject_unknown(j,
                 {"learning_rate", "momentum", "weight_decay", "epochs", "batch_size", "decay_milestones",
                  "decay_factor", "seed", "deterministic", "augment", "eval_batch_size", "backend"},
                 "train");
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "momentum", c.momentum);
  read_field(j, "weight_decay", c.weight_decay);
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "decay_milestones", c.decay_milestones);
  read_field(j, "decay_factor", c.decay_factor);
  read_field(j, "seed", c.seed);
  read_field(j, "deterministic", c.deterministic);
  read_field(j, "augment", c.augment);
  read_field(j, "eval_batch_size", c.eval_batch_size);
  if (j.contains("backend")) {
    std::string s;
    read_field(j, "backend", s);
    c.backend = parse_backend(s);
  }
  return c;
}

Json to_json(const LossBreakdown& loss) {
  Json per_head = Json::object();
  for (const auto& [h, v] : loss.per_head) per_head[std::string(to_string(h))] = v;
  return Json{{"per_head", per_head}, {"total", loss.total}};
}

Json to_json(const EvalMetrics& m) {
  Json per_head = Json::object();
  for (const auto& [h, v] : m.per_head_top1) per_head[std::string(to_string(h))] = v;
  return Json{{"fine_top1", m.fine_top1},
              {"coarse_top1", m.coarse_top1},
              {"consistency_rate", m.consistency_rate},
              {"per_head_top1", per_head},
              {"count", m.count},
              {"coarse_fine", format_coarse_fine(m)}};
}

EvalMetrics eval_metrics_from_json(const Json& j) {
  EvalMetrics m;
  try {
    m.fine_top1 = j.at("fine_top1").get<double>();
    m.coarse_top1 = j.at("coarse_top1").get<double>();
    m.consistency_rate = j.at("consistency_rate").get<double>();
    m.count = j.value("count", std::size_t{0});
    if (j.contains("per_head_top1")) {
      for (const auto& [k, v] : j.at("per_head_top1").items()) m.per_head_top1[parse_head(k)] = v.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ManifestMismatch, std::string("bad metrics record: ") + e.what());
  }
  return m;
}

Json to_json(const EpochRecord& rec, bool include_timing) {
  Json j{{"epoch", rec.epoch},
         {"learning_rate", rec.learning_rate},
         {"steps", rec.steps},
         {"train_loss", to_json(rec.train_loss)},
         {"train_metrics", to_json(rec.train_metrics)},
         {"eval_metrics", to_json(rec.eval_metrics)}};
  if (include_timing) j["seconds"] = rec.seconds;
  return j;
}

Json to_json(const std::vector<EpochRecord>& history, bool include_timing) {
  Json j = Json::array();
  for (const auto& rec : history) j.push_back(to_json(rec, include_timing));
  return j;
}

Json to_json(const RunConfig& cfg) { return Json{{"model", to_json(cfg.model)}, {"train", to_json(cfg.train)}}; }

RunConfig load_run_config(const std::filesystem::path& path) {
  const Json j = read_json(path);
  reject_unknown(j, {"model", "train"}, "run config");
  RunConfig cfg;
  if (j.contains("model")) cfg.model = engraf_config_from_json(j.at("model"));
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  return cfg;
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, path.string() + ": " + e.what());
  }
}

void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace engraf
