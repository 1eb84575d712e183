#include "engraf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "engraf/error.hpp"
#include "engraf/serialize.hpp"

namespace engraf {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "engraf-checkpoint";
constexpr int kVersion = 1;

// Every parameter followed by every running statistic, in model order.
std::vector<std::pair<std::string, const Tensor<float>*>> checkpoint_tensors(const Model<float>& model) {
  std::vector<std::pair<std::string, const Tensor<float>*>> out;
  for (const auto* p : model.parameters()) out.emplace_back(p->name, &p->value);
  for (const auto& b : model.buffers()) out.push_back(b);
  return out;
}

void append_le(std::string& blob, const Tensor<float>& t) {
  const std::size_t start = blob.size();
  blob.resize(start + t.size() * 4);
  char* dst = blob.data() + start;
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(t[i]);
    for (int k = 0; k < 4; ++k) dst[4 * i + k] = static_cast<char>((bits >> (8 * k)) & 0xffu);
  }
}

void read_le(const std::string& blob, std::size_t offset, Tensor<float>& t) {
  const auto* src = reinterpret_cast<const unsigned char*>(blob.data() + offset);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(src[4 * i + k]) << (8 * k);
    t[i] = std::bit_cast<float>(bits);
  }
}

[[noreturn]] void mismatch(const std::string& msg) { throw Error(ErrorKind::ManifestMismatch, msg); }

}  // namespace

void save_checkpoint(const Model<float>& model, const CheckpointMeta& meta, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());

  std::string blob;
  Json tensors = Json::array();
  for (const auto& [name, t] : checkpoint_tensors(model)) {
    const std::size_t offset = blob.size();
    append_le(blob, *t);
    tensors.push_back(Json{{"name", name},
                           {"dtype", "float32"},
                           {"shape", t->shape()},
                           {"offset", offset},
                           {"length", blob.size() - offset}});
  }
  Json manifest{{"format", kFormat},
                {"version", kVersion},
                {"model_config", to_json(meta.model)},
                {"train_config", to_json(meta.train)},
                {"epoch", meta.epoch},
                {"metrics", meta.metrics ? to_json(*meta.metrics) : Json(nullptr)},
                {"blob", "weights.bin"},
                {"blob_bytes", blob.size()},
                {"tensors", tensors}};

  std::ofstream out(dir / "weights.bin", std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / "weights.bin").string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  out.close();
  if (!out) throw Error(ErrorKind::Io, "failed writing " + (dir / "weights.bin").string());
  write_json(manifest, dir / "manifest.json");
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const fs::path blob_path = dir / "weights.bin";
  if (!fs::exists(manifest_path)) throw Error(ErrorKind::Io, "missing " + manifest_path.string());
  if (!fs::exists(blob_path)) throw Error(ErrorKind::Io, "missing " + blob_path.string());
  const Json manifest = read_json(manifest_path);

  CheckpointMeta meta;
  std::vector<TensorEntry> entries;
  try {
    if (manifest.at("format") != kFormat) mismatch("not an engraf checkpoint");
    meta.model = engraf_config_from_json(manifest.at("model_config"));
    meta.train = train_config_from_json(manifest.at("train_config"));
    meta.epoch = manifest.at("epoch").get<int>();
    if (!manifest.at("metrics").is_null()) meta.metrics = eval_metrics_from_json(manifest.at("metrics"));
    for (const auto& t : manifest.at("tensors")) {
      if (t.at("dtype") != "float32") mismatch("unsupported dtype for " + t.at("name").get<std::string>());
      entries.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(), t.at("offset").get<std::size_t>(),
                         t.at("length").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    mismatch(std::string("malformed manifest: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ManifestMismatch) throw;
    mismatch(e.what());
  }

  Model<float> model(meta.model, 0);
  auto params = model.parameters();
  auto buffers = model.buffers();
  std::vector<std::pair<std::string, Tensor<float>*>> targets;
  for (auto* p : params) targets.emplace_back(p->name, &p->value);
  for (auto& b : buffers) targets.emplace_back(b.name, b.value);
  if (targets.size() != entries.size()) {
    mismatch("manifest lists " + std::to_string(entries.size()) + " tensors, the model has " +
             std::to_string(targets.size()));
  }

  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto& [name, t] = targets[i];
    if (e.name != name) mismatch("tensor " + std::to_string(i) + " is '" + e.name + "', expected '" + name + "'");
    if (e.shape != t->shape()) {
      mismatch(name + " has shape " + shape_string(e.shape) + ", expected " + shape_string(t->shape()));
    }
    if (e.offset != expected_offset) mismatch(name + " is not contiguous with the previous tensor");
    if (e.length != 4 * shape_size(e.shape)) mismatch(name + " length disagrees with its shape");
    expected_offset += e.length;
  }

  std::ifstream in(blob_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + blob_path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < expected_offset) {
    throw Error(ErrorKind::TruncatedBlob, "weights.bin has " + std::to_string(blob.size()) + " bytes, manifest needs " +
                                              std::to_string(expected_offset));
  }
  if (blob.size() > expected_offset) mismatch("weights.bin has trailing bytes beyond the last tensor");
  for (std::size_t i = 0; i < entries.size(); ++i) read_le(blob, entries[i].offset, *targets[i].second);

  return LoadedCheckpoint{std::move(model), meta, std::move(entries)};
}

}  // namespace engraf
