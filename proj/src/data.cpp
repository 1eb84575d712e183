#include "engraf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <string>

#include <json.hpp>

#include "engraf/error.hpp"

namespace engraf {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::vector<ImageRecord> read_records(const fs::path& path, int image_size, int num_fine, int num_coarse) {
  const auto bytes = read_file(path);
  const std::size_t stride = record_bytes(image_size);
  if (bytes.size() % stride != 0) {
    throw Error(ErrorKind::CorruptRecord, path.string() + ": length " + std::to_string(bytes.size()) +
                                              " is not a multiple of " + std::to_string(stride));
  }
  std::vector<ImageRecord> records(bytes.size() / stride);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const std::uint8_t* rec = bytes.data() + r * stride;
    const int coarse = rec[0], fine = rec[1];
    if (fine >= num_fine || coarse >= num_coarse) {
      throw Error(ErrorKind::LabelOutOfRange, path.string() + ": record " + std::to_string(r) + " has labels (" +
                                                  std::to_string(coarse) + ", " + std::to_string(fine) + ")");
    }
    records[r].labels = {fine, coarse};
    records[r].pixels.assign(rec + 2, rec + stride);
  }
  return records;
}

void write_records(const std::vector<ImageRecord>& records, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& rec : records) {
    const char labels[2] = {static_cast<char>(rec.labels.coarse), static_cast<char>(rec.labels.fine)};
    out.write(labels, 2);
    out.write(reinterpret_cast<const char*>(rec.pixels.data()), static_cast<std::streamsize>(rec.pixels.size()));
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

SplitDataset load_cifar100(const fs::path& dir) {
  const auto fine_names = read_lines(dir / "fine_label_names.txt");
  const auto coarse_names = read_lines(dir / "coarse_label_names.txt");
  const int nf = static_cast<int>(fine_names.size());
  const int nc = static_cast<int>(coarse_names.size());

  SplitDataset out;
  out.train.image_size = out.test.image_size = 32;
  out.train.records = read_records(dir / "train.bin", 32, nf, nc);
  out.test.records = read_records(dir / "test.bin", 32, nf, nc);

  std::vector<ClassId> parent(static_cast<std::size_t>(nf), -1);
  for (const auto* split : {&out.train, &out.test}) {
    for (const auto& rec : split->records) {
      auto& p = parent[static_cast<std::size_t>(rec.labels.fine)];
      if (p == -1) {
        p = rec.labels.coarse;
      } else if (p != rec.labels.coarse) {
        throw Error(ErrorKind::CorruptRecord, "fine class " + std::to_string(rec.labels.fine) +
                                                  " appears under coarse classes " + std::to_string(p) + " and " +
                                                  std::to_string(rec.labels.coarse));
      }
    }
  }
  out.taxonomy = Taxonomy::make(std::move(parent), fine_names, coarse_names);
  if (auto violations = validate_taxonomy(out.taxonomy); !violations.empty()) {
    throw Error(ErrorKind::CorruptRecord, "derived taxonomy invalid: " + violations.front().message);
  }
  return out;
}

SplitDataset load_dataset_dir(const fs::path& dir) {
  if (!fs::exists(dir / "taxonomy.tsv")) return load_cifar100(dir);
  SplitDataset out;
  out.taxonomy = load_taxonomy(dir / "taxonomy.tsv");
  int size = 32;
  if (fs::exists(dir / "dataset.json")) {
    std::ifstream in(dir / "dataset.json");
    size = nlohmann::json::parse(in).value("image_size", 32);
  }
  out.train.image_size = out.test.image_size = size;
  const int nf = out.taxonomy.num_fine(), nc = out.taxonomy.num_coarse();
  out.train.records = read_records(dir / "train.bin", size, nf, nc);
  out.test.records = read_records(dir / "test.bin", size, nf, nc);
  for (const auto* split : {&out.train, &out.test}) {
    for (const auto& rec : split->records) {
      if (derive_coarse(out.taxonomy, rec.labels.fine) != rec.labels.coarse) {
        throw Error(ErrorKind::CorruptRecord, "record coarse label disagrees with taxonomy.tsv");
      }
    }
  }
  return out;
}

void save_dataset_dir(const SplitDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  write_records(data.train.records, dir / "train.bin");
  write_records(data.test.records, dir / "test.bin");
  save_taxonomy(data.taxonomy, dir / "taxonomy.tsv");
  std::ofstream meta(dir / "dataset.json");
  meta << nlohmann::json{{"image_size", data.train.image_size},
                         {"train_records", data.train.size()},
                         {"test_records", data.test.size()},
                         {"num_fine", data.taxonomy.num_fine()},
                         {"num_coarse", data.taxonomy.num_coarse()}}
              .dump(2)
       << '\n';
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive, portable
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

double uniform_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

bool glyph_covers(int shape, int dx, int dy, int r) {
  const int ax = std::abs(dx), ay = std::abs(dy);
  const int d2 = dx * dx + dy * dy;
  const int t = std::max(1, r / 3);
  switch (shape) {
    case 0: return ax <= r && ay <= r;                         // square
    case 1: return (ax <= t && ay <= r) || (ay <= t && ax <= r);  // plus
    case 2: return d2 <= r * r;                                // disk
    case 3: return d2 <= r * r && d2 >= (r - t) * (r - t);     // ring
    default: return std::abs(ax - ay) <= t / 2 && ax <= r;  // diagonal cross
  }
}

}  // namespace

Dataset generate_synthetic_dataset(const Taxonomy& tax, int n_per_fine, int size, std::uint64_t seed) {
  if (size < 16 || n_per_fine <= 0) {
    throw Error(ErrorKind::InvalidShape, "synthetic dataset needs size >= 16 and n_per_fine >= 1");
  }
  constexpr int kShapes = 5;
  constexpr int kSlots = 9;
  const int plane = size * size;
  const int radius = std::max(2, size / 8);
  const int jitter = std::max(1, size / 16);

  Dataset data;
  data.image_size = size;
  data.records.reserve(static_cast<std::size_t>(tax.num_fine() * n_per_fine));
  for (int fine = 0; fine < tax.num_fine(); ++fine) {
    const int coarse = derive_coarse(tax, fine);
    const double angle = std::numbers::pi * coarse / tax.num_coarse();
    const double freq = 2.0 + coarse % 3;
    const int shape = fine % kShapes;
    const int slot = (fine / kShapes) % kSlots;
    const int tint = (fine / (kShapes * kSlots)) % 3;
    const int cx0 = size * (1 + slot % 3) / 4, cy0 = size * (1 + slot / 3) / 4;

    for (int k = 0; k < n_per_fine; ++k) {
      std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(fine), static_cast<std::uint64_t>(k)));
      const double phase = 2.0 * std::numbers::pi * uniform_unit(rng);
      const int cx = cx0 + uniform_int(rng, -jitter, jitter);
      const int cy = cy0 + uniform_int(rng, -jitter, jitter);

      ImageRecord rec;
      rec.labels = {fine, coarse};
      rec.pixels.resize(static_cast<std::size_t>(3 * plane));
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double u = (x * std::cos(angle) + y * std::sin(angle)) / size;
          const double wave = std::sin(2.0 * std::numbers::pi * freq * u + phase);
          const bool glyph = glyph_covers(shape, x - cx, y - cy, radius);
          for (int c = 0; c < 3; ++c) {
            int v = glyph ? (c == tint ? 235 : 60) : static_cast<int>(std::lround(110.0 + 50.0 * wave));
            v += uniform_int(rng, -12, 12);
            rec.pixels[static_cast<std::size_t>(c * plane + y * size + x)] =
                static_cast<std::uint8_t>(std::clamp(v, 0, 255));
          }
        }
      }
      data.records.push_back(std::move(rec));
    }
  }
  return data;
}

SplitDataset restrict_dataset(const SplitDataset& data, const std::vector<ClassId>& coarse_ids) {
  auto subset = restrict_taxonomy(data.taxonomy, coarse_ids);
  SplitDataset out;
  out.taxonomy = subset.taxonomy;
  auto filter = [&](const Dataset& src, Dataset& dst) {
    dst.image_size = src.image_size;
    for (const auto& rec : src.records) {
      const ClassId f = subset.fine_map[static_cast<std::size_t>(rec.labels.fine)];
      if (f < 0) continue;
      dst.records.push_back({rec.pixels, make_label(out.taxonomy, f)});
    }
  };
  filter(data.train, out.train);
  filter(data.test, out.test);
  return out;
}

void augment(const ImageRecord& record, int image_size, std::mt19937_64& rng, const AugmentPolicy& policy,
             float* out) {
  const int crop = policy.crop > 0 ? policy.crop : image_size;
  const int plane = image_size * image_size;
  int pad = 0, off_x = 0, off_y = 0;
  bool flip = false;
  if (policy.kind == AugmentPolicy::Kind::train) {
    pad = policy.pad;
    const int span = image_size + 2 * pad - crop;
    off_x = policy.forced_offset_x ? *policy.forced_offset_x : uniform_int(rng, 0, span);
    off_y = policy.forced_offset_y ? *policy.forced_offset_y : uniform_int(rng, 0, span);
    flip = policy.flip_probability > 0.0 && uniform_unit(rng) < policy.flip_probability;
  } else {
    // Center crop when the crop is smaller than the image.
    off_x = off_y = (image_size - crop) / 2;
  }
  const float zero = normalize_pixel(0);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < crop; ++y) {
      const int sy = y + off_y - pad;
      for (int x = 0; x < crop; ++x) {
        const int px = flip ? crop - 1 - x : x;
        const int sx = px + off_x - pad;
        float v = zero;
        if (sy >= 0 && sy < image_size && sx >= 0 && sx < image_size) {
          v = normalize_pixel(record.pixels[static_cast<std::size_t>(c * plane + sy * image_size + sx)]);
        }
        out[(c * crop + y) * crop + x] = v;
      }
    }
  }
}

Tensor<float> augment(const ImageRecord& record, int image_size, std::mt19937_64& rng, const AugmentPolicy& policy) {
  const std::size_t crop = static_cast<std::size_t>(policy.crop > 0 ? policy.crop : image_size);
  Tensor<float> out({3, crop, crop});
  augment(record, image_size, rng, policy, out.data());
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::optional<std::uint64_t> shuffle_seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle_seed) {
    std::mt19937_64 rng(mix_seed(*shuffle_seed, 0x5eedULL, static_cast<std::uint64_t>(epoch)));
    // Fisher-Yates with an explicit index draw so the order is identical across standard libraries.
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  }
  return order;
}

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed,
                             int epoch, AugmentPolicy policy, std::uint64_t augment_seed)
    : data_(&data), batch_size_(batch_size), epoch_(epoch), policy_(policy), augment_seed_(augment_seed) {
  if (data.empty()) throw Error(ErrorKind::EmptyDataset, "cannot batch an empty dataset");
  if (batch_size == 0) throw Error(ErrorKind::InvalidConfig, "batch size must be positive");
  order_ = epoch_order(data.size(), shuffle_seed, epoch);
}

std::vector<std::size_t> BatchIterator::batch_indices(std::size_t i) const {
  const std::size_t begin = i * batch_size_;
  const std::size_t end = std::min(order_.size(), begin + batch_size_);
  return {order_.begin() + static_cast<long>(begin), order_.begin() + static_cast<long>(end)};
}

Batch BatchIterator::batch(std::size_t i) const {
  Batch batch;
  batch.indices = batch_indices(i);
  const int size = data_->image_size;
  const std::size_t crop = static_cast<std::size_t>(policy_.crop > 0 ? policy_.crop : size);
  const std::size_t per_image = 3 * crop * crop;
  batch.inputs = Tensor<float>({batch.indices.size(), 3, crop, crop});
  batch.fine_labels.resize(batch.indices.size());
  batch.coarse_labels.resize(batch.indices.size());
  const auto count = static_cast<std::ptrdiff_t>(batch.indices.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < count; ++b) {
    const std::size_t idx = batch.indices[static_cast<std::size_t>(b)];
    const auto& rec = data_->records[idx];
    std::mt19937_64 rng(mix_seed(augment_seed_, static_cast<std::uint64_t>(epoch_), idx));
    augment(rec, size, rng, policy_, batch.inputs.data() + static_cast<std::size_t>(b) * per_image);
    batch.fine_labels[static_cast<std::size_t>(b)] = rec.labels.fine;
    batch.coarse_labels[static_cast<std::size_t>(b)] = rec.labels.coarse;
  }
  return batch;
}

std::vector<Batch> batch_iter(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed,
                              int epoch, AugmentPolicy policy, std::uint64_t augment_seed) {
  BatchIterator it(data, batch_size, shuffle_seed, epoch, policy, augment_seed);
  std::vector<Batch> out;
  out.reserve(it.size());
  for (std::size_t i = 0; i < it.size(); ++i) out.push_back(it.batch(i));
  return out;
}

}  // namespace engraf
