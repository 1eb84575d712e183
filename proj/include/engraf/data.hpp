#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "engraf/taxonomy.hpp"
#include "engraf/tensor.hpp"

namespace engraf {

/// One image: 3 x size x size bytes, channel-major (R plane, G plane, B plane).
struct ImageRecord {
  std::vector<std::uint8_t> pixels;
  LabelPair labels;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Dataset {
  int image_size = 32;
  std::vector<ImageRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

/// Bytes per record in the CIFAR layout: coarse byte, fine byte, 3*size*size pixels.
constexpr std::size_t record_bytes(int image_size) {
  return 2 + 3 * static_cast<std::size_t>(image_size) * static_cast<std::size_t>(image_size);
}

/// Parses a CIFAR-100-layout file. Labels are range-checked against the class
/// counts (LabelOutOfRange); the file length must be a whole number of records
/// (CorruptRecord).
std::vector<ImageRecord> read_records(const std::filesystem::path& path, int image_size, int num_fine,
                                      int num_coarse);
void write_records(const std::vector<ImageRecord>& records, const std::filesystem::path& path);

struct SplitDataset {
  Dataset train;
  Dataset test;
  Taxonomy taxonomy;
};

/// Reads train.bin, test.bin, fine_label_names.txt and coarse_label_names.txt
/// from the CIFAR-100 binary distribution. The taxonomy is assembled from the
/// (coarse, fine) byte pairs; a fine class seen under two coarse classes is a
/// CorruptRecord.
SplitDataset load_cifar100(const std::filesystem::path& dir);

/// Loads either a directory written by save_dataset_dir (taxonomy.tsv sidecar)
/// or a CIFAR-100 binary directory.
SplitDataset load_dataset_dir(const std::filesystem::path& dir);

/// Writes train.bin, test.bin, taxonomy.tsv and dataset.json.
void save_dataset_dir(const SplitDataset& data, const std::filesystem::path& dir);

/// Desk-scale hierarchical images. The coarse class sets the orientation and
/// frequency of a striped background; the fine class sets the shape and
/// position of a foreground glyph. Phase, glyph jitter and pixel noise are
/// drawn from `seed`. Records are ordered by fine class.
Dataset generate_synthetic_dataset(const Taxonomy& tax, int n_per_fine, int size, std::uint64_t seed);

/// Keeps only records whose fine class belongs to `coarse_ids` and relabels
/// them under the restricted taxonomy.
SplitDataset restrict_dataset(const SplitDataset& data, const std::vector<ClassId>& coarse_ids);

struct AugmentPolicy {
  enum class Kind { train, eval };
  Kind kind = Kind::eval;
  int pad = 4;
  int crop = 0;  // 0: same as the image size
  double flip_probability = 0.5;
  std::optional<int> forced_offset_x;  // crop offset into the padded image
  std::optional<int> forced_offset_y;

  static AugmentPolicy train() {
    AugmentPolicy p;
    p.kind = Kind::train;
    return p;
  }
  static AugmentPolicy eval() { return AugmentPolicy{}; }
};

/// Writes the normalized 3 x crop x crop tensor for `record` into `out`:
/// value = (pixel / 255 - 0.5) / 0.5 after padding, cropping and flipping.
/// Eval policy never touches `rng`.
void augment(const ImageRecord& record, int image_size, std::mt19937_64& rng, const AugmentPolicy& policy,
             float* out);
Tensor<float> augment(const ImageRecord& record, int image_size, std::mt19937_64& rng,
                      const AugmentPolicy& policy);

/// Normalized pixel value.
inline float normalize_pixel(std::uint8_t p) { return (static_cast<float>(p) / 255.0f - 0.5f) / 0.5f; }

struct Batch {
  Tensor<float> inputs;  // B x 3 x H x W
  std::vector<ClassId> fine_labels;
  std::vector<ClassId> coarse_labels;
  std::vector<std::size_t> indices;  // dataset positions

  std::size_t size() const { return fine_labels.size(); }
};

/// SplitMix64 combination used to derive independent streams from a seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Dataset order for one epoch: identity without a seed, otherwise a
/// permutation that depends only on (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::optional<std::uint64_t> shuffle_seed, int epoch);

/// Random-access view of one epoch's batches. Batch i is a pure function of
/// (dataset, batch_size, shuffle_seed, epoch, policy, augment_seed, i), so
/// batches may be assembled in any order or concurrently.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed, int epoch,
                AugmentPolicy policy = AugmentPolicy::eval(), std::uint64_t augment_seed = 0);

  std::size_t size() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  const std::vector<std::size_t>& order() const { return order_; }
  std::vector<std::size_t> batch_indices(std::size_t i) const;
  Batch batch(std::size_t i) const;

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  int epoch_;
  AugmentPolicy policy_;
  std::uint64_t augment_seed_;
  std::vector<std::size_t> order_;
};

/// Convenience: every batch of one epoch, in order.
std::vector<Batch> batch_iter(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed,
                              int epoch, AugmentPolicy policy = AugmentPolicy::eval(), std::uint64_t augment_seed = 0);

}  // namespace engraf
