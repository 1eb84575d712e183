#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include "engraf/data.hpp"
#include "engraf/error.hpp"
#include "test_util.hpp"

using namespace engraf;
using test_util::error_kind;

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Dataset tiny_dataset(std::size_t n) {
  Dataset d;
  d.image_size = 16;
  const auto tax = generate_synthetic_taxonomy(4, 2);
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord r;
    r.pixels.assign(record_bytes(16) - 2, static_cast<std::uint8_t>(i));
    r.labels = make_label(tax, static_cast<ClassId>(i % 4));
    d.records.push_back(std::move(r));
  }
  return d;
}

}  // namespace

TEST(Data, RecordFileRoundTripIsByteIdentical) {
  const test_util::TempDir dir;
  std::mt19937_64 rng(5);
  std::vector<std::uint8_t> bytes;
  for (int r = 0; r < 7; ++r) {
    bytes.push_back(static_cast<std::uint8_t>(r % 20));
    bytes.push_back(static_cast<std::uint8_t>(r * 13 % 100));
    for (std::size_t k = 0; k < 3072; ++k) bytes.push_back(static_cast<std::uint8_t>(rng()));
  }
  write_bytes(dir.path() / "a.bin", bytes);
  const auto records = read_records(dir.path() / "a.bin", 32, 100, 20);
  ASSERT_EQ(records.size(), 7u);
  EXPECT_EQ(records[3].labels.coarse, 3);
  EXPECT_EQ(records[3].labels.fine, 39);
  write_records(records, dir.path() / "b.bin");
  EXPECT_EQ(read_bytes(dir.path() / "b.bin"), bytes);
}

TEST(Data, RecordErrors) {
  const test_util::TempDir dir;
  EXPECT_EQ(error_kind([&] { read_records(dir.path() / "none.bin", 32, 100, 20); }), ErrorKind::MissingFile);

  std::vector<std::uint8_t> bytes(3074 + 5, 0);
  write_bytes(dir.path() / "short.bin", bytes);
  EXPECT_EQ(error_kind([&] { read_records(dir.path() / "short.bin", 32, 100, 20); }), ErrorKind::CorruptRecord);

  bytes.assign(3074, 0);
  bytes[1] = 100;
  write_bytes(dir.path() / "label.bin", bytes);
  EXPECT_EQ(error_kind([&] { read_records(dir.path() / "label.bin", 32, 100, 20); }), ErrorKind::LabelOutOfRange);
  bytes[1] = 0;
  bytes[0] = 20;
  write_bytes(dir.path() / "label.bin", bytes);
  EXPECT_EQ(error_kind([&] { read_records(dir.path() / "label.bin", 32, 100, 20); }), ErrorKind::LabelOutOfRange);
}

TEST(Data, SyntheticCountsLabelsAndDeterminism) {
  const auto tax = generate_synthetic_taxonomy(20, 4);
  const auto a = generate_synthetic_dataset(tax, 10, 32, 7);
  EXPECT_EQ(a.size(), 200u);
  EXPECT_EQ(a.image_size, 32);
  for (const auto& r : a.records) {
    EXPECT_EQ(r.pixels.size(), 3u * 32 * 32);
    EXPECT_EQ(r.labels.coarse, derive_coarse(tax, r.labels.fine));
  }
  const auto b = generate_synthetic_dataset(tax, 10, 32, 7);
  EXPECT_EQ(a.records, b.records);
  const auto c = generate_synthetic_dataset(tax, 10, 32, 8);
  EXPECT_NE(a.records, c.records);
}

TEST(Data, SyntheticRejectsSmallImages) {
  const auto tax = generate_synthetic_taxonomy(4, 2);
  EXPECT_EQ(error_kind([&] { generate_synthetic_dataset(tax, 2, 15, 1); }), ErrorKind::InvalidShape);
  EXPECT_EQ(error_kind([&] { generate_synthetic_dataset(tax, 0, 32, 1); }), ErrorKind::InvalidShape);
}

// A pixel-space nearest-centroid classifier separates coarse classes: the
// stripe background is visible without any learning.
TEST(Data, SyntheticCoarseSignalIsLinearlyVisible) {
  const auto tax = generate_synthetic_taxonomy(20, 4);
  const auto train = generate_synthetic_dataset(tax, 20, 32, 1);
  const auto test = generate_synthetic_dataset(tax, 10, 32, 2);
  const std::size_t dim = 3 * 32 * 32;
  std::vector<std::vector<double>> centroid(4, std::vector<double>(dim, 0.0));
  std::vector<int> count(4, 0);
  for (const auto& r : train.records) {
    auto& c = centroid[r.labels.coarse];
    for (std::size_t k = 0; k < dim; ++k) c[k] += r.pixels[k];
    ++count[r.labels.coarse];
  }
  for (int c = 0; c < 4; ++c)
    for (auto& v : centroid[c]) v /= count[c];
  int correct = 0;
  for (const auto& r : test.records) {
    double best = 1e300;
    int arg = -1;
    for (int c = 0; c < 4; ++c) {
      double d = 0;
      for (std::size_t k = 0; k < dim; ++k) d += (r.pixels[k] - centroid[c][k]) * (r.pixels[k] - centroid[c][k]);
      if (d < best) best = d, arg = c;
    }
    correct += arg == r.labels.coarse;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
  EXPECT_GT(acc, 2.0 * 0.25) << "nearest-centroid coarse accuracy " << acc;
}

TEST(Data, DatasetDirRoundTrip) {
  const test_util::TempDir dir;
  SplitDataset split;
  split.taxonomy = generate_synthetic_taxonomy(6, 2);
  split.train = generate_synthetic_dataset(split.taxonomy, 3, 16, 1);
  split.test = generate_synthetic_dataset(split.taxonomy, 2, 16, 2);
  save_dataset_dir(split, dir.path());
  const auto back = load_dataset_dir(dir.path());
  EXPECT_EQ(back.taxonomy, split.taxonomy);
  EXPECT_EQ(back.train.image_size, 16);
  EXPECT_EQ(back.train.records, split.train.records);
  EXPECT_EQ(back.test.records, split.test.records);
}

TEST(Data, RestrictDatasetRelabels) {
  SplitDataset split;
  split.taxonomy = generate_synthetic_taxonomy(20, 4);
  split.train = generate_synthetic_dataset(split.taxonomy, 2, 16, 1);
  split.test = generate_synthetic_dataset(split.taxonomy, 1, 16, 2);
  const auto sub = restrict_dataset(split, {3, 1});
  EXPECT_EQ(sub.taxonomy.num_fine(), 10);
  EXPECT_EQ(sub.train.size(), 20u);
  EXPECT_EQ(sub.test.size(), 10u);
  for (const auto& r : sub.train.records) {
    EXPECT_LT(r.labels.fine, 10);
    EXPECT_EQ(r.labels.coarse, derive_coarse(sub.taxonomy, r.labels.fine));
  }
  EXPECT_EQ(sub.train.records[0].pixels, split.train.records[10].pixels);
}

TEST(Data, EvalAugmentNormalizesOnly) {
  ImageRecord r;
  r.pixels.assign(3 * 16 * 16, 128);
  r.pixels[5] = 0;
  r.pixels[6] = 255;
  std::mt19937_64 rng(1);
  const auto before = rng;
  const auto t = augment(r, 16, rng, AugmentPolicy::eval());
  EXPECT_EQ(t.shape(), (std::vector<std::size_t>{3, 16, 16}));
  EXPECT_NEAR(t[0], (128.0 / 255.0 - 0.5) / 0.5, 1e-6);
  EXPECT_FLOAT_EQ(t[5], -1.0f);
  EXPECT_FLOAT_EQ(t[6], 1.0f);
  EXPECT_EQ(rng, before);
}

TEST(Data, TrainAugmentIdentityCase) {
  const auto tax = generate_synthetic_taxonomy(4, 2);
  const auto d = generate_synthetic_dataset(tax, 1, 32, 3);
  auto policy = AugmentPolicy::train();
  policy.flip_probability = 0.0;
  policy.forced_offset_x = 4;
  policy.forced_offset_y = 4;
  std::mt19937_64 rng(9);
  const auto train = augment(d.records[0], 32, rng, policy);
  const auto eval = augment(d.records[0], 32, rng, AugmentPolicy::eval());
  EXPECT_EQ(train.shape(), (std::vector<std::size_t>{3, 32, 32}));
  EXPECT_TRUE(std::ranges::equal(train.values(), eval.values()));
}

TEST(Data, TrainAugmentShiftsAndFlips) {
  ImageRecord r;
  r.pixels.resize(3 * 16 * 16);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) r.pixels[i] = static_cast<std::uint8_t>(i % 251);
  auto policy = AugmentPolicy::train();
  policy.flip_probability = 0.0;
  policy.forced_offset_x = 0;
  policy.forced_offset_y = 4;
  std::mt19937_64 rng(1);
  const auto shifted = augment(r, 16, rng, policy);
  // Columns 0..3 come from the zero padding, column 4 is source column 0.
  EXPECT_FLOAT_EQ(shifted[0], normalize_pixel(0));
  EXPECT_FLOAT_EQ(shifted[4], normalize_pixel(r.pixels[0]));

  policy.flip_probability = 1.0;
  policy.forced_offset_x = 4;
  const auto flipped = augment(r, 16, rng, policy);
  EXPECT_FLOAT_EQ(flipped[0], normalize_pixel(r.pixels[15]));
  EXPECT_FLOAT_EQ(flipped[15], normalize_pixel(r.pixels[0]));
}

TEST(Data, BatchIterNoShuffle) {
  const auto d = tiny_dataset(10);
  const auto batches = batch_iter(d, 4, std::nullopt, 0);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 4u);
  EXPECT_EQ(batches[1].size(), 4u);
  EXPECT_EQ(batches[2].size(), 2u);
  std::vector<std::size_t> seen;
  for (const auto& b : batches) seen.insert(seen.end(), b.indices.begin(), b.indices.end());
  std::vector<std::size_t> identity(10);
  std::iota(identity.begin(), identity.end(), 0);
  EXPECT_EQ(seen, identity);
  EXPECT_EQ(batches[2].inputs.shape(), (std::vector<std::size_t>{2, 3, 16, 16}));
}

TEST(Data, BatchIterShuffleIsPermutationOfSeedAndEpoch) {
  const auto d = tiny_dataset(1000);
  const auto e0 = epoch_order(1000, 42, 0);
  EXPECT_EQ(e0, epoch_order(1000, 42, 0));
  EXPECT_NE(e0, epoch_order(1000, 42, 1));
  EXPECT_NE(e0, epoch_order(1000, 43, 0));
  std::set<std::size_t> unique(e0.begin(), e0.end());
  EXPECT_EQ(unique.size(), 1000u);

  const auto batches = batch_iter(d, 64, 42, 0);
  std::vector<std::size_t> seen;
  for (const auto& b : batches) {
    seen.insert(seen.end(), b.indices.begin(), b.indices.end());
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_EQ(b.fine_labels[i], d.records[b.indices[i]].labels.fine);
      EXPECT_EQ(b.coarse_labels[i], d.records[b.indices[i]].labels.coarse);
    }
  }
  EXPECT_EQ(seen, e0);
}

TEST(Data, BatchesAreRandomAccess) {
  const auto tax = generate_synthetic_taxonomy(4, 2);
  const auto d = generate_synthetic_dataset(tax, 5, 16, 1);
  const BatchIterator it(d, 3, 11, 2, AugmentPolicy::train(), 99);
  const auto all = batch_iter(d, 3, 11, 2, AugmentPolicy::train(), 99);
  ASSERT_EQ(it.size(), all.size());
  for (std::size_t i = it.size(); i-- > 0;) {
    const auto b = it.batch(i);
    EXPECT_EQ(b.indices, all[i].indices);
    EXPECT_TRUE(std::ranges::equal(b.inputs.values(), all[i].inputs.values()));
  }
}

TEST(Data, BatchIterRejectsEmpty) {
  const Dataset empty;
  EXPECT_EQ(error_kind([&] { batch_iter(empty, 4, std::nullopt, 0); }), ErrorKind::EmptyDataset);
}
