#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "engraf/error.hpp"
#include "engraf/taxonomy.hpp"
#include "test_util.hpp"

using namespace engraf;

using test_util::error_kind;

TEST(Taxonomy, ParsesFourLineMap) {
  const auto tax = parse_taxonomy("0\ta\t0\tx\n1\tb\t0\tx\n2\tc\t1\ty\n3\td\t1\ty\n");
  EXPECT_EQ(tax.num_fine(), 4);
  EXPECT_EQ(tax.num_coarse(), 2);
  EXPECT_EQ(tax.parent(), (std::vector<ClassId>{0, 0, 1, 1}));
  EXPECT_EQ(tax.coarse_names()[1], "y");
  EXPECT_TRUE(validate_taxonomy(tax).empty());
}

TEST(Taxonomy, SkipsCommentsAndBlankLines) {
  const auto tax = parse_taxonomy("# header\n\n1\tb\t0\tx\n0\ta\t0\tx\n2\tc\t1\ty\n");
  EXPECT_EQ(tax.num_fine(), 3);
  EXPECT_EQ(tax.fine_names()[0], "a");
}

TEST(Taxonomy, RejectsFineWithTwoParents) {
  std::string text;
  for (int f = 0; f < 10; ++f) text += std::to_string(f) + "\tf" + std::to_string(f) + "\t" + std::to_string(f % 6) +
                                       "\tc" + std::to_string(f % 6) + "\n";
  text += "7\tf7\t5\tc5\n";
  EXPECT_EQ(error_kind([&] { parse_taxonomy(text); }), ErrorKind::DuplicateFine);
}

TEST(Taxonomy, RejectsSparseFineIds) {
  EXPECT_EQ(error_kind([] { parse_taxonomy("0\ta\t0\tx\n2\tc\t1\ty\n"); }), ErrorKind::SparseIds);
}

TEST(Taxonomy, RejectsCoarseWithoutChildren) {
  EXPECT_EQ(error_kind([] { parse_taxonomy("0\ta\t0\tx\n1\tb\t2\tz\n2\tc\t0\tx\n"); }), ErrorKind::NonSurjective);
}

TEST(Taxonomy, RejectsMalformedLines) {
  EXPECT_EQ(error_kind([] { parse_taxonomy("0\ta\t0\n"); }), ErrorKind::ParseError);
  EXPECT_EQ(error_kind([] { parse_taxonomy("zero\ta\t0\tx\n"); }), ErrorKind::ParseError);
}

TEST(Taxonomy, DeriveCoarse) {
  const auto tax = generate_synthetic_taxonomy(10, 5);
  EXPECT_EQ(derive_coarse(tax, 5), 2);
  EXPECT_EQ(error_kind([&] { derive_coarse(tax, 10); }), ErrorKind::UnknownLabel);
  EXPECT_EQ(error_kind([&] { derive_coarse(tax, -1); }), ErrorKind::UnknownLabel);
}

TEST(Taxonomy, ValidateReportsMissingCoarseId) {
  const auto tax = Taxonomy::make({0, 0, 1, 1, 2, 2}, {"a", "b", "c", "d", "e", "f"}, {"x", "y", "z", "w"});
  const auto report = validate_taxonomy(tax);
  ASSERT_EQ(report.size(), 1u);
  EXPECT_EQ(report[0].rule, TaxonomyRule::NonSurjective);
  EXPECT_EQ(report[0].id, 3);
}

TEST(Taxonomy, ValidateReportsCoarseNotSmaller) {
  const auto tax = Taxonomy::make({0, 1}, {"a", "b"}, {"x", "y"});
  const auto report = validate_taxonomy(tax);
  ASSERT_EQ(report.size(), 1u);
  EXPECT_EQ(report[0].rule, TaxonomyRule::CoarseNotSmaller);
}

TEST(Taxonomy, SyntheticExamples) {
  const auto t20 = generate_synthetic_taxonomy(20, 4);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(t20.parent()[i], i / 5);
  EXPECT_EQ(t20.children(0), (std::vector<ClassId>{0, 1, 2, 3, 4}));

  const auto t10 = generate_synthetic_taxonomy(10, 3);
  std::vector<std::size_t> sizes;
  for (int c = 0; c < 3; ++c) sizes.push_back(t10.children(c).size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 2}));

  EXPECT_EQ(error_kind([] { generate_synthetic_taxonomy(5, 5); }), ErrorKind::InvalidShape);
  EXPECT_EQ(error_kind([] { generate_synthetic_taxonomy(5, 0); }), ErrorKind::InvalidShape);
  EXPECT_EQ(error_kind([] { generate_synthetic_taxonomy(0, 0); }), ErrorKind::InvalidShape);
}

TEST(Taxonomy, SyntheticAlwaysValidAndContiguous) {
  for (int fine = 2; fine <= 60; ++fine) {
    for (int coarse = 1; coarse < fine; ++coarse) {
      const auto tax = generate_synthetic_taxonomy(fine, coarse);
      ASSERT_TRUE(validate_taxonomy(tax).empty()) << fine << "/" << coarse;
      for (int i = 1; i < fine; ++i) {
        const int step = tax.parent()[i] - tax.parent()[i - 1];
        ASSERT_TRUE(step == 0 || step == 1) << fine << "/" << coarse;
      }
      EXPECT_EQ(tax, generate_synthetic_taxonomy(fine, coarse));
    }
  }
}

TEST(Taxonomy, DeriveCoarseImageIsExactlyCoarseRange) {
  for (auto [f, c] : {std::pair{20, 4}, {10, 3}, {100, 20}, {7, 6}}) {
    const auto tax = generate_synthetic_taxonomy(f, c);
    std::set<ClassId> image;
    for (int i = 0; i < f; ++i) image.insert(derive_coarse(tax, i));
    EXPECT_EQ(static_cast<int>(image.size()), c);
    EXPECT_EQ(*image.begin(), 0);
    EXPECT_EQ(*image.rbegin(), c - 1);
  }
}

TEST(Taxonomy, SaveLoadRoundTrip) {
  const test_util::TempDir dir;
  for (auto [f, c] : {std::pair{20, 4}, {10, 3}, {9, 2}}) {
    const auto tax = generate_synthetic_taxonomy(f, c);
    save_taxonomy(tax, dir.path() / "t.tsv");
    EXPECT_EQ(load_taxonomy(dir.path() / "t.tsv"), tax);
  }
  const auto cifar = load_taxonomy(test_util::cifar_taxonomy_path());
  save_taxonomy(cifar, dir.path() / "c.tsv");
  EXPECT_EQ(load_taxonomy(dir.path() / "c.tsv"), cifar);
}

TEST(Taxonomy, MissingFile) {
  EXPECT_EQ(error_kind([] { load_taxonomy("/nonexistent/taxonomy.tsv"); }), ErrorKind::MissingFile);
}

TEST(Taxonomy, CifarMap) {
  const auto tax = load_taxonomy(test_util::cifar_taxonomy_path());
  EXPECT_EQ(tax.num_fine(), 100);
  EXPECT_EQ(tax.num_coarse(), 20);
  EXPECT_TRUE(validate_taxonomy(tax).empty());
  for (int c = 0; c < 20; ++c) EXPECT_EQ(tax.children(c).size(), 5u);
  const auto& names = tax.fine_names();
  const auto apple = std::find(names.begin(), names.end(), "apple") - names.begin();
  EXPECT_EQ(tax.coarse_names()[derive_coarse(tax, static_cast<ClassId>(apple))], "fruit_and_vegetables");
}

TEST(Taxonomy, RestrictReindexesDensely) {
  const auto tax = generate_synthetic_taxonomy(20, 4);
  const auto sub = restrict_taxonomy(tax, {2, 0});
  EXPECT_EQ(sub.taxonomy.num_fine(), 10);
  EXPECT_EQ(sub.taxonomy.num_coarse(), 2);
  EXPECT_TRUE(validate_taxonomy(sub.taxonomy).empty());
  EXPECT_EQ(sub.fine_map[10], 0);
  EXPECT_EQ(sub.taxonomy.parent()[0], 0);
  EXPECT_EQ(sub.fine_map[0], 5);
  EXPECT_EQ(sub.taxonomy.parent()[5], 1);
  EXPECT_EQ(sub.fine_map[5], -1);
}
