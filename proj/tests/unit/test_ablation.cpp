#include <gtest/gtest.h>

#include "engraf/ablation.hpp"
#include "engraf/error.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace engraf;
using test_util::error_kind;

namespace {

std::vector<AblationEntry> E(std::initializer_list<AblationEntry> l) { return l; }

}  // namespace

TEST(AblationGrid, AxesForm) {
  const auto grid = parse_ablation_grid("variant=resnet,two_branch,graft,engraf;G=2..5");
  EXPECT_EQ(grid, E({{Variant::resnet, 0},
                     {Variant::two_branch, 0},
                     {Variant::graft, 1},
                     {Variant::engraf, 2},
                     {Variant::engraf, 3},
                     {Variant::engraf, 4},
                     {Variant::engraf, 5}}));
  EXPECT_EQ(parse_ablation_grid(" variant = engraf , graft:3 ; G = 2,4 "),
            E({{Variant::engraf, 2}, {Variant::engraf, 4}, {Variant::graft, 3}}));
  EXPECT_EQ(parse_ablation_grid("variant=engraf"), E({{Variant::engraf, 4}}));
}

TEST(AblationGrid, ListForm) {
  EXPECT_EQ(parse_ablation_grid("resnet,two_branch,graft:1,engraf:4"),
            E({{Variant::resnet, 0}, {Variant::two_branch, 0}, {Variant::graft, 1}, {Variant::engraf, 4}}));
  EXPECT_EQ(parse_ablation_grid("engraf"), E({{Variant::engraf, 4}}));
}

TEST(AblationGrid, Errors) {
  for (const char* bad : {"", "variant=", "variant=vgg", "variant=engraf;G=5..2", "variant=engraf;G=x", "depth=18",
                          "resnet:2", "engraf:0", "resnet,,engraf", "engraf:4x", "variant=engraf;size"}) {
    EXPECT_EQ(error_kind([&] { parse_ablation_grid(bad); }), ErrorKind::InvalidConfig) << bad;
  }
  EXPECT_EQ(error_kind([&] { parse_ablation_grid("resnet,resnet"); }), ErrorKind::DuplicateEntry);
  EXPECT_EQ(error_kind([&] { parse_ablation_grid("variant=engraf,engraf:4;G=4"); }), ErrorKind::DuplicateEntry);
  EXPECT_EQ(error_kind([&] { check_distinct(E({{Variant::graft, 2}, {Variant::graft, 2}})); }),
            ErrorKind::DuplicateEntry);
  EXPECT_NO_THROW(check_distinct(E({{Variant::graft, 2}, {Variant::engraf, 2}})));
}

TEST(AblationGrid, Labels) {
  EXPECT_EQ(entry_label({Variant::resnet, 0}), "resnet");
  EXPECT_EQ(entry_label({Variant::engraf, 4}), "engraf(G=4)");
  EXPECT_EQ(entry_label({Variant::graft, 1}), "graft(G=1)");
}

TEST(Ablation, RunsEveryRowFromTheSameStart) {
  const auto tax = generate_synthetic_taxonomy(4, 2);
  const auto train = generate_synthetic_dataset(tax, 8, 16, 1);
  const auto test = generate_synthetic_dataset(tax, 4, 16, 2);
  auto base = fixtures::micro_engraf_config();
  base.input_size = 16;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.01;
  cfg.deterministic = true;
  cfg.eval_batch_size = 16;

  const auto grid = E({{Variant::resnet, 0}, {Variant::engraf, 2}});
  std::size_t seen = 0;
  const auto rows = run_ablation(grid, base, train, test, tax, cfg, [&](const AblationRow&) { ++seen; });
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(seen, 2u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].entry, grid[i]);
    EXPECT_EQ(rows[i].metrics.count, test.records.size());
    EXPECT_GE(rows[i].wall_time, 0.0);
  }
  EXPECT_LT(rows[0].param_count, rows[1].param_count);

  // A row equals training that architecture alone with the same settings.
  auto solo_cfg = base;
  solo_cfg.variant = Variant::engraf;
  solo_cfg.graft_size = 2;
  Model<float> solo(solo_cfg, init_seed_for(cfg.seed));
  FitOptions opts;
  opts.measure_train_accuracy = false;
  fit(solo, train, Dataset{train.image_size, {}}, tax, cfg, opts);
  EXPECT_EQ(evaluate(solo, test, tax, 16), rows[1].metrics);
  EXPECT_EQ(param_count(solo), rows[1].param_count);

  const auto tsv = ablation_tsv(rows);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "variant\tG\tfine_top1\tcoarse_top1\tparam_count\twall_time");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 3);
  EXPECT_NE(tsv.find("\nengraf\t2\t"), std::string::npos);
  const auto json = ablation_json(rows);
  ASSERT_EQ(json.size(), 2u);
  EXPECT_EQ(json[1]["label"], "engraf(G=2)");
  EXPECT_EQ(json[0]["param_count"].get<std::size_t>(), rows[0].param_count);
  EXPECT_DOUBLE_EQ(json[1]["fine_top1"].get<double>(), rows[1].metrics.fine_top1);

  EXPECT_EQ(error_kind([&] { run_ablation(E({{Variant::resnet, 0}, {Variant::resnet, 0}}), base, train, test, tax,
                                          cfg); }),
            ErrorKind::DuplicateEntry);
}
