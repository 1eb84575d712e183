#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "engraf/cam.hpp"
#include "engraf/checkpoint.hpp"
#include "engraf/cli.hpp"
#include "engraf/serialize.hpp"
#include "test_util.hpp"

using namespace engraf;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "engraf");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

void write_micro_config(const fs::path& path) {
  std::ofstream(path) << R"({"model": {"variant": "engraf", "graft_size": 2, "stage_blocks": [1, 1, 1],
    "stage_widths": [4, 8, 8]}, "train": {"learning_rate": 0.01, "batch_size": 8, "eval_batch_size": 16}})";
}

}  // namespace

TEST(Cli, ValidateTaxonomy) {
  const auto r = run({"validate-taxonomy", "--map", test_util::cifar_taxonomy_path().string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "fine=100 coarse=20\n");

  const test_util::TempDir dir;
  std::ofstream(dir.path() / "bad.tsv") << "0\t0\n0\t1\n";
  const auto bad = run({"validate-taxonomy", "--map", (dir.path() / "bad.tsv").string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("error:"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  const auto r = run({"train", "--out", "/tmp/x"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--data"), std::string::npos);
  EXPECT_EQ(run({"cam", "--checkpoint", "c", "--image", "i", "--branch", "fine", "--class", "0", "--out", "o.png",
                 "--alpha", "1.5"})
                .code,
            2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, MissingInputsAreRuntimeFailures) {
  const test_util::TempDir dir;
  const auto r = run({"eval", "--checkpoint", (dir.path() / "none").string(), "--data", dir.path().string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_EQ(run({"ablate", "--grid", "resnet,resnet", "--data", dir.path().string(), "--out", dir.path().string()})
                .code,
            1);
}

TEST(Cli, SynthTrainEvalCamAblate) {
  const test_util::TempDir dir;
  const auto data = dir.path() / "data";
  const auto synth = run({"synth-data", "--out", data.string(), "--fine", "4", "--coarse", "2", "--train-per-fine",
                          "8", "--test-per-fine", "4", "--size", "16", "--seed", "5"});
  ASSERT_EQ(synth.code, 0) << synth.err;
  EXPECT_EQ(synth.out.rfind("wrote 32 train and 16 test records", 0), 0u) << synth.out;
  for (const char* f : {"train.bin", "test.bin", "taxonomy.tsv", "run.json"}) EXPECT_TRUE(fs::exists(data / f)) << f;
  EXPECT_EQ(read_json(data / "run.json")["seed"], 5);

  const auto cfg = dir.path() / "run_config.json";
  write_micro_config(cfg);
  const auto out = dir.path() / "run";
  const auto train = run({"train", "--config", cfg.string(), "--data", data.string(), "--out", out.string(),
                          "--epochs", "2", "--seed", "9", "--deterministic"});
  ASSERT_EQ(train.code, 0) << train.err;
  EXPECT_NE(train.out.find("epoch 1 "), std::string::npos);
  EXPECT_NE(train.out.find("coarse-fine "), std::string::npos);
  for (const char* f : {"run.json", "history.json", "metrics.json", "checkpoint/manifest.json",
                        "checkpoint/weights.bin"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const Json run_json = read_json(out / "run.json");
  EXPECT_EQ(run_json["command"], "train");
  EXPECT_EQ(run_json["seed"], 9);
  EXPECT_EQ(run_json["config"]["model"]["num_fine"], 4);
  EXPECT_EQ(run_json["config"]["train"]["epochs"], 2);
  EXPECT_EQ(read_json(out / "history.json").size(), 2u);

  const auto ckpt = load_checkpoint(out / "checkpoint");
  EXPECT_EQ(ckpt.meta.model.graft_size, 2);
  EXPECT_EQ(ckpt.meta.model.input_size, 16);

  const auto eval = run({"eval", "--checkpoint", (out / "checkpoint").string(), "--data", data.string(), "--out",
                         (dir.path() / "eval").string()});
  ASSERT_EQ(eval.code, 0) << eval.err;
  // Evaluating the saved checkpoint reproduces the metrics written at the end of training.
  EXPECT_EQ(read_json(dir.path() / "eval" / "metrics.json"), read_json(out / "metrics.json"));
  EXPECT_TRUE(fs::exists(dir.path() / "eval" / "run.json"));

  const auto png = dir.path() / "cam" / "fine.png";
  const auto cam = run({"cam", "--checkpoint", (out / "checkpoint").string(), "--image", (data / "test.bin").string(),
                        "--index", "3", "--branch", "graft-sub", "--class", "1", "--out", png.string()});
  ASSERT_EQ(cam.code, 0) << cam.err;
  std::size_t w = 0, h = 0;
  read_png(png, w, h);
  EXPECT_EQ(w, 16u);
  EXPECT_EQ(h, 16u);
  const Json cam_run = read_json(dir.path() / "cam" / "run.json");
  EXPECT_EQ(cam_run["config"]["head"], "fc4");
  EXPECT_EQ(run({"cam", "--checkpoint", (out / "checkpoint").string(), "--image", (data / "test.bin").string(),
                 "--index", "99", "--branch", "fine", "--class", "1", "--out", png.string()})
                .code,
            1);
  EXPECT_EQ(run({"cam", "--checkpoint", (out / "checkpoint").string(), "--image", (data / "test.bin").string(),
                 "--branch", "fine", "--class", "7", "--out", png.string()})
                .code,
            1);

  const auto abl = dir.path() / "ablate";
  const auto ablate = run({"ablate", "--grid", "resnet,engraf:2", "--config", cfg.string(), "--data", data.string(),
                           "--out", abl.string(), "--epochs", "1", "--deterministic"});
  ASSERT_EQ(ablate.code, 0) << ablate.err;
  EXPECT_TRUE(fs::exists(abl / "ablation.tsv"));
  EXPECT_TRUE(fs::exists(abl / "run.json"));
  EXPECT_EQ(read_json(abl / "ablation.json").size(), 2u);
}
