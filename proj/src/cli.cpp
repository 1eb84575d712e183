#include "engraf/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "engraf/ablation.hpp"
#include "engraf/cam.hpp"
#include "engraf/checkpoint.hpp"
#include "engraf/error.hpp"
#include "engraf/serialize.hpp"

namespace engraf::cli {

namespace fs = std::filesystem;

namespace {

struct Invocation {
  std::vector<std::string> argv;
  std::ostream* out;
  std::ostream* err;
};

Json run_record(const Invocation& inv, const std::string& command) {
  Json argv = Json::array();
  for (const auto& a : inv.argv) argv.push_back(a);
  return Json{{"command", command}, {"argv", argv}};
}

// Flags shared by train and ablate that override the run config.
struct TrainFlags {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::string> variant;
  std::optional<int> graft;
  std::optional<int> depth;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<std::string> backend;
  bool deterministic = false;
  bool no_augment = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_variant) {
  cmd->add_option("--config", f.config, "run config JSON ({\"model\": {...}, \"train\": {...}})")
      ->check(CLI::ExistingFile);
  cmd->add_option("--data", f.data, "dataset directory (CIFAR-100 binary or synth-data output)")->required();
  cmd->add_option("--out", f.out, "output directory")->required();
  if (with_variant) {
    cmd->add_option("--variant", f.variant, "resnet | two_branch | graft | engraf");
    cmd->add_option("--graft", f.graft, "graft size G");
  }
  cmd->add_option("--depth", f.depth, "backbone depth (18, 50, 101, 152)");
  cmd->add_option("--seed", f.seed, "seed for initialization, shuffling and augmentation");
  cmd->add_option("--epochs", f.epochs, "number of epochs");
  cmd->add_option("--batch-size", f.batch_size, "SGD batch size");
  cmd->add_option("--lr", f.lr, "initial learning rate");
  cmd->add_option("--backend", f.backend, "kernel backend: parallel | reference");
  cmd->add_flag("--deterministic", f.deterministic, "pin BLAS to one thread for bitwise reproducibility");
  cmd->add_flag("--no-augment", f.no_augment, "disable crop/flip augmentation");
}

// Resolves the run config: file, then data-derived shape, then flags.
RunConfig resolve(const TrainFlags& f, const SplitDataset& data) {
  RunConfig cfg;
  Json model_json = Json::object();
  if (!f.config.empty()) {
    const Json j = read_json(f.config);
    cfg = load_run_config(f.config);
    if (j.contains("model")) model_json = j.at("model");
  }
  if (!model_json.contains("num_fine")) cfg.model.num_fine = data.taxonomy.num_fine();
  if (!model_json.contains("num_coarse")) cfg.model.num_coarse = data.taxonomy.num_coarse();
  if (!model_json.contains("input_size")) cfg.model.input_size = data.train.image_size;
  if (f.variant) cfg.model.variant = parse_variant(*f.variant);
  if (f.graft) cfg.model.graft_size = *f.graft;
  if (f.depth) cfg.model.backbone_depth = *f.depth;
  if (f.seed) cfg.train.seed = *f.seed;
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (f.batch_size) cfg.train.batch_size = *f.batch_size;
  if (f.lr) cfg.train.learning_rate = *f.lr;
  if (f.backend) {
    Json b{{"backend", *f.backend}};
    cfg.train = train_config_from_json(b, cfg.train);
  }
  if (f.deterministic) cfg.train.deterministic = true;
  if (f.no_augment) cfg.train.augment = false;
  validate_config(cfg.model);
  validate_train_config(cfg.train);
  return cfg;
}

int cmd_validate_taxonomy(const Invocation& inv, const std::string& map) {
  const Taxonomy tax = load_taxonomy(map);
  const auto violations = validate_taxonomy(tax);
  if (!violations.empty()) {
    for (const auto& v : violations) *inv.err << "violation: " << v.message << '\n';
    return kExitFailure;
  }
  *inv.out << "fine=" << tax.num_fine() << " coarse=" << tax.num_coarse() << '\n';
  return kExitOk;
}

struct SynthFlags {
  std::string out;
  int fine = 20;
  int coarse = 4;
  int train_per_fine = 200;
  int test_per_fine = 50;
  int size = 32;
  std::uint64_t seed = 0;
};

int cmd_synth(const Invocation& inv, const SynthFlags& f) {
  SplitDataset data;
  data.taxonomy = generate_synthetic_taxonomy(f.fine, f.coarse);
  data.train = generate_synthetic_dataset(data.taxonomy, f.train_per_fine, f.size, mix_seed(f.seed, 1));
  data.test = generate_synthetic_dataset(data.taxonomy, f.test_per_fine, f.size, mix_seed(f.seed, 2));
  save_dataset_dir(data, f.out);
  Json run = run_record(inv, "synth-data");
  run["seed"] = f.seed;
  run["config"] = Json{{"num_fine", f.fine},         {"num_coarse", f.coarse}, {"train_per_fine", f.train_per_fine},
                       {"test_per_fine", f.test_per_fine}, {"size", f.size},         {"seed", f.seed}};
  write_json(run, fs::path(f.out) / "run.json");
  *inv.out << "wrote " << data.train.size() << " train and " << data.test.size() << " test records to " << f.out
           << '\n';
  return kExitOk;
}

int cmd_train(const Invocation& inv, const TrainFlags& f) {
  const SplitDataset data = load_dataset_dir(f.data);
  const RunConfig cfg = resolve(f, data);
  const fs::path out(f.out);
  fs::create_directories(out);
  Json run = run_record(inv, "train");
  run["seed"] = cfg.train.seed;
  run["data"] = f.data;
  run["config"] = to_json(cfg);
  write_json(run, out / "run.json");

  Model<float> model(cfg.model, init_seed_for(cfg.train.seed));
  *inv.out << "training " << to_string(cfg.model.variant) << "-" << cfg.model.backbone_depth << " ("
           << param_count(model) << " parameters) on " << data.train.size() << " records\n";
  FitOptions opts;
  opts.checkpoint_dir = out / "checkpoint";
  opts.on_epoch = [&](const EpochRecord& r) {
    *inv.out << "epoch " << r.epoch << " lr " << r.learning_rate << " loss " << r.train_loss.total << " test "
             << format_coarse_fine(r.eval_metrics) << " (" << r.seconds << " s)" << std::endl;
  };
  const auto history = fit(model, data.train, data.test, data.taxonomy, cfg.train, opts);
  const EvalMetrics& final_metrics = history.back().eval_metrics;
  save_checkpoint(model, CheckpointMeta{cfg.model, cfg.train, cfg.train.epochs, final_metrics}, out / "checkpoint");
  write_json(to_json(history), out / "history.json");
  write_json(to_json(final_metrics), out / "metrics.json");
  *inv.out << "coarse-fine " << format_coarse_fine(final_metrics) << '\n';
  return kExitOk;
}

struct EvalFlags {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string out;
  int batch_size = 100;
};

int cmd_eval(const Invocation& inv, const EvalFlags& f) {
  const LoadedCheckpoint ckpt = load_checkpoint(f.checkpoint);
  const SplitDataset data = load_dataset_dir(f.data);
  const Dataset& split = f.split == "train" ? data.train : data.test;
  check_compatible(ckpt.meta.model, data.taxonomy, split);
  const EvalMetrics m = evaluate(ckpt.model, split, data.taxonomy, static_cast<std::size_t>(f.batch_size));
  *inv.out << "coarse-fine " << format_coarse_fine(m) << '\n' << to_json(m).dump(2) << '\n';
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    write_json(to_json(m), fs::path(f.out) / "metrics.json");
    Json run = run_record(inv, "eval");
    run["seed"] = ckpt.meta.train.seed;
    run["config"] = Json{{"checkpoint", f.checkpoint}, {"data", f.data}, {"split", f.split},
                         {"batch_size", f.batch_size}};
    write_json(run, fs::path(f.out) / "run.json");
  }
  return kExitOk;
}

int cmd_ablate(const Invocation& inv, const TrainFlags& f, const std::string& grid_spec) {
  const auto grid = parse_ablation_grid(grid_spec);
  const SplitDataset data = load_dataset_dir(f.data);
  const RunConfig cfg = resolve(f, data);
  const fs::path out(f.out);
  fs::create_directories(out);
  Json run = run_record(inv, "ablate");
  run["seed"] = cfg.train.seed;
  run["data"] = f.data;
  run["grid"] = grid_spec;
  run["config"] = to_json(cfg);
  write_json(run, out / "run.json");

  const auto rows = run_ablation(grid, cfg.model, data.train, data.test, data.taxonomy, cfg.train,
                                 [&](const AblationRow& r) {
                                   *inv.out << entry_label(r.entry) << ": " << format_coarse_fine(r.metrics) << " ("
                                            << r.wall_time << " s)" << std::endl;
                                 });
  const std::string tsv = ablation_tsv(rows);
  std::ofstream(out / "ablation.tsv") << tsv;
  write_json(ablation_json(rows), out / "ablation.json");
  *inv.out << tsv;
  return kExitOk;
}

struct CamFlags {
  std::string checkpoint;
  std::string image;
  std::size_t index = 0;
  std::string branch;
  std::optional<std::string> head;
  int cls = 0;
  std::string out;
  double alpha = 0.4;
};

int cmd_cam(const Invocation& inv, const CamFlags& f) {
  const LoadedCheckpoint ckpt = load_checkpoint(f.checkpoint);
  const auto& mc = ckpt.meta.model;
  const auto records = read_records(f.image, mc.input_size, mc.num_fine, mc.num_coarse);
  if (f.index >= records.size()) {
    throw Error(ErrorKind::InvalidConfig, "--index " + std::to_string(f.index) + " but the file has " +
                                              std::to_string(records.size()) + " records");
  }
  const ImageRecord& rec = records[f.index];
  const Branch branch = parse_branch(f.branch);
  const Head head = f.head ? parse_head(*f.head) : default_head(branch, mc.variant);
  std::mt19937_64 unused;
  Tensor<float> input = augment(rec, mc.input_size, unused, AugmentPolicy::eval());
  input.reshape({1, 3, static_cast<std::size_t>(mc.input_size), static_cast<std::size_t>(mc.input_size)});
  const Heatmap map = grad_cam(ckpt.model, input, branch, head, f.cls);
  const fs::path out(f.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  render_overlay(map, rec, mc.input_size, f.alpha, out);

  Json run = run_record(inv, "cam");
  run["seed"] = ckpt.meta.train.seed;
  run["config"] = Json{{"checkpoint", f.checkpoint}, {"image", f.image}, {"index", f.index},
                       {"branch", std::string(to_string(branch))}, {"head", std::string(to_string(head))},
                       {"class", f.cls}, {"alpha", f.alpha}, {"out", f.out}};
  write_json(run, (out.has_parent_path() ? out.parent_path() : fs::path(".")) / "run.json");
  *inv.out << "wrote " << f.out << " (" << map.values.dim(0) << "x" << map.values.dim(1) << " map, branch "
           << to_string(branch) << ", head " << to_string(head) << ", class " << f.cls << ")\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Invocation inv{args, &out, &err};
  CLI::App app{"EnGraf-Net: hierarchical multi-branch classification", "engraf"};
  app.require_subcommand(1);
  app.fallthrough(false);

  std::string map;
  auto* validate = app.add_subcommand("validate-taxonomy", "check a fine->coarse taxonomy TSV");
  validate->add_option("--map", map, "taxonomy TSV")->required();

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "write a synthetic hierarchical dataset");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--fine", synth.fine, "fine classes")->capture_default_str();
  synth_cmd->add_option("--coarse", synth.coarse, "coarse classes")->capture_default_str();
  synth_cmd->add_option("--train-per-fine", synth.train_per_fine, "training images per fine class")
      ->capture_default_str();
  synth_cmd->add_option("--test-per-fine", synth.test_per_fine, "test images per fine class")->capture_default_str();
  synth_cmd->add_option("--size", synth.size, "image side length")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "generator seed")->capture_default_str();

  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  add_train_flags(train_cmd, train_flags, true);

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--data", eval_flags.data, "dataset directory")->required();
  eval_cmd->add_option("--split", eval_flags.split, "train | test")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_flags.out, "directory for metrics.json and run.json");
  eval_cmd->add_option("--batch-size", eval_flags.batch_size, "evaluation batch size")->capture_default_str();

  TrainFlags ablate_flags;
  std::string grid;
  auto* ablate_cmd = app.add_subcommand("ablate", "train every architecture in a grid");
  ablate_cmd->add_option("--grid", grid, "e.g. 'variant=resnet,two_branch,graft,engraf;G=2..5'")->required();
  add_train_flags(ablate_cmd, ablate_flags, false);

  CamFlags cam;
  auto* cam_cmd = app.add_subcommand("cam", "render a Grad-CAM overlay for one branch");
  cam_cmd->add_option("--checkpoint", cam.checkpoint, "checkpoint directory")->required();
  cam_cmd->add_option("--image", cam.image, "record file in CIFAR layout")->required();
  cam_cmd->add_option("--index", cam.index, "record index in the file")->capture_default_str();
  cam_cmd->add_option("--branch", cam.branch, "fine | coarse | graft-main | graft-sub")->required();
  cam_cmd->add_option("--head", cam.head, "head to explain (default: the branch's own head)");
  cam_cmd->add_option("--class", cam.cls, "target class")->required();
  cam_cmd->add_option("--out", cam.out, "output PNG")->required();
  cam_cmd->add_option("--alpha", cam.alpha, "overlay opacity")->check(CLI::Range(0.0, 1.0))->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (validate->parsed()) return cmd_validate_taxonomy(inv, map);
    if (synth_cmd->parsed()) return cmd_synth(inv, synth);
    if (train_cmd->parsed()) return cmd_train(inv, train_flags);
    if (eval_cmd->parsed()) return cmd_eval(inv, eval_flags);
    if (ablate_cmd->parsed()) return cmd_ablate(inv, ablate_flags, grid);
    if (cam_cmd->parsed()) return cmd_cam(inv, cam);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  err << app.help();
  return kExitUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv, argv + argc);
  if (args.empty()) args.emplace_back("engraf");
  return run(args, out, err);
}

}  // namespace engraf::cli
