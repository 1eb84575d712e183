#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "engraf/data.hpp"
#include "engraf/loss.hpp"
#include "engraf/model.hpp"

namespace engraf {

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 150;
  int batch_size = 20;
  // Step decay: the rate is multiplied by `decay_factor` once the epoch index
  // reaches ceil(m * epochs) for each milestone m.
  std::vector<double> decay_milestones{0.5, 0.75};
  double decay_factor = 0.1;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool augment = true;
  int eval_batch_size = 100;
  kernels::Backend backend = kernels::Backend::parallel;

  /// Fine-tuning settings: SGD, lr 0.001, batch 20, 150 epochs.
  static TrainConfig fine_tune() { return TrainConfig{}; }
  /// From-scratch CIFAR preset: lr 0.1, batch 128.
  static TrainConfig cifar_scratch() {
    TrainConfig c;
    c.learning_rate = 0.1;
    c.batch_size = 128;
    return c;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Throws InvalidConfig when a field is out of range.
void validate_train_config(const TrainConfig& cfg);

double learning_rate_at(const TrainConfig& cfg, int epoch);

/// Seed streams derived from TrainConfig::seed.
std::uint64_t init_seed_for(std::uint64_t seed);
std::uint64_t shuffle_seed_for(std::uint64_t seed);
std::uint64_t augment_seed_for(std::uint64_t seed);

/// SGD with momentum and L2 weight decay folded into the gradient:
///   v = momentum * v + (g + weight_decay * theta);  theta -= lr * v
/// Parameters without a gradient in the trace are treated as having g = 0.
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  explicit Sgd(const TrainConfig& cfg) : Sgd(cfg.momentum, cfg.weight_decay) {}

  void step(Model<T>& model, const nn::Trace<T>& trace, double learning_rate);
  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

template <typename T>
struct GradientResult {
  LossBreakdown loss;
  nn::Trace<T> trace;
  HeadLogits<T> logits;
};

/// Train-mode forward, total loss and backward without touching the model.
template <typename T>
GradientResult<T> compute_gradients(const Model<T>& model, const Tensor<T>& inputs, std::span<const ClassId> fine,
                                    std::span<const ClassId> coarse,
                                    kernels::Backend backend = kernels::Backend::parallel);

/// One SGD step: gradients, running-statistics update, parameter update.
/// Throws NonFiniteLoss (before modifying the model) when the loss is not finite.
template <typename T>
LossBreakdown train_step(Model<T>& model, const Tensor<T>& inputs, std::span<const ClassId> fine,
                         std::span<const ClassId> coarse, Sgd<T>& sgd, double learning_rate,
                         kernels::Backend backend = kernels::Backend::parallel);

struct EvalMetrics {
  double fine_top1 = 0.0;
  double coarse_top1 = 0.0;
  double consistency_rate = 0.0;
  std::map<Head, double> per_head_top1;
  std::size_t count = 0;

  friend bool operator==(const EvalMetrics&, const EvalMetrics&) = default;
};

/// Table-style "coarse-fine" accuracy pair in percent, e.g. "92.50-71.25".
std::string format_coarse_fine(const EvalMetrics& m);

/// Produces logits for one batch; lets evaluation run against stand-in models.
using Predictor = std::function<HeadLogits<float>(const Batch&)>;

/// Fine prediction from fc0; coarse prediction from fc2, else fc4, else the
/// parent of the fine prediction. Argmax ties go to the lowest index.
EvalMetrics evaluate(const Predictor& predict, const Dataset& data, const Taxonomy& tax, std::size_t batch_size = 100);
EvalMetrics evaluate(const Model<float>& model, const Dataset& data, const Taxonomy& tax,
                     std::size_t batch_size = 100, kernels::Backend backend = kernels::Backend::parallel);

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  std::size_t steps = 0;
  LossBreakdown train_loss;  // per-head means over the epoch's records
  EvalMetrics train_metrics;  // eval-mode accuracy on the training set
  EvalMetrics eval_metrics;
  double seconds = 0.0;
};

struct FitOptions {
  std::optional<std::filesystem::path> checkpoint_dir;  // receives the last good state on NonFiniteLoss
  bool measure_train_accuracy = true;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(std::size_t step, const LossBreakdown&)> on_step;
};

/// Runs cfg.epochs epochs of SGD. Batch order and augmentation depend only on
/// cfg.seed and the epoch, so deterministic runs reproduce bit for bit.
/// Errors: ConfigMismatch when the model does not fit the data, NonFiniteLoss.
std::vector<EpochRecord> fit(Model<float>& model, const Dataset& train, const Dataset& eval, const Taxonomy& tax,
                             const TrainConfig& cfg, const FitOptions& options = {});

/// Throws ConfigMismatch when the model's class counts or input size do not
/// match the taxonomy and data.
void check_compatible(const EngrafConfig& model, const Taxonomy& tax, const Dataset& data);

}  // namespace engraf
