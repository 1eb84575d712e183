#include "engraf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "engraf/checkpoint.hpp"
#include "engraf/error.hpp"

namespace engraf {

void validate_train_config(const TrainConfig& cfg) {
  auto invalid = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, m); };
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) invalid("learning_rate must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) invalid("momentum must be in [0, 1)");
  if (!(cfg.weight_decay >= 0.0)) invalid("weight_decay must be >= 0");
  if (cfg.epochs < 1) invalid("epochs must be positive");
  if (cfg.batch_size < 1) invalid("batch_size must be positive");
  if (cfg.eval_batch_size < 1) invalid("eval_batch_size must be positive");
  if (!(cfg.decay_factor > 0.0)) invalid("decay_factor must be positive");
  for (double m : cfg.decay_milestones) {
    if (!(m > 0.0 && m <= 1.0)) invalid("decay milestones must be in (0, 1]");
  }
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.learning_rate;
  for (double m : cfg.decay_milestones) {
    if (epoch >= static_cast<int>(std::ceil(m * cfg.epochs))) lr *= cfg.decay_factor;
  }
  return lr;
}

std::uint64_t init_seed_for(std::uint64_t seed) { return mix_seed(seed, 0x696e6974); }
std::uint64_t shuffle_seed_for(std::uint64_t seed) { return mix_seed(seed, 0x73687566); }
std::uint64_t augment_seed_for(std::uint64_t seed) { return mix_seed(seed, 0x61756700); }

// SGD ----------------------------------------------------------------------------

template <typename T>
void Sgd<T>::step(Model<T>& model, const nn::Trace<T>& trace, double learning_rate) {
  auto params = model.parameters();
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto* p : params) velocity_.emplace_back(p->value.shape());
  }
  const T lr = static_cast<T>(learning_rate);
  const T mu = static_cast<T>(momentum_);
  const T wd = static_cast<T>(weight_decay_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i]->value;
    auto& v = velocity_[i];
    const Tensor<T>* g = i < trace.grads.size() && !trace.grads[i].empty() ? &trace.grads[i] : nullptr;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      T d = g != nullptr ? (*g)[k] : T(0);
      if (weight_decay_ != 0.0) d += wd * theta[k];
      v[k] = momentum_ != 0.0 ? mu * v[k] + d : d;
      if (learning_rate != 0.0) theta[k] -= lr * v[k];
    }
  }
}

template <typename T>
GradientResult<T> compute_gradients(const Model<T>& model, const Tensor<T>& inputs, std::span<const ClassId> fine,
                                    std::span<const ClassId> coarse, kernels::Backend backend) {
  GradientResult<T> out;
  nn::Context<T> ctx{nn::Mode::train, backend, &out.trace};
  ForwardCache<T> cache;
  out.logits = model.forward(inputs, ctx, &cache);
  HeadGrads<T> dz;
  out.loss = total_loss(out.logits, model.config().variant, fine, coarse, &dz);
  if (!std::isfinite(out.loss.total)) return out;
  model.backward(cache, dz, ctx);
  return out;
}

template <typename T>
LossBreakdown train_step(Model<T>& model, const Tensor<T>& inputs, std::span<const ClassId> fine,
                         std::span<const ClassId> coarse, Sgd<T>& sgd, double learning_rate,
                         kernels::Backend backend) {
  GradientResult<T> result;
  try {
    result = compute_gradients(model, inputs, fine, coarse, backend);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NonFiniteInput) throw;
    throw Error(ErrorKind::NonFiniteLoss, std::string("training loss became non-finite (") + e.what() + ")");
  }
  if (!std::isfinite(result.loss.total)) {
    throw Error(ErrorKind::NonFiniteLoss, "training loss became non-finite");
  }
  // ReLU maps NaN to zero, so a finite loss can still carry NaN gradients.
  for (const auto& g : result.trace.grads) {
    for (const T v : g.values()) {
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteLoss, "training gradient became non-finite");
    }
  }
  model.update_running_stats(result.trace);
  sgd.step(model, result.trace, learning_rate);
  return result.loss;
}

// Evaluation -------------------------------------------------------------------

namespace {

ClassId argmax_row(const Tensor<float>& z, std::size_t row) {
  const std::size_t n = z.dim(1);
  const float* p = z.data() + row * n;
  return static_cast<ClassId>(std::max_element(p, p + n) - p);
}

}  // namespace

std::string format_coarse_fine(const EvalMetrics& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f-%.2f", 100.0 * m.coarse_top1, 100.0 * m.fine_top1);
  return buf;
}

EvalMetrics evaluate(const Predictor& predict, const Dataset& data, const Taxonomy& tax, std::size_t batch_size) {
  if (data.empty()) throw Error(ErrorKind::EmptyDataset, "cannot evaluate an empty dataset");
  BatchIterator it(data, batch_size, std::nullopt, 0);
  std::size_t fine_hits = 0, coarse_hits = 0, consistent = 0, total = 0;
  std::map<Head, std::size_t> head_hits;
  for (std::size_t b = 0; b < it.size(); ++b) {
    const Batch batch = it.batch(b);
    const HeadLogits<float> z = predict(batch);
    const auto& z0 = z.at(Head::fc0);
    const std::optional<Head> coarse_head =
        z.has(Head::fc2) ? std::optional(Head::fc2) : z.has(Head::fc4) ? std::optional(Head::fc4) : std::nullopt;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const ClassId fine_pred = argmax_row(z0, i);
      const ClassId parent = derive_coarse(tax, fine_pred);
      const ClassId coarse_pred = coarse_head ? argmax_row(z.at(*coarse_head), i) : parent;
      fine_hits += fine_pred == batch.fine_labels[i];
      coarse_hits += coarse_pred == batch.coarse_labels[i];
      consistent += coarse_pred == parent;
      for (auto h : z.present()) {
        const ClassId truth = head_is_fine(h) ? batch.fine_labels[i] : batch.coarse_labels[i];
        head_hits[h] += argmax_row(z.at(h), i) == truth;
      }
    }
    total += batch.size();
  }
  EvalMetrics m;
  const auto n = static_cast<double>(total);
  m.count = total;
  m.fine_top1 = static_cast<double>(fine_hits) / n;
  m.coarse_top1 = static_cast<double>(coarse_hits) / n;
  m.consistency_rate = static_cast<double>(consistent) / n;
  for (const auto& [h, hits] : head_hits) m.per_head_top1[h] = static_cast<double>(hits) / n;
  return m;
}

EvalMetrics evaluate(const Model<float>& model, const Dataset& data, const Taxonomy& tax, std::size_t batch_size,
                     kernels::Backend backend) {
  const nn::Context<float> ctx{nn::Mode::eval, backend, nullptr};
  return evaluate([&](const Batch& b) { return model.forward(b.inputs, ctx); }, data, tax, batch_size);
}

// Fit ------------------------------------------------------------------------------

void check_compatible(const EngrafConfig& model, const Taxonomy& tax, const Dataset& data) {
  if (model.num_fine != tax.num_fine() || model.num_coarse != tax.num_coarse()) {
    throw Error(ErrorKind::ConfigMismatch,
                "model heads are " + std::to_string(model.num_fine) + "/" + std::to_string(model.num_coarse) +
                    " classes but the taxonomy has " + std::to_string(tax.num_fine()) + "/" +
                    std::to_string(tax.num_coarse()));
  }
  if (model.input_size != data.image_size) {
    throw Error(ErrorKind::ConfigMismatch, "model input size " + std::to_string(model.input_size) +
                                               " differs from image size " + std::to_string(data.image_size));
  }
}

std::vector<EpochRecord> fit(Model<float>& model, const Dataset& train, const Dataset& eval, const Taxonomy& tax,
                             const TrainConfig& cfg, const FitOptions& options) {
  validate_train_config(cfg);
  check_compatible(model.config(), tax, train);
  if (!eval.empty()) check_compatible(model.config(), tax, eval);
  if (train.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  kernels::set_deterministic(cfg.deterministic);

  Sgd<float> sgd(cfg);
  const AugmentPolicy policy = cfg.augment ? AugmentPolicy::train() : AugmentPolicy::eval();
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  const auto eval_batch = static_cast<std::size_t>(cfg.eval_batch_size);
  std::vector<EpochRecord> history;
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const Model<float> last_good = model;
    const Sgd<float> last_sgd = sgd;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = learning_rate_at(cfg, epoch);

    BatchIterator it(train, batch_size, shuffle_seed_for(cfg.seed), epoch, policy, augment_seed_for(cfg.seed));
    std::map<Head, double> sums;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < it.size(); ++b) {
      const Batch batch = it.batch(b);
      LossBreakdown loss;
      try {
        loss = train_step(model, batch.inputs, batch.fine_labels, batch.coarse_labels, sgd, rec.learning_rate,
                          cfg.backend);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFiniteLoss) throw;
        model = last_good;
        sgd = last_sgd;
        if (options.checkpoint_dir) {
          CheckpointMeta meta{model.config(), cfg, epoch, history.empty() ? std::nullopt
                                                                          : std::optional(history.back().eval_metrics)};
          save_checkpoint(model, meta, *options.checkpoint_dir);
        }
        throw Error(ErrorKind::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                                  std::to_string(step) + "; model restored to the epoch start");
      }
      for (const auto& [h, l] : loss.per_head) sums[h] += l * static_cast<double>(batch.size());
      seen += batch.size();
      ++step;
      if (options.on_step) options.on_step(step, loss);
    }
    rec.steps = it.size();
    for (const auto& [h, s] : sums) {
      rec.train_loss.per_head[h] = s / static_cast<double>(seen);
      rec.train_loss.total += rec.train_loss.per_head[h];
    }
    if (options.measure_train_accuracy) rec.train_metrics = evaluate(model, train, tax, eval_batch, cfg.backend);
    if (!eval.empty()) rec.eval_metrics = evaluate(model, eval, tax, eval_batch, cfg.backend);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.push_back(rec);
    if (options.on_epoch) options.on_epoch(history.back());
  }
  return history;
}

template class Sgd<float>;
template class Sgd<double>;
template GradientResult<float> compute_gradients(const Model<float>&, const Tensor<float>&, std::span<const ClassId>,
                                                 std::span<const ClassId>, kernels::Backend);
template GradientResult<double> compute_gradients(const Model<double>&, const Tensor<double>&,
                                                  std::span<const ClassId>, std::span<const ClassId>,
                                                  kernels::Backend);
template LossBreakdown train_step(Model<float>&, const Tensor<float>&, std::span<const ClassId>,
                                  std::span<const ClassId>, Sgd<float>&, double, kernels::Backend);
template LossBreakdown train_step(Model<double>&, const Tensor<double>&, std::span<const ClassId>,
                                  std::span<const ClassId>, Sgd<double>&, double, kernels::Backend);

}  // namespace engraf
