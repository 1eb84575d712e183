#pragma once

// Reverse-mode building blocks. Layers own parameters and running statistics
// and are const during forward and backward: everything a backward pass needs
// lives in a per-call cache, and parameter gradients and batch statistics are
// written to a Trace. This keeps eval-mode forward read-only on the model.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "engraf/kernels.hpp"
#include "engraf/tensor.hpp"

namespace engraf::nn {

enum class Mode { train, eval };

enum class InitKind { he_normal, fan_in_uniform, ones, zeros };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  InitKind init = InitKind::zeros;
  std::size_t fan_in = 1;
  std::size_t index = 0;  // slot in Trace::grads, assigned by the owning model
};

/// Named non-trainable state (batch-norm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* value;
};

template <typename T>
struct BatchStats {
  std::size_t layer = 0;  // batch-norm index assigned by the owning model
  std::vector<T> mean;
  std::vector<T> var;   // biased
  std::size_t count = 0;  // elements per channel
};

/// Side outputs of one forward/backward pass.
template <typename T>
struct Trace {
  std::vector<BatchStats<T>> batch_stats;  // appended by train-mode forward
  std::vector<Tensor<T>> grads;            // indexed by Parameter::index; empty slots untouched
  bool accumulate_param_grads = true;

  T* grad_for(const Parameter<T>& p);  // null when parameter gradients are disabled
};

template <typename T>
struct Context {
  Mode mode = Mode::eval;
  kernels::Backend backend = kernels::Backend::parallel;
  Trace<T>* trace = nullptr;  // required in train mode and for backward
};

template <typename T>
struct ConvCache {
  Tensor<T> input;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad);

  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx, ConvCache<T>* cache) const;
  Tensor<T> backward(const ConvCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx, bool need_input_grad) const;

  void collect(std::vector<Parameter<T>*>& params) { params.push_back(&weight_); }
  void collect(std::vector<const Parameter<T>*>& params) const { params.push_back(&weight_); }
  std::size_t out_channels() const { return out_; }
  kernels::ConvGeometry geometry(const Shape& input) const;

 private:
  std::size_t in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Parameter<T> weight_;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> input;
  std::vector<T> mean;
  std::vector<T> inv_std;
  Mode mode = Mode::eval;
};

template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(std::string name, std::size_t channels);

  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx, BatchNormCache<T>* cache) const;
  Tensor<T> backward(const BatchNormCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx) const;

  /// running = (1 - m) * running + m * batch, with the unbiased batch variance.
  void update_running(const BatchStats<T>& stats);

  void collect(std::vector<Parameter<T>*>& params) {
    params.push_back(&gamma_);
    params.push_back(&beta_);
  }
  void collect(std::vector<const Parameter<T>*>& params) const {
    params.push_back(&gamma_);
    params.push_back(&beta_);
  }
  void collect_buffers(std::vector<Buffer<T>>& out, std::vector<BatchNorm2d*>& layers);

  const Tensor<T>& running_mean() const { return running_mean_; }
  const Tensor<T>& running_var() const { return running_var_; }
  std::size_t index() const { return index_; }

 private:
  std::string name_;
  std::size_t channels_ = 0;
  std::size_t index_ = 0;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
};

template <typename T>
struct ReluCache {
  Tensor<T> output;
};

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x, const Context<T>& ctx, ReluCache<T>* cache);
template <typename T>
Tensor<T> relu_backward(const ReluCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx);

template <typename T>
struct LinearCache {
  Tensor<T> input;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out);

  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx, LinearCache<T>* cache) const;
  Tensor<T> backward(const LinearCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx) const;

  void collect(std::vector<Parameter<T>*>& params) {
    params.push_back(&weight_);
    params.push_back(&bias_);
  }
  void collect(std::vector<const Parameter<T>*>& params) const {
    params.push_back(&weight_);
    params.push_back(&bias_);
  }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  const Parameter<T>& weight() const { return weight_; }
  const Parameter<T>& bias() const { return bias_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Parameter<T> weight_;
  Parameter<T> bias_;
};

struct PoolCache {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;
};

/// N x C x H x W -> N x C
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x, const Context<T>& ctx, PoolCache* cache);
template <typename T>
Tensor<T> global_avg_pool_backward(const PoolCache& cache, const Tensor<T>& dy, const Context<T>& ctx);

/// Adaptive max pool to 1 x 1, flattened: N x C x H x W -> N x C
template <typename T>
Tensor<T> global_max_pool_forward(const Tensor<T>& x, const Context<T>& ctx, PoolCache* cache);
template <typename T>
Tensor<T> global_max_pool_backward(const PoolCache& cache, const Tensor<T>& dy, const Context<T>& ctx);

/// 3x3 stride-2 pad-1 max pool used by the ImageNet stem.
template <typename T>
Tensor<T> max_pool_forward(const Tensor<T>& x, const Context<T>& ctx, PoolCache* cache);
template <typename T>
Tensor<T> max_pool_backward(const PoolCache& cache, const Tensor<T>& dy, const Context<T>& ctx);

template <typename T>
struct ConvUnitCache {
  ConvCache<T> conv;
  BatchNormCache<T> bn;
  ReluCache<T> relu;
};

/// conv -> batch-norm -> optional ReLU. Used for stems, residual branches and
/// graft blocks.
template <typename T>
class ConvUnit {
 public:
  ConvUnit() = default;
  ConvUnit(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
           std::size_t pad, bool relu);

  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx, ConvUnitCache<T>* cache) const;
  Tensor<T> backward(const ConvUnitCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx,
                     bool need_input_grad) const;

  void collect(std::vector<Parameter<T>*>& params);
  void collect(std::vector<const Parameter<T>*>& params) const;
  void collect_buffers(std::vector<Buffer<T>>& out, std::vector<BatchNorm2d<T>*>& layers);
  std::size_t out_channels() const { return conv_.out_channels(); }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  bool relu_ = true;
};

enum class BlockKind { basic, bottleneck };

template <typename T>
struct BlockCache {
  std::vector<ConvUnitCache<T>> units;
  std::optional<ConvUnitCache<T>> shortcut;
  ReluCache<T> out;
};

/// ResNet residual block. Basic: 3x3 -> 3x3. Bottleneck: 1x1 -> 3x3 -> 1x1 with
/// expansion 4 and the stride on the 3x3. Projection shortcut when the shape changes.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, BlockKind kind, std::size_t in, std::size_t width, std::size_t stride);

  static std::size_t expansion(BlockKind kind) { return kind == BlockKind::basic ? 1 : 4; }

  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx, BlockCache<T>* cache) const;
  Tensor<T> backward(const BlockCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx,
                     bool need_input_grad) const;

  void collect(std::vector<Parameter<T>*>& params);
  void collect(std::vector<const Parameter<T>*>& params) const;
  void collect_buffers(std::vector<Buffer<T>>& out, std::vector<BatchNorm2d<T>*>& layers);
  std::size_t out_channels() const { return out_; }

 private:
  std::vector<ConvUnit<T>> units_;
  std::optional<ConvUnit<T>> shortcut_;
  std::size_t out_ = 0;
};

template <typename T>
struct StageCache {
  std::vector<BlockCache<T>> blocks;
};

template <typename T>
class Stage {
 public:
  Stage() = default;
  Stage(const std::string& name, BlockKind kind, std::size_t in, std::size_t width, std::size_t blocks,
        std::size_t stride);

  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx, StageCache<T>* cache) const;
  Tensor<T> backward(const StageCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx,
                     bool need_input_grad) const;

  void collect(std::vector<Parameter<T>*>& params);
  void collect(std::vector<const Parameter<T>*>& params) const;
  void collect_buffers(std::vector<Buffer<T>>& out, std::vector<BatchNorm2d<T>*>& layers);
  std::size_t out_channels() const { return blocks_.back().out_channels(); }

 private:
  std::vector<ResidualBlock<T>> blocks_;
};

}  // namespace engraf::nn
