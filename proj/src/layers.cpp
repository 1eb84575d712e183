#include "engraf/layers.hpp"

#include <cmath>

#include "engraf/error.hpp"

namespace engraf::nn {

namespace {

template <typename T>
void require_trace(const Context<T>& ctx, const char* what) {
  if (ctx.trace == nullptr) throw Error(ErrorKind::InvalidConfig, std::string(what) + " needs a trace");
}

void require_rank4(const Shape& shape, std::size_t channels, const std::string& who) {
  if (shape.size() != 4 || shape[1] != channels) {
    throw Error(ErrorKind::ShapeMismatch, who + ": expected N x " + std::to_string(channels) + " x H x W input, got " +
                                              shape_string(shape));
  }
}

}  // namespace

template <typename T>
T* Trace<T>::grad_for(const Parameter<T>& p) {
  if (!accumulate_param_grads) return nullptr;
  if (grads.size() <= p.index) grads.resize(p.index + 1);
  auto& slot = grads[p.index];
  if (slot.shape() != p.value.shape()) slot = Tensor<T>(p.value.shape());
  return slot.data();
}

// Conv2d ---------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                  std::size_t pad)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad) {
  weight_.name = std::move(name) + ".weight";
  weight_.value = Tensor<T>({out, in, kernel, kernel});
  weight_.init = InitKind::he_normal;
  weight_.fan_in = in * kernel * kernel;
}

template <typename T>
kernels::ConvGeometry Conv2d<T>::geometry(const Shape& input) const {
  require_rank4(input, in_, weight_.name);
  return {input[0], in_, input[2], input[3], out_, kernel_, stride_, pad_};
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, const Context<T>& ctx, ConvCache<T>* cache) const {
  const auto g = geometry(x.shape());
  Tensor<T> y({g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::conv2d_forward(ctx.backend, g, x.data(), weight_.value.data(), y.data());
  if (cache != nullptr) cache->input = x;
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const ConvCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx,
                              bool need_input_grad) const {
  require_trace(ctx, "conv backward");
  const auto g = geometry(cache.input.shape());
  Tensor<T> dx;
  T* dx_ptr = nullptr;
  if (need_input_grad) {
    dx = Tensor<T>(cache.input.shape());
    dx_ptr = dx.data();
  }
  T* dw = ctx.trace->grad_for(weight_);
  if (dx_ptr != nullptr || dw != nullptr) {
    kernels::conv2d_backward(ctx.backend, g, cache.input.data(), weight_.value.data(), dy.data(), dx_ptr, dw);
  }
  return dx;
}

// BatchNorm2d ----------------------------------------------------------------

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, std::size_t channels)
    : name_(std::move(name)), channels_(channels), running_mean_({channels}, T(0)), running_var_({channels}, T(1)) {
  gamma_.name = name_ + ".weight";
  gamma_.value = Tensor<T>({channels}, T(1));
  gamma_.init = InitKind::ones;
  beta_.name = name_ + ".bias";
  beta_.value = Tensor<T>({channels}, T(0));
  beta_.init = InitKind::zeros;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, const Context<T>& ctx, BatchNormCache<T>* cache) const {
  require_rank4(x.shape(), channels_, name_);
  const kernels::ChannelGeometry g{x.dim(0), channels_, x.dim(2) * x.dim(3)};
  std::vector<T> mean(channels_), inv_std(channels_);
  if (ctx.mode == Mode::train) {
    require_trace(ctx, "train-mode batch norm");
    std::vector<T> var(channels_);
    kernels::channel_moments(ctx.backend, g, x.data(), mean.data(), var.data());
    for (std::size_t c = 0; c < channels_; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + T(kEpsilon));
    ctx.trace->batch_stats.push_back({index_, mean, std::move(var), g.batch * g.spatial});
  } else {
    for (std::size_t c = 0; c < channels_; ++c) {
      mean[c] = running_mean_[c];
      inv_std[c] = T(1) / std::sqrt(running_var_[c] + T(kEpsilon));
    }
  }
  Tensor<T> y(x.shape());
  kernels::batchnorm_apply(ctx.backend, g, x.data(), mean.data(), inv_std.data(), gamma_.value.data(),
                           beta_.value.data(), y.data());
  if (cache != nullptr) {
    cache->input = x;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->mode = ctx.mode;
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const BatchNormCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx) const {
  require_trace(ctx, "batch norm backward");
  const auto& x = cache.input;
  const kernels::ChannelGeometry g{x.dim(0), channels_, x.dim(2) * x.dim(3)};
  Tensor<T> dx(x.shape());
  T* dgamma = ctx.trace->grad_for(gamma_);
  T* dbeta = ctx.trace->grad_for(beta_);
  std::vector<T> scratch;
  if (dgamma == nullptr || dbeta == nullptr) {
    scratch.assign(2 * channels_, T(0));
    dgamma = scratch.data();
    dbeta = scratch.data() + channels_;
  }
  if (cache.mode == Mode::train) {
    kernels::batchnorm_backward_batch(ctx.backend, g, x.data(), cache.mean.data(), cache.inv_std.data(),
                                      gamma_.value.data(), dy.data(), dx.data(), dgamma, dbeta);
  } else {
    kernels::batchnorm_backward_fixed(ctx.backend, g, x.data(), cache.mean.data(), cache.inv_std.data(),
                                      gamma_.value.data(), dy.data(), dx.data(), dgamma, dbeta);
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::update_running(const BatchStats<T>& stats) {
  const T m = T(kMomentum);
  const T correction = stats.count > 1 ? T(stats.count) / T(stats.count - 1) : T(1);
  for (std::size_t c = 0; c < channels_; ++c) {
    running_mean_[c] = (T(1) - m) * running_mean_[c] + m * stats.mean[c];
    running_var_[c] = (T(1) - m) * running_var_[c] + m * stats.var[c] * correction;
  }
}

template <typename T>
void BatchNorm2d<T>::collect_buffers(std::vector<Buffer<T>>& out, std::vector<BatchNorm2d*>& layers) {
  index_ = layers.size();
  layers.push_back(this);
  out.push_back({name_ + ".running_mean", &running_mean_});
  out.push_back({name_ + ".running_var", &running_var_});
}

// ReLU -----------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x, const Context<T>& ctx, ReluCache<T>* cache) {
  Tensor<T> y(x.shape());
  kernels::relu_forward(ctx.backend, x.size(), x.data(), y.data());
  if (cache != nullptr) cache->output = y;
  return y;
}

template <typename T>
Tensor<T> relu_backward(const ReluCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx) {
  Tensor<T> dx(dy.shape());
  kernels::relu_backward(ctx.backend, dy.size(), cache.output.data(), dy.data(), dx.data());
  return dx;
}

// Linear ---------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(std::string name, std::size_t in, std::size_t out) : in_(in), out_(out) {
  weight_.name = name + ".weight";
  weight_.value = Tensor<T>({out, in});
  weight_.init = InitKind::fan_in_uniform;
  weight_.fan_in = in;
  bias_.name = name + ".bias";
  bias_.value = Tensor<T>({out});
  bias_.init = InitKind::fan_in_uniform;
  bias_.fan_in = in;
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, const Context<T>& ctx, LinearCache<T>* cache) const {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw Error(ErrorKind::ShapeMismatch, weight_.name + ": expected B x " + std::to_string(in_) + " input, got " +
                                              shape_string(x.shape()));
  }
  Tensor<T> y({x.dim(0), out_});
  kernels::linear_forward(ctx.backend, x.dim(0), in_, out_, x.data(), weight_.value.data(), bias_.value.data(),
                          y.data());
  if (cache != nullptr) cache->input = x;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const LinearCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx) const {
  require_trace(ctx, "linear backward");
  Tensor<T> dx(cache.input.shape());
  T* dw = ctx.trace->grad_for(weight_);
  T* db = ctx.trace->grad_for(bias_);
  kernels::linear_backward(ctx.backend, cache.input.dim(0), in_, out_, cache.input.data(), weight_.value.data(),
                           dy.data(), dx.data(), dw, db);
  return dx;
}

// Pooling --------------------------------------------------------------------

namespace {
kernels::ChannelGeometry channel_geometry(const Shape& s) {
  if (s.size() != 4) throw Error(ErrorKind::ShapeMismatch, "pooling expects N x C x H x W, got " + shape_string(s));
  return {s[0], s[1], s[2] * s[3]};
}
}  // namespace

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x, const Context<T>& ctx, PoolCache* cache) {
  const auto g = channel_geometry(x.shape());
  Tensor<T> y({g.batch, g.channels});
  kernels::global_avg_pool_forward(ctx.backend, g, x.data(), y.data());
  if (cache != nullptr) cache->input_shape = x.shape();
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const PoolCache& cache, const Tensor<T>& dy, const Context<T>& ctx) {
  const auto g = channel_geometry(cache.input_shape);
  Tensor<T> dx(cache.input_shape);
  kernels::global_avg_pool_backward(ctx.backend, g, dy.data(), dx.data());
  return dx;
}

template <typename T>
Tensor<T> global_max_pool_forward(const Tensor<T>& x, const Context<T>& ctx, PoolCache* cache) {
  const auto g = channel_geometry(x.shape());
  Tensor<T> y({g.batch, g.channels});
  std::vector<std::uint32_t> argmax(g.batch * g.channels);
  kernels::global_max_pool_forward(ctx.backend, g, x.data(), y.data(), argmax.data());
  if (cache != nullptr) {
    cache->input_shape = x.shape();
    cache->argmax = std::move(argmax);
  }
  return y;
}

template <typename T>
Tensor<T> global_max_pool_backward(const PoolCache& cache, const Tensor<T>& dy, const Context<T>& ctx) {
  const auto g = channel_geometry(cache.input_shape);
  Tensor<T> dx(cache.input_shape);
  kernels::global_max_pool_backward(ctx.backend, g, cache.argmax.data(), dy.data(), dx.data());
  return dx;
}

template <typename T>
Tensor<T> max_pool_forward(const Tensor<T>& x, const Context<T>& ctx, PoolCache* cache) {
  if (x.rank() != 4) throw Error(ErrorKind::ShapeMismatch, "max pool expects N x C x H x W");
  const kernels::PoolGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 3, 2, 1};
  Tensor<T> y({g.batch, g.channels, g.out_h(), g.out_w()});
  std::vector<std::uint32_t> argmax(y.size());
  kernels::max_pool2d_forward(ctx.backend, g, x.data(), y.data(), argmax.data());
  if (cache != nullptr) {
    cache->input_shape = x.shape();
    cache->argmax = std::move(argmax);
  }
  return y;
}

template <typename T>
Tensor<T> max_pool_backward(const PoolCache& cache, const Tensor<T>& dy, const Context<T>& ctx) {
  const auto& s = cache.input_shape;
  const kernels::PoolGeometry g{s[0], s[1], s[2], s[3], 3, 2, 1};
  Tensor<T> dx(s);
  kernels::max_pool2d_backward(ctx.backend, g, cache.argmax.data(), dy.data(), dx.data());
  return dx;
}

// ConvUnit -------------------------------------------------------------------

template <typename T>
ConvUnit<T>::ConvUnit(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                      std::size_t stride, std::size_t pad, bool relu)
    : conv_(name + ".conv", in, out, kernel, stride, pad), bn_(name + ".bn", out), relu_(relu) {}

template <typename T>
Tensor<T> ConvUnit<T>::forward(const Tensor<T>& x, const Context<T>& ctx, ConvUnitCache<T>* cache) const {
  auto h = conv_.forward(x, ctx, cache ? &cache->conv : nullptr);
  h = bn_.forward(h, ctx, cache ? &cache->bn : nullptr);
  if (relu_) h = relu_forward(h, ctx, cache ? &cache->relu : nullptr);
  return h;
}

template <typename T>
Tensor<T> ConvUnit<T>::backward(const ConvUnitCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx,
                                bool need_input_grad) const {
  Tensor<T> d = relu_ ? relu_backward(cache.relu, dy, ctx) : dy;
  d = bn_.backward(cache.bn, d, ctx);
  return conv_.backward(cache.conv, d, ctx, need_input_grad);
}

template <typename T>
void ConvUnit<T>::collect(std::vector<Parameter<T>*>& params) {
  conv_.collect(params);
  bn_.collect(params);
}

template <typename T>
void ConvUnit<T>::collect(std::vector<const Parameter<T>*>& params) const {
  conv_.collect(params);
  bn_.collect(params);
}

template <typename T>
void ConvUnit<T>::collect_buffers(std::vector<Buffer<T>>& out, std::vector<BatchNorm2d<T>*>& layers) {
  bn_.collect_buffers(out, layers);
}

// ResidualBlock ----------------------------------------------------------------

template <typename T>
ResidualBlock<T>::ResidualBlock(const std::string& name, BlockKind kind, std::size_t in, std::size_t width,
                                std::size_t stride)
    : out_(width * expansion(kind)) {
  if (kind == BlockKind::basic) {
    units_.emplace_back(name + ".unit1", in, width, 3, stride, 1, true);
    units_.emplace_back(name + ".unit2", width, width, 3, 1, 1, false);
  } else {
    units_.emplace_back(name + ".unit1", in, width, 1, 1, 0, true);
    units_.emplace_back(name + ".unit2", width, width, 3, stride, 1, true);
    units_.emplace_back(name + ".unit3", width, out_, 1, 1, 0, false);
  }
  if (stride != 1 || in != out_) shortcut_.emplace(name + ".shortcut", in, out_, 1, stride, 0, false);
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, const Context<T>& ctx, BlockCache<T>* cache) const {
  if (cache != nullptr) cache->units.resize(units_.size());
  Tensor<T> h = x;
  for (std::size_t i = 0; i < units_.size(); ++i) h = units_[i].forward(h, ctx, cache ? &cache->units[i] : nullptr);
  if (shortcut_) {
    if (cache != nullptr) cache->shortcut.emplace();
    h += shortcut_->forward(x, ctx, cache ? &*cache->shortcut : nullptr);
  } else {
    h += x;
  }
  return relu_forward(h, ctx, cache ? &cache->out : nullptr);
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const BlockCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx,
                                     bool need_input_grad) const {
  const Tensor<T> d = relu_backward(cache.out, dy, ctx);
  Tensor<T> dh = d;
  for (std::size_t i = units_.size(); i-- > 0;) {
    dh = units_[i].backward(cache.units[i], dh, ctx, need_input_grad || i > 0);
  }
  if (shortcut_) {
    Tensor<T> ds = shortcut_->backward(*cache.shortcut, d, ctx, need_input_grad);
    if (need_input_grad) dh += ds;
  } else if (need_input_grad) {
    dh += d;
  }
  return dh;
}

template <typename T>
void ResidualBlock<T>::collect(std::vector<Parameter<T>*>& params) {
  for (auto& u : units_) u.collect(params);
  if (shortcut_) shortcut_->collect(params);
}

template <typename T>
void ResidualBlock<T>::collect(std::vector<const Parameter<T>*>& params) const {
  for (const auto& u : units_) u.collect(params);
  if (shortcut_) shortcut_->collect(params);
}

template <typename T>
void ResidualBlock<T>::collect_buffers(std::vector<Buffer<T>>& out, std::vector<BatchNorm2d<T>*>& layers) {
  for (auto& u : units_) u.collect_buffers(out, layers);
  if (shortcut_) shortcut_->collect_buffers(out, layers);
}

// Stage ------------------------------------------------------------------------

template <typename T>
Stage<T>::Stage(const std::string& name, BlockKind kind, std::size_t in, std::size_t width, std::size_t blocks,
                std::size_t stride) {
  for (std::size_t b = 0; b < blocks; ++b) {
    blocks_.emplace_back(name + "." + std::to_string(b), kind, in, width, b == 0 ? stride : 1);
    in = blocks_.back().out_channels();
  }
}

template <typename T>
Tensor<T> Stage<T>::forward(const Tensor<T>& x, const Context<T>& ctx, StageCache<T>* cache) const {
  if (cache != nullptr) cache->blocks.resize(blocks_.size());
  Tensor<T> h = x;
  for (std::size_t b = 0; b < blocks_.size(); ++b) h = blocks_[b].forward(h, ctx, cache ? &cache->blocks[b] : nullptr);
  return h;
}

template <typename T>
Tensor<T> Stage<T>::backward(const StageCache<T>& cache, const Tensor<T>& dy, const Context<T>& ctx,
                             bool need_input_grad) const {
  Tensor<T> d = dy;
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    d = blocks_[b].backward(cache.blocks[b], d, ctx, need_input_grad || b > 0);
  }
  return d;
}

template <typename T>
void Stage<T>::collect(std::vector<Parameter<T>*>& params) {
  for (auto& b : blocks_) b.collect(params);
}

template <typename T>
void Stage<T>::collect(std::vector<const Parameter<T>*>& params) const {
  for (const auto& b : blocks_) b.collect(params);
}

template <typename T>
void Stage<T>::collect_buffers(std::vector<Buffer<T>>& out, std::vector<BatchNorm2d<T>*>& layers) {
  for (auto& b : blocks_) b.collect_buffers(out, layers);
}

#define ENGRAF_INSTANTIATE(T)                                                                         \
  template struct Trace<T>;                                                                           \
  template class Conv2d<T>;                                                                           \
  template class BatchNorm2d<T>;                                                                      \
  template class Linear<T>;                                                                           \
  template class ConvUnit<T>;                                                                         \
  template class ResidualBlock<T>;                                                                    \
  template class Stage<T>;                                                                            \
  template Tensor<T> relu_forward<T>(const Tensor<T>&, const Context<T>&, ReluCache<T>*);            \
  template Tensor<T> relu_backward<T>(const ReluCache<T>&, const Tensor<T>&, const Context<T>&);     \
  template Tensor<T> global_avg_pool_forward<T>(const Tensor<T>&, const Context<T>&, PoolCache*);     \
  template Tensor<T> global_avg_pool_backward<T>(const PoolCache&, const Tensor<T>&, const Context<T>&); \
  template Tensor<T> global_max_pool_forward<T>(const Tensor<T>&, const Context<T>&, PoolCache*);     \
  template Tensor<T> global_max_pool_backward<T>(const PoolCache&, const Tensor<T>&, const Context<T>&); \
  template Tensor<T> max_pool_forward<T>(const Tensor<T>&, const Context<T>&, PoolCache*);            \
  template Tensor<T> max_pool_backward<T>(const PoolCache&, const Tensor<T>&, const Context<T>&);

ENGRAF_INSTANTIATE(float)
ENGRAF_INSTANTIATE(double)

}  // namespace engraf::nn
