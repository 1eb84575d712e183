#pragma once

// Numerical kernels behind every layer. Each kernel exists twice:
//   reference::  straightforward serial loops, kept as the test oracle
//   parallel::   OpenMP loops over an im2col + BLAS formulation
// Layers call the dispatching wrappers at the bottom of this header with the
// backend chosen by the caller. All buffers are NCHW and caller-owned.

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>

namespace engraf::kernels {

enum class Backend { reference, parallel };

std::string_view to_string(Backend backend);

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

struct ChannelGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t spatial = 1;  // H*W

  std::size_t size() const { return batch * channels * spatial; }
};

struct PoolGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t pad = 1;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t output_size() const { return batch * channels * out_h() * out_w(); }
};

#define ENGRAF_KERNEL_DECLS                                                                        \
  /* y = conv(x, w); y overwritten */                                                              \
  template <typename T>                                                                            \
  void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y);                        \
  /* dx overwritten, dw accumulated; either may be null */                                            \
  template <typename T>                                                                            \
  void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw);  \
  /* per-channel biased batch statistics */                                                        \
  template <typename T>                                                                            \
  void channel_moments(const ChannelGeometry& g, const T* x, T* mean, T* var);                    \
  /* y = gamma * (x - mean) * inv_std + beta */                                                    \
  template <typename T>                                                                            \
  void batchnorm_apply(const ChannelGeometry& g, const T* x, const T* mean, const T* inv_std,      \
                       const T* gamma, const T* beta, T* y);                                       \
  /* batch-statistics backward; dx overwritten, dgamma/dbeta accumulated */                        \
  template <typename T>                                                                            \
  void batchnorm_backward_batch(const ChannelGeometry& g, const T* x, const T* mean,              \
                                const T* inv_std, const T* gamma, const T* dy, T* dx, T* dgamma,  \
                                T* dbeta);                                                         \
  /* fixed-statistics backward; dx overwritten, dgamma/dbeta accumulated */                        \
  template <typename T>                                                                            \
  void batchnorm_backward_fixed(const ChannelGeometry& g, const T* x, const T* mean,              \
                                const T* inv_std, const T* gamma, const T* dy, T* dx, T* dgamma,  \
                                T* dbeta);                                                         \
  template <typename T>                                                                            \
  void relu_forward(std::size_t n, const T* x, T* y);                                              \
  /* dx = dy where y > 0 else 0 */                                                                 \
  template <typename T>                                                                            \
  void relu_backward(std::size_t n, const T* y, const T* dy, T* dx);                               \
  /* y[n, c] = mean over spatial */                                                                \
  template <typename T>                                                                            \
  void global_avg_pool_forward(const ChannelGeometry& g, const T* x, T* y);                       \
  template <typename T>                                                                            \
  void global_avg_pool_backward(const ChannelGeometry& g, const T* dy, T* dx);                    \
  /* y[n, c] = max over spatial; argmax is the first maximal position */                           \
  template <typename T>                                                                            \
  void global_max_pool_forward(const ChannelGeometry& g, const T* x, T* y, std::uint32_t* argmax); \
  template <typename T>                                                                            \
  void global_max_pool_backward(const ChannelGeometry& g, const std::uint32_t* argmax,            \
                                const T* dy, T* dx);                                               \
  /* windowed max pool with implicit -inf padding */                                               \
  template <typename T>                                                                            \
  void max_pool2d_forward(const PoolGeometry& g, const T* x, T* y, std::uint32_t* argmax);        \
  template <typename T>                                                                            \
  void max_pool2d_backward(const PoolGeometry& g, const std::uint32_t* argmax, const T* dy, T* dx);\
  /* y[b, o] = sum_i x[b, i] w[o, i] + bias[o] */                                                  \
  template <typename T>                                                                            \
  void linear_forward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w,  \
                      const T* bias, T* y);                                                        \
  /* dx overwritten, dw and dbias accumulated; null skips */                                         \
  template <typename T>                                                                            \
  void linear_backward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w, \
                       const T* dy, T* dx, T* dw, T* dbias);

namespace reference {
ENGRAF_KERNEL_DECLS
}  // namespace reference

namespace parallel {
ENGRAF_KERNEL_DECLS

/// Number of OpenMP threads the parallel kernels will use.
int thread_count();
}  // namespace parallel

#undef ENGRAF_KERNEL_DECLS

/// Pins BLAS to a single thread so GEMM reduction order is fixed across runs.
void set_deterministic(bool deterministic);

// Dispatch helpers.
#define ENGRAF_DISPATCH(fn)                                             \
  template <typename... Args>                                           \
  void fn(Backend backend, Args&&... args) {                            \
    if (backend == Backend::reference) {                                \
      reference::fn(std::forward<Args>(args)...);                       \
    } else {                                                            \
      parallel::fn(std::forward<Args>(args)...);                        \
    }                                                                   \
  }

ENGRAF_DISPATCH(conv2d_forward)
ENGRAF_DISPATCH(conv2d_backward)
ENGRAF_DISPATCH(channel_moments)
ENGRAF_DISPATCH(batchnorm_apply)
ENGRAF_DISPATCH(batchnorm_backward_batch)
ENGRAF_DISPATCH(batchnorm_backward_fixed)
ENGRAF_DISPATCH(relu_forward)
ENGRAF_DISPATCH(relu_backward)
ENGRAF_DISPATCH(global_avg_pool_forward)
ENGRAF_DISPATCH(global_avg_pool_backward)
ENGRAF_DISPATCH(global_max_pool_forward)
ENGRAF_DISPATCH(global_max_pool_backward)
ENGRAF_DISPATCH(max_pool2d_forward)
ENGRAF_DISPATCH(max_pool2d_backward)
ENGRAF_DISPATCH(linear_forward)
ENGRAF_DISPATCH(linear_backward)

#undef ENGRAF_DISPATCH

}  // namespace engraf::kernels
