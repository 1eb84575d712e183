// Serial reference kernels. Direct loops, no blocking, no BLAS; these are the
// oracles the parallel kernels are tested against.

#include <cmath>
#include <limits>

#include "engraf/kernels.hpp"

namespace engraf::kernels::reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          T acc = 0;
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ki = 0; ki < g.kernel; ++ki) {
              const long r = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
              if (r < 0 || r >= static_cast<long>(g.in_h)) continue;
              for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const long s = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
                if (s < 0 || s >= static_cast<long>(g.in_w)) continue;
                acc += x[((n * g.in_channels + c) * g.in_h + r) * g.in_w + s] *
                       w[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
              }
            }
          }
          y[((n * g.out_channels + o) * oh + i) * ow + j] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  if (dx != nullptr) {
    for (std::size_t i = 0; i < g.input_size(); ++i) dx[i] = 0;
  }
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const T grad = dy[((n * g.out_channels + o) * oh + i) * ow + j];
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ki = 0; ki < g.kernel; ++ki) {
              const long r = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
              if (r < 0 || r >= static_cast<long>(g.in_h)) continue;
              for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const long s = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
                if (s < 0 || s >= static_cast<long>(g.in_w)) continue;
                const std::size_t xi = ((n * g.in_channels + c) * g.in_h + r) * g.in_w + s;
                const std::size_t wi = ((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj;
                if (dw != nullptr) dw[wi] += grad * x[xi];
                if (dx != nullptr) dx[xi] += grad * w[wi];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void channel_moments(const ChannelGeometry& g, const T* x, T* mean, T* var) {
  const T count = static_cast<T>(g.batch * g.spatial);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T sum = 0;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t p = 0; p < g.spatial; ++p) sum += x[(n * g.channels + c) * g.spatial + p];
    const T m = sum / count;
    T sq = 0;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t p = 0; p < g.spatial; ++p) {
        const T d = x[(n * g.channels + c) * g.spatial + p] - m;
        sq += d * d;
      }
    mean[c] = m;
    var[c] = sq / count;
  }
}

template <typename T>
void batchnorm_apply(const ChannelGeometry& g, const T* x, const T* mean, const T* inv_std,
                     const T* gamma, const T* beta, T* y) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t p = 0; p < g.spatial; ++p) {
        const std::size_t i = (n * g.channels + c) * g.spatial + p;
        y[i] = gamma[c] * (x[i] - mean[c]) * inv_std[c] + beta[c];
      }
}

template <typename T>
void batchnorm_backward_batch(const ChannelGeometry& g, const T* x, const T* mean,
                              const T* inv_std, const T* gamma, const T* dy, T* dx, T* dgamma,
                              T* dbeta) {
  const T count = static_cast<T>(g.batch * g.spatial);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t p = 0; p < g.spatial; ++p) {
        const std::size_t i = (n * g.channels + c) * g.spatial + p;
        const T xhat = (x[i] - mean[c]) * inv_std[c];
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xhat;
      }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const T scale = gamma[c] * inv_std[c] / count;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t p = 0; p < g.spatial; ++p) {
        const std::size_t i = (n * g.channels + c) * g.spatial + p;
        const T xhat = (x[i] - mean[c]) * inv_std[c];
        dx[i] = scale * (count * dy[i] - sum_dy - xhat * sum_dy_xhat);
      }
  }
}

template <typename T>
void batchnorm_backward_fixed(const ChannelGeometry& g, const T* x, const T* mean,
                              const T* inv_std, const T* gamma, const T* dy, T* dx, T* dgamma,
                              T* dbeta) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t p = 0; p < g.spatial; ++p) {
        const std::size_t i = (n * g.channels + c) * g.spatial + p;
        dgamma[c] += dy[i] * (x[i] - mean[c]) * inv_std[c];
        dbeta[c] += dy[i];
        dx[i] = dy[i] * gamma[c] * inv_std[c];
      }
  }
}

template <typename T>
void relu_forward(std::size_t n, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(std::size_t n, const T* y, const T* dy, T* dx) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void global_avg_pool_forward(const ChannelGeometry& g, const T* x, T* y) {
  for (std::size_t nc = 0; nc < g.batch * g.channels; ++nc) {
    T sum = 0;
    for (std::size_t p = 0; p < g.spatial; ++p) sum += x[nc * g.spatial + p];
    y[nc] = sum / static_cast<T>(g.spatial);
  }
}

template <typename T>
void global_avg_pool_backward(const ChannelGeometry& g, const T* dy, T* dx) {
  for (std::size_t nc = 0; nc < g.batch * g.channels; ++nc)
    for (std::size_t p = 0; p < g.spatial; ++p)
      dx[nc * g.spatial + p] = dy[nc] / static_cast<T>(g.spatial);
}

template <typename T>
void global_max_pool_forward(const ChannelGeometry& g, const T* x, T* y, std::uint32_t* argmax) {
  for (std::size_t nc = 0; nc < g.batch * g.channels; ++nc) {
    std::uint32_t best = 0;
    for (std::size_t p = 1; p < g.spatial; ++p)
      if (x[nc * g.spatial + p] > x[nc * g.spatial + best]) best = static_cast<std::uint32_t>(p);
    y[nc] = x[nc * g.spatial + best];
    argmax[nc] = best;
  }
}

template <typename T>
void global_max_pool_backward(const ChannelGeometry& g, const std::uint32_t* argmax, const T* dy,
                              T* dx) {
  for (std::size_t i = 0; i < g.size(); ++i) dx[i] = 0;
  for (std::size_t nc = 0; nc < g.batch * g.channels; ++nc) dx[nc * g.spatial + argmax[nc]] = dy[nc];
}

template <typename T>
void max_pool2d_forward(const PoolGeometry& g, const T* x, T* y, std::uint32_t* argmax) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t nc = 0; nc < g.batch * g.channels; ++nc) {
    const T* plane = x + nc * g.in_h * g.in_w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        std::uint32_t best_at = 0;
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
          const long r = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
          if (r < 0 || r >= static_cast<long>(g.in_h)) continue;
          for (std::size_t kj = 0; kj < g.kernel; ++kj) {
            const long s = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
            if (s < 0 || s >= static_cast<long>(g.in_w)) continue;
            const std::size_t at = static_cast<std::size_t>(r) * g.in_w + static_cast<std::size_t>(s);
            if (plane[at] > best) {
              best = plane[at];
              best_at = static_cast<std::uint32_t>(at);
            }
          }
        }
        y[(nc * oh + i) * ow + j] = best;
        argmax[(nc * oh + i) * ow + j] = best_at;
      }
  }
}

template <typename T>
void max_pool2d_backward(const PoolGeometry& g, const std::uint32_t* argmax, const T* dy, T* dx) {
  const std::size_t plane = g.in_h * g.in_w, out_plane = g.out_h() * g.out_w();
  for (std::size_t i = 0; i < g.batch * g.channels * plane; ++i) dx[i] = 0;
  for (std::size_t nc = 0; nc < g.batch * g.channels; ++nc)
    for (std::size_t q = 0; q < out_plane; ++q)
      dx[nc * plane + argmax[nc * out_plane + q]] += dy[nc * out_plane + q];
}

template <typename T>
void linear_forward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w,
                    const T* bias, T* y) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < out; ++o) {
      T acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[b * in + i] * w[o * in + i];
      y[b * out + o] = acc;
    }
}

template <typename T>
void linear_backward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w,
                     const T* dy, T* dx, T* dw, T* dbias) {
  if (dx != nullptr) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < in; ++i) {
        T acc = 0;
        for (std::size_t o = 0; o < out; ++o) acc += dy[b * out + o] * w[o * in + i];
        dx[b * in + i] = acc;
      }
  }
  if (dw == nullptr) return;
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t b = 0; b < batch; ++b) {
      dbias[o] += dy[b * out + o];
      for (std::size_t i = 0; i < in; ++i) dw[o * in + i] += dy[b * out + o] * x[b * in + i];
    }
  }
}

#define ENGRAF_INSTANTIATE(T)                                                                     \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, T*);                   \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*);    \
  template void channel_moments<T>(const ChannelGeometry&, const T*, T*, T*);                     \
  template void batchnorm_apply<T>(const ChannelGeometry&, const T*, const T*, const T*,          \
                                   const T*, const T*, T*);                                       \
  template void batchnorm_backward_batch<T>(const ChannelGeometry&, const T*, const T*, const T*, \
                                            const T*, const T*, T*, T*, T*);                      \
  template void batchnorm_backward_fixed<T>(const ChannelGeometry&, const T*, const T*, const T*, \
                                            const T*, const T*, T*, T*, T*);                      \
  template void relu_forward<T>(std::size_t, const T*, T*);                                       \
  template void relu_backward<T>(std::size_t, const T*, const T*, T*);                            \
  template void global_avg_pool_forward<T>(const ChannelGeometry&, const T*, T*);                 \
  template void global_avg_pool_backward<T>(const ChannelGeometry&, const T*, T*);                \
  template void global_max_pool_forward<T>(const ChannelGeometry&, const T*, T*, std::uint32_t*); \
  template void global_max_pool_backward<T>(const ChannelGeometry&, const std::uint32_t*,         \
                                            const T*, T*);                                        \
  template void max_pool2d_forward<T>(const PoolGeometry&, const T*, T*, std::uint32_t*);         \
  template void max_pool2d_backward<T>(const PoolGeometry&, const std::uint32_t*, const T*, T*);  \
  template void linear_forward<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,      \
                                  const T*, T*);                                                  \
  template void linear_backward<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,     \
                                   const T*, T*, T*, T*);

ENGRAF_INSTANTIATE(float)
ENGRAF_INSTANTIATE(double)

}  // namespace engraf::kernels::reference
