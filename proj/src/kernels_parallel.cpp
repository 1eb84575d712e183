// OpenMP kernels. Convolutions are lowered to one batched im2col GEMM per call:
// the column matrix is K x (N*P) with K = C*k*k and P = out_h*out_w, so BLAS
// sees a single large product instead of N small ones.
//
// Every reduction loops over a fixed index order inside one thread, so results
// do not depend on the OpenMP thread count.

#include <cblas.h>

#include <cstring>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "engraf/kernels.hpp"

namespace engraf::kernels {

std::string_view to_string(Backend backend) {
  return backend == Backend::reference ? "reference" : "parallel";
}

void set_deterministic(bool deterministic) {
  if (deterministic) openblas_set_num_threads(1);
}

namespace parallel {

namespace {

using Index = std::ptrdiff_t;

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
          float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, static_cast<blasint>(m), static_cast<blasint>(n),
              static_cast<blasint>(k), alpha, a, static_cast<blasint>(lda), b,
              static_cast<blasint>(ldb), beta, c, static_cast<blasint>(ldc));
}

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, static_cast<blasint>(m), static_cast<blasint>(n),
              static_cast<blasint>(k), alpha, a, static_cast<blasint>(lda), b,
              static_cast<blasint>(ldb), beta, c, static_cast<blasint>(ldc));
}

// col[(c*k + ki)*k + kj][n*P + i*ow + j] = x[n, c, i*s + ki - pad, j*s + kj - pad]
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
  const std::size_t cols = g.batch * plane;
  const Index rows = static_cast<Index>(g.in_channels * g.kernel * g.kernel);
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < rows; ++row) {
    const std::size_t c = static_cast<std::size_t>(row) / (g.kernel * g.kernel);
    const std::size_t ki = (static_cast<std::size_t>(row) / g.kernel) % g.kernel;
    const std::size_t kj = static_cast<std::size_t>(row) % g.kernel;
    T* out = col + static_cast<std::size_t>(row) * cols;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* src = x + (n * g.in_channels + c) * g.in_h * g.in_w;
      T* dst = out + n * plane;
      for (std::size_t i = 0; i < oh; ++i) {
        const long r = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
        if (r < 0 || r >= static_cast<long>(g.in_h)) {
          std::memset(dst + i * ow, 0, ow * sizeof(T));
          continue;
        }
        const T* src_row = src + static_cast<std::size_t>(r) * g.in_w;
        for (std::size_t j = 0; j < ow; ++j) {
          const long s = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
          dst[i * ow + j] = (s < 0 || s >= static_cast<long>(g.in_w)) ? T(0) : src_row[s];
        }
      }
    }
  }
}

// Scatter-add of the column matrix back to image layout. Parallel over input
// channels so no two threads touch the same output element.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
  const std::size_t cols = g.batch * plane;
  std::memset(dx, 0, g.input_size() * sizeof(T));
  const Index channels = static_cast<Index>(g.in_channels);
#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < channels; ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* src = col + ((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          T* dst = dx + (n * g.in_channels + c) * g.in_h * g.in_w;
          for (std::size_t i = 0; i < oh; ++i) {
            const long r = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
            if (r < 0 || r >= static_cast<long>(g.in_h)) continue;
            T* dst_row = dst + static_cast<std::size_t>(r) * g.in_w;
            for (std::size_t j = 0; j < ow; ++j) {
              const long s = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
              if (s < 0 || s >= static_cast<long>(g.in_w)) continue;
              dst_row[s] += src[n * plane + i * ow + j];
            }
          }
        }
      }
    }
  }
}

// [N, O, P] <-> [O, N*P]
template <typename T>
void nop_to_onp(std::size_t batch, std::size_t channels, std::size_t plane, const T* src, T* dst) {
  const Index nc = static_cast<Index>(batch * channels);
#pragma omp parallel for schedule(static)
  for (Index idx = 0; idx < nc; ++idx) {
    const std::size_t n = static_cast<std::size_t>(idx) / channels;
    const std::size_t o = static_cast<std::size_t>(idx) % channels;
    std::memcpy(dst + (o * batch + n) * plane, src + (n * channels + o) * plane, plane * sizeof(T));
  }
}

template <typename T>
void onp_to_nop(std::size_t batch, std::size_t channels, std::size_t plane, const T* src, T* dst) {
  const Index nc = static_cast<Index>(batch * channels);
#pragma omp parallel for schedule(static)
  for (Index idx = 0; idx < nc; ++idx) {
    const std::size_t n = static_cast<std::size_t>(idx) / channels;
    const std::size_t o = static_cast<std::size_t>(idx) % channels;
    std::memcpy(dst + (n * channels + o) * plane, src + (o * batch + n) * plane, plane * sizeof(T));
  }
}

}  // namespace

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t cols = g.batch * plane;
  const std::size_t k = g.in_channels * g.kernel * g.kernel;
  std::vector<T> col(k * cols);
  im2col(g, x, col.data());
  std::vector<T> out(g.out_channels * cols);
  gemm(CblasNoTrans, CblasNoTrans, g.out_channels, cols, k, T(1), w, k, col.data(), cols, T(0),
       out.data(), cols);
  onp_to_nop(g.batch, g.out_channels, plane, out.data(), y);
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw) {
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t cols = g.batch * plane;
  const std::size_t k = g.in_channels * g.kernel * g.kernel;
  std::vector<T> grad(g.out_channels * cols);
  nop_to_onp(g.batch, g.out_channels, plane, dy, grad.data());

  std::vector<T> col(k * cols);
  if (dw != nullptr) {
    im2col(g, x, col.data());
    // dw[O, K] += grad[O, NP] * col[K, NP]^T
    gemm(CblasNoTrans, CblasTrans, g.out_channels, k, cols, T(1), grad.data(), cols, col.data(),
         cols, T(1), dw, k);
  }

  if (dx != nullptr) {
    // dcol[K, NP] = w[O, K]^T * grad[O, NP]
    gemm(CblasTrans, CblasNoTrans, k, cols, g.out_channels, T(1), w, k, grad.data(), cols, T(0),
         col.data(), cols);
    col2im(g, col.data(), dx);
  }
}

template <typename T>
void channel_moments(const ChannelGeometry& g, const T* x, T* mean, T* var) {
  const T count = static_cast<T>(g.batch * g.spatial);
  const Index channels = static_cast<Index>(g.channels);
#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < channels; ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    T sum = 0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* p = x + (n * g.channels + c) * g.spatial;
      for (std::size_t i = 0; i < g.spatial; ++i) sum += p[i];
    }
    const T m = sum / count;
    T sq = 0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* p = x + (n * g.channels + c) * g.spatial;
      for (std::size_t i = 0; i < g.spatial; ++i) sq += (p[i] - m) * (p[i] - m);
    }
    mean[c] = m;
    var[c] = sq / count;
  }
}

template <typename T>
void batchnorm_apply(const ChannelGeometry& g, const T* x, const T* mean, const T* inv_std,
                     const T* gamma, const T* beta, T* y) {
  const Index nc = static_cast<Index>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (Index idx = 0; idx < nc; ++idx) {
    const std::size_t c = static_cast<std::size_t>(idx) % g.channels;
    const T scale = gamma[c] * inv_std[c];
    const T shift = beta[c] - scale * mean[c];
    const T* src = x + static_cast<std::size_t>(idx) * g.spatial;
    T* dst = y + static_cast<std::size_t>(idx) * g.spatial;
#pragma omp simd
    for (std::size_t i = 0; i < g.spatial; ++i) dst[i] = scale * src[i] + shift;
  }
}

template <typename T>
void batchnorm_backward_batch(const ChannelGeometry& g, const T* x, const T* mean,
                              const T* inv_std, const T* gamma, const T* dy, T* dx, T* dgamma,
                              T* dbeta) {
  const T count = static_cast<T>(g.batch * g.spatial);
  const Index channels = static_cast<Index>(g.channels);
#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < channels; ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    T sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t base = (n * g.channels + c) * g.spatial;
      for (std::size_t i = 0; i < g.spatial; ++i) {
        sum_dy += dy[base + i];
        sum_dy_xhat += dy[base + i] * (x[base + i] - mean[c]) * inv_std[c];
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const T scale = gamma[c] * inv_std[c] / count;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t base = (n * g.channels + c) * g.spatial;
      for (std::size_t i = 0; i < g.spatial; ++i) {
        const T xhat = (x[base + i] - mean[c]) * inv_std[c];
        dx[base + i] = scale * (count * dy[base + i] - sum_dy - xhat * sum_dy_xhat);
      }
    }
  }
}

template <typename T>
void batchnorm_backward_fixed(const ChannelGeometry& g, const T* x, const T* mean,
                              const T* inv_std, const T* gamma, const T* dy, T* dx, T* dgamma,
                              T* dbeta) {
  const Index channels = static_cast<Index>(g.channels);
#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < channels; ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    const T scale = gamma[c] * inv_std[c];
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t base = (n * g.channels + c) * g.spatial;
      for (std::size_t i = 0; i < g.spatial; ++i) {
        dgamma[c] += dy[base + i] * (x[base + i] - mean[c]) * inv_std[c];
        dbeta[c] += dy[base + i];
        dx[base + i] = dy[base + i] * scale;
      }
    }
  }
}

template <typename T>
void relu_forward(std::size_t n, const T* x, T* y) {
  const Index count = static_cast<Index>(n);
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < count; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(std::size_t n, const T* y, const T* dy, T* dx) {
  const Index count = static_cast<Index>(n);
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < count; ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void global_avg_pool_forward(const ChannelGeometry& g, const T* x, T* y) {
  const Index nc = static_cast<Index>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (Index idx = 0; idx < nc; ++idx) {
    const T* p = x + static_cast<std::size_t>(idx) * g.spatial;
    T sum = 0;
    for (std::size_t i = 0; i < g.spatial; ++i) sum += p[i];
    y[idx] = sum / static_cast<T>(g.spatial);
  }
}

template <typename T>
void global_avg_pool_backward(const ChannelGeometry& g, const T* dy, T* dx) {
  const Index nc = static_cast<Index>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (Index idx = 0; idx < nc; ++idx) {
    const T v = dy[idx] / static_cast<T>(g.spatial);
    T* p = dx + static_cast<std::size_t>(idx) * g.spatial;
    for (std::size_t i = 0; i < g.spatial; ++i) p[i] = v;
  }
}

template <typename T>
void global_max_pool_forward(const ChannelGeometry& g, const T* x, T* y, std::uint32_t* argmax) {
  const Index nc = static_cast<Index>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (Index idx = 0; idx < nc; ++idx) {
    const T* p = x + static_cast<std::size_t>(idx) * g.spatial;
    std::uint32_t best = 0;
    for (std::size_t i = 1; i < g.spatial; ++i)
      if (p[i] > p[best]) best = static_cast<std::uint32_t>(i);
    y[idx] = p[best];
    argmax[idx] = best;
  }
}

template <typename T>
void global_max_pool_backward(const ChannelGeometry& g, const std::uint32_t* argmax, const T* dy,
                              T* dx) {
  const Index nc = static_cast<Index>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (Index idx = 0; idx < nc; ++idx) {
    T* p = dx + static_cast<std::size_t>(idx) * g.spatial;
    std::memset(p, 0, g.spatial * sizeof(T));
    p[argmax[idx]] = dy[idx];
  }
}

template <typename T>
void max_pool2d_forward(const PoolGeometry& g, const T* x, T* y, std::uint32_t* argmax) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const Index nc = static_cast<Index>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (Index idx = 0; idx < nc; ++idx) {
    const T* plane = x + static_cast<std::size_t>(idx) * g.in_h * g.in_w;
    const std::size_t out_base = static_cast<std::size_t>(idx) * oh * ow;
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
        y[out_base + i * ow + j] = best;
        argmax[out_base + i * ow + j] = best_at;
      }
  }
}

template <typename T>
void max_pool2d_backward(const PoolGeometry& g, const std::uint32_t* argmax, const T* dy, T* dx) {
  const std::size_t plane = g.in_h * g.in_w, out_plane = g.out_h() * g.out_w();
  const Index nc = static_cast<Index>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (Index idx = 0; idx < nc; ++idx) {
    T* p = dx + static_cast<std::size_t>(idx) * plane;
    std::memset(p, 0, plane * sizeof(T));
    const std::size_t base = static_cast<std::size_t>(idx) * out_plane;
    for (std::size_t q = 0; q < out_plane; ++q) p[argmax[base + q]] += dy[base + q];
  }
}

template <typename T>
void linear_forward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w,
                    const T* bias, T* y) {
  for (std::size_t b = 0; b < batch; ++b) std::memcpy(y + b * out, bias, out * sizeof(T));
  gemm(CblasNoTrans, CblasTrans, batch, out, in, T(1), x, in, w, in, T(1), y, out);
}

template <typename T>
void linear_backward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w,
                     const T* dy, T* dx, T* dw, T* dbias) {
  if (dx != nullptr) {
    gemm(CblasNoTrans, CblasNoTrans, batch, in, out, T(1), dy, out, w, in, T(0), dx, in);
  }
  if (dw == nullptr) return;
  gemm(CblasTrans, CblasNoTrans, out, in, batch, T(1), dy, out, x, in, T(1), dw, in);
  for (std::size_t o = 0; o < out; ++o) {
    T sum = 0;
    for (std::size_t b = 0; b < batch; ++b) sum += dy[b * out + o];
    dbias[o] += sum;
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

}  // namespace parallel
}  // namespace engraf::kernels
