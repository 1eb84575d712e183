#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "engraf/kernels.hpp"

using namespace engraf::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol = 1e-10) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "index " << i;
}

struct ConvCase {
  std::size_t batch, cin, h, w, cout, k, stride, pad;
};

class ConvKernels : public ::testing::TestWithParam<ConvCase> {};

}  // namespace

TEST_P(ConvKernels, ParallelMatchesReference) {
  const auto p = GetParam();
  ConvGeometry g{p.batch, p.cin, p.h, p.w, p.cout, p.k, p.stride, p.pad};
  const auto x = random_vec(g.input_size(), 1);
  const auto w = random_vec(g.weight_size(), 2);
  const auto dy = random_vec(g.output_size(), 3);

  std::vector<double> y_ref(g.output_size()), y_par(g.output_size(), 7.0);
  reference::conv2d_forward(g, x.data(), w.data(), y_ref.data());
  parallel::conv2d_forward(g, x.data(), w.data(), y_par.data());
  expect_close(y_ref, y_par);

  std::vector<double> dx_ref(x.size()), dx_par(x.size(), 7.0), dw_ref(w.size(), 0.5), dw_par(w.size(), 0.5);
  reference::conv2d_backward(g, x.data(), w.data(), dy.data(), dx_ref.data(), dw_ref.data());
  parallel::conv2d_backward(g, x.data(), w.data(), dy.data(), dx_par.data(), dw_par.data());
  expect_close(dx_ref, dx_par);
  expect_close(dw_ref, dw_par);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvKernels,
                         ::testing::Values(ConvCase{2, 3, 8, 8, 4, 3, 1, 1}, ConvCase{3, 4, 9, 7, 6, 3, 2, 1},
                                           ConvCase{2, 5, 8, 8, 3, 1, 2, 0}, ConvCase{1, 3, 17, 17, 8, 7, 2, 3},
                                           ConvCase{4, 8, 1, 1, 8, 3, 1, 1}));

TEST(Kernels, ConvForwardAgainstDirectSum) {
  ConvGeometry g{1, 1, 3, 3, 1, 3, 1, 1};
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9}, w{0, 0, 0, 0, 1, 1, 0, 0, 0};
  std::vector<double> y(9);
  reference::conv2d_forward(g, x.data(), w.data(), y.data());
  // y(i, j) = x(i, j) + x(i, j + 1), zero padded.
  EXPECT_EQ(y, (std::vector<double>{3, 5, 3, 9, 11, 6, 15, 17, 9}));
}

TEST(Kernels, ChannelKernelsMatch) {
  ChannelGeometry g{3, 5, 12};
  const auto x = random_vec(g.size(), 4);
  const auto dy = random_vec(g.size(), 5);
  const auto gamma = random_vec(5, 6), beta = random_vec(5, 7);

  std::vector<double> m_ref(5), v_ref(5), m_par(5), v_par(5);
  reference::channel_moments(g, x.data(), m_ref.data(), v_ref.data());
  parallel::channel_moments(g, x.data(), m_par.data(), v_par.data());
  expect_close(m_ref, m_par);
  expect_close(v_ref, v_par);

  std::vector<double> inv(5);
  for (int c = 0; c < 5; ++c) inv[c] = 1.0 / std::sqrt(v_ref[c] + 1e-5);
  std::vector<double> y_ref(g.size()), y_par(g.size());
  reference::batchnorm_apply(g, x.data(), m_ref.data(), inv.data(), gamma.data(), beta.data(), y_ref.data());
  parallel::batchnorm_apply(g, x.data(), m_ref.data(), inv.data(), gamma.data(), beta.data(), y_par.data());
  expect_close(y_ref, y_par);

  for (bool batch : {true, false}) {
    std::vector<double> dx_ref(g.size()), dx_par(g.size()), dg_ref(5, 1), dg_par(5, 1), db_ref(5, 2), db_par(5, 2);
    if (batch) {
      reference::batchnorm_backward_batch(g, x.data(), m_ref.data(), inv.data(), gamma.data(), dy.data(),
                                          dx_ref.data(), dg_ref.data(), db_ref.data());
      parallel::batchnorm_backward_batch(g, x.data(), m_ref.data(), inv.data(), gamma.data(), dy.data(),
                                         dx_par.data(), dg_par.data(), db_par.data());
    } else {
      reference::batchnorm_backward_fixed(g, x.data(), m_ref.data(), inv.data(), gamma.data(), dy.data(),
                                          dx_ref.data(), dg_ref.data(), db_ref.data());
      parallel::batchnorm_backward_fixed(g, x.data(), m_ref.data(), inv.data(), gamma.data(), dy.data(),
                                         dx_par.data(), dg_par.data(), db_par.data());
    }
    expect_close(dx_ref, dx_par);
    expect_close(dg_ref, dg_par);
    expect_close(db_ref, db_par);
  }

  std::vector<double> p_ref(15), p_par(15), dp_ref(g.size()), dp_par(g.size());
  reference::global_avg_pool_forward(g, x.data(), p_ref.data());
  parallel::global_avg_pool_forward(g, x.data(), p_par.data());
  expect_close(p_ref, p_par);
  reference::global_avg_pool_backward(g, dy.data(), dp_ref.data());
  parallel::global_avg_pool_backward(g, dy.data(), dp_par.data());
  expect_close(dp_ref, dp_par);

  std::vector<std::uint32_t> a_ref(15), a_par(15);
  reference::global_max_pool_forward(g, x.data(), p_ref.data(), a_ref.data());
  parallel::global_max_pool_forward(g, x.data(), p_par.data(), a_par.data());
  expect_close(p_ref, p_par, 0.0);
  EXPECT_EQ(a_ref, a_par);
  reference::global_max_pool_backward(g, a_ref.data(), dy.data(), dp_ref.data());
  parallel::global_max_pool_backward(g, a_par.data(), dy.data(), dp_par.data());
  expect_close(dp_ref, dp_par, 0.0);
}

TEST(Kernels, MaxPoolAndReluMatch) {
  PoolGeometry g{2, 3, 9, 8, 3, 2, 1};
  const auto x = random_vec(2 * 3 * 9 * 8, 8);
  const auto dy = random_vec(g.output_size(), 9);
  std::vector<double> y_ref(g.output_size()), y_par(g.output_size());
  std::vector<std::uint32_t> a_ref(g.output_size()), a_par(g.output_size());
  reference::max_pool2d_forward(g, x.data(), y_ref.data(), a_ref.data());
  parallel::max_pool2d_forward(g, x.data(), y_par.data(), a_par.data());
  expect_close(y_ref, y_par, 0.0);
  EXPECT_EQ(a_ref, a_par);
  std::vector<double> dx_ref(x.size()), dx_par(x.size(), 3.0);
  reference::max_pool2d_backward(g, a_ref.data(), dy.data(), dx_ref.data());
  parallel::max_pool2d_backward(g, a_par.data(), dy.data(), dx_par.data());
  expect_close(dx_ref, dx_par, 0.0);

  std::vector<double> r_ref(x.size()), r_par(x.size()), dr_ref(x.size()), dr_par(x.size());
  reference::relu_forward(x.size(), x.data(), r_ref.data());
  parallel::relu_forward(x.size(), x.data(), r_par.data());
  expect_close(r_ref, r_par, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(r_ref[i], std::max(x[i], 0.0));
  const auto d = random_vec(x.size(), 10);
  reference::relu_backward(x.size(), r_ref.data(), d.data(), dr_ref.data());
  parallel::relu_backward(x.size(), r_par.data(), d.data(), dr_par.data());
  expect_close(dr_ref, dr_par, 0.0);
}

TEST(Kernels, LinearMatches) {
  const std::size_t B = 5, in = 33, out = 7;
  const auto x = random_vec(B * in, 11), w = random_vec(out * in, 12), b = random_vec(out, 13),
             dy = random_vec(B * out, 14);
  std::vector<double> y_ref(B * out), y_par(B * out);
  reference::linear_forward(B, in, out, x.data(), w.data(), b.data(), y_ref.data());
  parallel::linear_forward(B, in, out, x.data(), w.data(), b.data(), y_par.data());
  expect_close(y_ref, y_par);
  std::vector<double> dx_ref(B * in), dx_par(B * in), dw_ref(out * in, 1), dw_par(out * in, 1), db_ref(out),
      db_par(out);
  reference::linear_backward(B, in, out, x.data(), w.data(), dy.data(), dx_ref.data(), dw_ref.data(), db_ref.data());
  parallel::linear_backward(B, in, out, x.data(), w.data(), dy.data(), dx_par.data(), dw_par.data(), db_par.data());
  expect_close(dx_ref, dx_par);
  expect_close(dw_ref, dw_par);
  expect_close(db_ref, db_par);
}

TEST(Kernels, FloatParallelMatchesReference) {
  ConvGeometry g{2, 16, 8, 8, 16, 3, 1, 1};
  const auto xd = random_vec(g.input_size(), 15), wd = random_vec(g.weight_size(), 16);
  const std::vector<float> x(xd.begin(), xd.end()), w(wd.begin(), wd.end());
  std::vector<float> y_ref(g.output_size()), y_par(g.output_size());
  reference::conv2d_forward(g, x.data(), w.data(), y_ref.data());
  parallel::conv2d_forward(g, x.data(), w.data(), y_par.data());
  for (std::size_t i = 0; i < y_ref.size(); ++i) ASSERT_NEAR(y_ref[i], y_par[i], 1e-4f);
}
