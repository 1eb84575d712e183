#include <gtest/gtest.h>

#include "gradcheck.hpp"

using namespace engraf;

namespace {

const std::vector<ClassId> kFine{1, 3}, kCoarse{0, 1};

}  // namespace

TEST(GradCheck, DoubleMatchesFiniteDifferences) {
  const Model<double> m(fixtures::micro_engraf_config(), 11);
  const auto x = fixtures::random_input<double>(2, 8, 12);
  const auto r = fixtures::check_gradients(m, x, kFine, kCoarse, 1e-4, 1e-6);
  EXPECT_GT(r.checked, 0.9 * static_cast<double>(param_count(m)));
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(GradCheck, ParallelBackendGradientsMatchReference) {
  const Model<double> m(fixtures::micro_engraf_config(), 13);
  const auto x = fixtures::random_input<double>(2, 8, 14);
  const auto ref = compute_gradients(m, x, kFine, kCoarse, kernels::Backend::reference);
  const auto par = compute_gradients(m, x, kFine, kCoarse, kernels::Backend::parallel);
  EXPECT_NEAR(ref.loss.total, par.loss.total, 1e-12);
  ASSERT_EQ(ref.trace.grads.size(), par.trace.grads.size());
  for (std::size_t i = 0; i < ref.trace.grads.size(); ++i)
    for (std::size_t k = 0; k < ref.trace.grads[i].size(); ++k)
      ASSERT_NEAR(ref.trace.grads[i][k], par.trace.grads[i][k], 1e-10) << m.parameters()[i]->name;
}

TEST(GradCheck, EveryParameterReceivesAGradient) {
  for (auto v : {Variant::resnet, Variant::two_branch, Variant::graft, Variant::engraf}) {
    auto cfg = fixtures::micro_engraf_config();
    cfg.variant = v;
    if (v == Variant::resnet || v == Variant::two_branch) cfg.graft_size = 0;
    const Model<double> m(cfg, 1);
    const auto g = compute_gradients(m, fixtures::random_input<double>(2, 8, 2), kFine, kCoarse,
                                     kernels::Backend::reference);
    const auto params = m.parameters();
    ASSERT_EQ(g.trace.grads.size(), params.size()) << to_string(v);
    for (std::size_t i = 0; i < params.size(); ++i)
      EXPECT_EQ(g.trace.grads[i].shape(), params[i]->value.shape()) << to_string(v) << " " << params[i]->name;
  }
}
