#pragma once

// Central-difference check of the analytic total-loss gradient. Coordinates
// whose +h / -h perturbation flips a ReLU or max-pool decision are skipped:
// the loss is not differentiable across such a kink. The numeric side always
// runs in double on a copy of the same weights, so a float model is checked
// against differences free of float cancellation noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "engraf/train.hpp"

namespace engraf::fixtures {

inline EngrafConfig micro_engraf_config() {
  EngrafConfig c;
  c.variant = Variant::engraf;
  c.graft_size = 2;
  c.num_fine = 4;
  c.num_coarse = 2;
  c.input_size = 8;
  c.stage_blocks = {1, 1, 1};
  c.stage_widths = {4, 8, 8};
  return c;
}

template <typename T>
Tensor<T> random_input(std::size_t batch, std::size_t size, std::uint64_t seed) {
  Tensor<T> x({batch, 3, size, size});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : x.values()) v = static_cast<T>(dist(rng));
  return x;
}

template <typename T>
void append_decisions(const nn::ReluCache<T>& c, std::vector<std::uint32_t>& sig) {
  for (const T v : c.output.values()) sig.push_back(v > T(0));
}

template <typename T>
void append_decisions(const nn::ConvUnitCache<T>& c, std::vector<std::uint32_t>& sig) {
  append_decisions(c.relu, sig);
}

template <typename T>
void append_decisions(const nn::StageCache<T>& s, std::vector<std::uint32_t>& sig) {
  for (const auto& b : s.blocks) {
    for (const auto& u : b.units) append_decisions(u, sig);
    if (b.shortcut) append_decisions(*b.shortcut, sig);
    append_decisions(b.out, sig);
  }
}

/// Every ReLU on/off state and pooling argmax of one forward pass.
template <typename T>
std::vector<std::uint32_t> decision_signature(const ForwardCache<T>& c) {
  std::vector<std::uint32_t> sig;
  append_decisions(c.stem, sig);
  sig.insert(sig.end(), c.stem_pool.argmax.begin(), c.stem_pool.argmax.end());
  for (const auto& s : c.trunk) append_decisions(s, sig);
  for (const auto& b : c.branches) {
    if (!b) continue;
    append_decisions(b->mid, sig);
    append_decisions(b->last, sig);
    for (const auto& g : b->graft) append_decisions(g, sig);
    sig.insert(sig.end(), b->graft_pool.argmax.begin(), b->graft_pool.argmax.end());
  }
  return sig;
}

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

/// rel = |analytic - numeric| / max(|analytic|, |numeric|, floor)
template <typename T>
GradCheckReport check_gradients(const Model<T>& base, const Tensor<T>& x, const std::vector<ClassId>& fine,
                                const std::vector<ClassId>& coarse, double step, double floor,
                                kernels::Backend backend = kernels::Backend::reference) {
  const auto analytic = compute_gradients(base, x, fine, coarse, backend);
  Model<double> model = base.template cast<double>();
  const Tensor<double> xd = x.template cast<double>();
  auto params = model.parameters();

  auto probe = [&](std::vector<std::uint32_t>& sig) {
    nn::Trace<double> trace;
    trace.accumulate_param_grads = false;
    const nn::Context<double> ctx{nn::Mode::train, backend, &trace};
    ForwardCache<double> cache;
    const auto z = model.forward(xd, ctx, &cache);
    sig = decision_signature(cache);
    return total_loss(z, model.config().variant, fine, coarse).total;
  };

  std::vector<std::uint32_t> sig0, sig_plus, sig_minus;
  probe(sig0);
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i]->value;
    const Tensor<T>* g = i < analytic.trace.grads.size() ? &analytic.trace.grads[i] : nullptr;
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double original = value[k];
      value[k] = original + step;
      const double up = probe(sig_plus);
      value[k] = original - step;
      const double down = probe(sig_minus);
      value[k] = original;
      if (sig_plus != sig0 || sig_minus != sig0) {
        ++report.skipped_kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double a = g != nullptr && !g->empty() ? static_cast<double>((*g)[k]) : 0.0;
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = params[i]->name + "[" + std::to_string(k) + "] analytic " + std::to_string(a) + " numeric " +
                       std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace engraf::fixtures
