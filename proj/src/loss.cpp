#include "engraf/loss.hpp"

#include <algorithm>
#include <cmath>

#include "engraf/error.hpp"

namespace engraf {

template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const ClassId> labels, Tensor<T>* grad) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(0) == 0) {
    throw Error(ErrorKind::ShapeMismatch, "logits " + shape_string(logits.shape()) + " do not match " +
                                              std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  for (const T v : logits.values()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteInput, "logits contain a non-finite value");
  }
  if (grad != nullptr) *grad = Tensor<T>(logits.shape());

  double sum = 0.0;
  std::vector<double> e(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const ClassId y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= n) {
      throw Error(ErrorKind::LabelOutOfRange,
                  "label " + std::to_string(y) + " outside [0, " + std::to_string(n) + ")");
    }
    const T* row = logits.data() + r * n;
    const double m = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      e[c] = std::exp(static_cast<double>(row[c]) - m);
      z += e[c];
    }
    sum += std::log(z) - (static_cast<double>(row[y]) - m);
    if (grad != nullptr) {
      T* g = grad->data() + r * n;
      for (std::size_t c = 0; c < n; ++c) {
        const double p = e[c] / z - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0);
        g[c] = static_cast<T>(p / static_cast<double>(rows));
      }
    }
  }
  return sum / static_cast<double>(rows);
}

template <typename T>
LossBreakdown total_loss(const HeadLogits<T>& z, Variant variant, std::span<const ClassId> fine,
                         std::span<const ClassId> coarse, HeadGrads<T>* grads) {
  const auto expected = heads_for(variant);
  const auto present = z.present();
  if (present != expected) {
    for (auto h : expected) {
      if (!z.has(h)) {
        throw Error(ErrorKind::MissingHead, "variant " + std::string(to_string(variant)) + " needs head " +
                                                std::string(to_string(h)));
      }
    }
    for (auto h : present) {
      if (std::find(expected.begin(), expected.end(), h) == expected.end()) {
        throw Error(ErrorKind::MissingHead, "head " + std::string(to_string(h)) + " does not belong to variant " +
                                                std::string(to_string(variant)));
      }
    }
  }
  LossBreakdown out;
  if (grads != nullptr) *grads = HeadGrads<T>{};
  for (auto h : expected) {
    const auto i = static_cast<std::size_t>(h);
    Tensor<T>* g = grads != nullptr ? &(*grads)[i].emplace() : nullptr;
    const double l = softmax_cross_entropy(z.at(h), head_is_fine(h) ? fine : coarse, g);
    out.per_head[h] = l;
    out.total += l;
  }
  return out;
}

template double softmax_cross_entropy(const Tensor<float>&, std::span<const ClassId>, Tensor<float>*);
template double softmax_cross_entropy(const Tensor<double>&, std::span<const ClassId>, Tensor<double>*);
template LossBreakdown total_loss(const HeadLogits<float>&, Variant, std::span<const ClassId>,
                                  std::span<const ClassId>, HeadGrads<float>*);
template LossBreakdown total_loss(const HeadLogits<double>&, Variant, std::span<const ClassId>,
                                  std::span<const ClassId>, HeadGrads<double>*);

}  // namespace engraf
