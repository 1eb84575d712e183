#pragma once

#include <map>
#include <span>
#include <vector>

#include "engraf/model.hpp"
#include "engraf/taxonomy.hpp"

namespace engraf {

/// Mean softmax cross-entropy over the batch with row-max stabilization.
/// When `grad` is given it receives (softmax - onehot) / B with the logits' shape.
/// Errors: LabelOutOfRange, NonFiniteInput, ShapeMismatch.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const ClassId> labels, Tensor<T>* grad = nullptr);

struct LossBreakdown {
  std::map<Head, double> per_head;
  double total = 0.0;
};

/// Unweighted sum of one cross-entropy term per head of `variant`: fine labels
/// for fc0, fc1 and fc3, coarse labels for fc2 and fc4. The heads present in
/// `z` must be exactly those of the variant (MissingHead otherwise).
template <typename T>
LossBreakdown total_loss(const HeadLogits<T>& z, Variant variant, std::span<const ClassId> fine,
                         std::span<const ClassId> coarse, HeadGrads<T>* grads = nullptr);

}  // namespace engraf
