#pragma once

#include <span>

#include "basup/nn/tensor.hpp"

namespace basup::nn {

template <typename T>
struct LossGrad {
  T value{0};
  Tensor<T> grad;
};

/// Mean categorical cross-entropy over the batch. `logits` is (n, c, 1, 1).
template <typename T>
LossGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Multi-label soft margin with one-hot targets: each class is an independent
/// sigmoid; the loss is averaged over classes and then over the batch.
template <typename T>
LossGrad<T> multilabel_soft_margin(const Tensor<T>& logits, std::span<const int> labels);

/// Mean per-pixel two-class cross-entropy. `targets` is (n, 1, h, w) with 0/1
/// entries; `positive_weight` scales the loss on target-1 pixels.
template <typename T>
LossGrad<T> pixel_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets, T positive_weight = T{1});

/// Row-wise softmax of (n, c, h, w) logits over the channel axis.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits);

}  // namespace basup::nn
