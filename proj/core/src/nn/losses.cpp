#include "basup/nn/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace basup::nn {

namespace {

void check_labels(int n, int c, std::span<const int> labels) {
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("loss: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(n));
  }
  for (int l : labels) {
    if (l < 0 || l >= c) throw std::invalid_argument("loss: label " + std::to_string(l) + " out of range");
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  Tensor<T> p(logits.n(), logits.c(), logits.h(), logits.w());
  const std::size_t pl = logits.plane();
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t i = 0; i < pl; ++i) {
      T mx = logits.channel(n, 0)[i];
      for (int c = 1; c < logits.c(); ++c) mx = std::max(mx, logits.channel(n, c)[i]);
      T sum{0};
      for (int c = 0; c < logits.c(); ++c) {
        const T e = std::exp(logits.channel(n, c)[i] - mx);
        p.channel(n, c)[i] = e;
        sum += e;
      }
      for (int c = 0; c < logits.c(); ++c) p.channel(n, c)[i] /= sum;
    }
  }
  return p;
}

template <typename T>
LossGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  check_labels(logits.n(), logits.c(), labels);
  if (logits.plane() != 1) throw std::invalid_argument("softmax_cross_entropy: expected (n,c,1,1) logits");
  LossGrad<T> out;
  out.grad = softmax_channels(logits);
  const T inv_n = T{1} / static_cast<T>(logits.n());
  double total = 0.0;
  for (int n = 0; n < logits.n(); ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    total -= std::log(std::max<double>(out.grad.at(n, y, 0, 0), 1e-30));
    out.grad.at(n, y, 0, 0) -= T{1};
    for (int c = 0; c < logits.c(); ++c) out.grad.at(n, c, 0, 0) *= inv_n;
  }
  out.value = static_cast<T>(total / logits.n());
  return out;
}

template <typename T>
LossGrad<T> multilabel_soft_margin(const Tensor<T>& logits, std::span<const int> labels) {
  check_labels(logits.n(), logits.c(), labels);
  if (logits.plane() != 1) throw std::invalid_argument("multilabel_soft_margin: expected (n,c,1,1) logits");
  LossGrad<T> out;
  out.grad = Tensor<T>(logits.n(), logits.c(), 1, 1);
  const T scale = T{1} / static_cast<T>(logits.n() * logits.c());
  double total = 0.0;
  for (int n = 0; n < logits.n(); ++n) {
    for (int c = 0; c < logits.c(); ++c) {
      const T x = logits.at(n, c, 0, 0);
      const T y = labels[static_cast<std::size_t>(n)] == c ? T{1} : T{0};
      // log(1 + exp(-|x|)) keeps both branches finite.
      const T softplus_neg_abs = std::log1p(std::exp(-std::abs(x)));
      const T log_sig = std::min(x, T{0}) - softplus_neg_abs;    // log sigmoid(x)
      const T log_1m_sig = std::min(-x, T{0}) - softplus_neg_abs;  // log sigmoid(-x)
      total -= static_cast<double>(y * log_sig + (T{1} - y) * log_1m_sig);
      const T sig = T{1} / (T{1} + std::exp(-x));
      out.grad.at(n, c, 0, 0) = (sig - y) * scale;
    }
  }
  out.value = static_cast<T>(total * static_cast<double>(scale));
  return out;
}

template <typename T>
LossGrad<T> pixel_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets, T positive_weight) {
  if (logits.c() != 2 || targets.c() != 1 || logits.n() != targets.n() || logits.h() != targets.h() ||
      logits.w() != targets.w()) {
    throw std::invalid_argument("pixel_cross_entropy: shape mismatch " + logits.shape_string() + " vs " +
                                targets.shape_string());
  }
  LossGrad<T> out;
  out.grad = softmax_channels(logits);
  const std::size_t pl = logits.plane();
  const T inv = T{1} / static_cast<T>(pl * static_cast<std::size_t>(logits.n()));
  double total = 0.0;
  for (int n = 0; n < logits.n(); ++n) {
    T* p0 = out.grad.channel(n, 0);
    T* p1 = out.grad.channel(n, 1);
    const T* t = targets.channel(n, 0);
    for (std::size_t i = 0; i < pl; ++i) {
      const bool pos = t[i] > T{0.5};
      const T w = pos ? positive_weight : T{1};
      total -= static_cast<double>(w) * std::log(std::max<double>(pos ? p1[i] : p0[i], 1e-30));
      if (pos) {
        p1[i] -= T{1};
      } else {
        p0[i] -= T{1};
      }
      p0[i] *= w * inv;
      p1[i] *= w * inv;
    }
  }
  out.value = static_cast<T>(total * static_cast<double>(inv));
  return out;
}

#define BASUP_INSTANTIATE(T)                                                              \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                  \
  template LossGrad<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);     \
  template LossGrad<T> multilabel_soft_margin(const Tensor<T>&, std::span<const int>);    \
  template LossGrad<T> pixel_cross_entropy(const Tensor<T>&, const Tensor<T>&, T);

BASUP_INSTANTIATE(float)
BASUP_INSTANTIATE(double)

#undef BASUP_INSTANTIATE

}  // namespace basup::nn
