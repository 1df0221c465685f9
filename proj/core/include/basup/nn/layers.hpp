#pragma once

#include <memory>
#include <string>
#include <vector>

#include "basup/nn/tensor.hpp"
#include "basup/rng.hpp"

namespace basup::nn {

/// Per-call activation record. Layers are stateless between calls so that a
/// network can be evaluated several times (full image, tiles, frame pairs)
/// before a single backward pass over each record.
template <typename T>
struct Cache {
  std::vector<Tensor<T>> tensors;
  std::vector<Cache<T>> children;
  std::vector<int> indices;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  /// `cache` may be null for inference-only calls.
  virtual Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const = 0;
  /// Accumulates parameter gradients and returns the input gradient.
  virtual Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache) = 0;
  virtual void collect(std::vector<Parameter<T>*>& /*out*/) {}
  virtual std::string name() const = 0;
  /// Spatial downsampling factor of this layer.
  virtual int stride() const { return 1; }
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding,
         Rng& rng, double init_gain = 1.0);

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache) override;
  void collect(std::vector<Parameter<T>*>& out) override;
  std::string name() const override { return name_; }
  int stride() const override { return stride_; }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& weight() const { return weight_; }
  const Parameter<T>& bias() const { return bias_; }

 private:
  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  std::string name_;
  int in_;
  int out_;
  int k_;
  int stride_;
  int pad_;
  Parameter<T> weight_;  // (out, in, k, k)
  Parameter<T> bias_;    // (1, out, 1, 1)
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  explicit Relu(std::string name = "relu") : name_(std::move(name)) {}
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
};

/// Fixed affine map (x - center) / scale; inputs in [0, 1] come out roughly
/// zero-centered with unit spread.
template <typename T>
class Standardize final : public Layer<T> {
 public:
  explicit Standardize(std::string name = "standardize", double center = 0.5, double scale = 0.25)
      : name_(std::move(name)), center_(center), scale_(scale) {}
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  double center_;
  double scale_;
};

/// conv3x3(stride) -> relu -> conv3x3 -> (+ shortcut) -> relu. The shortcut is
/// a strided 1x1 projection when the shape changes.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(std::string name, int in_channels, int out_channels, int stride, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache) override;
  void collect(std::vector<Parameter<T>*>& out) override;
  std::string name() const override { return name_; }
  int stride() const override { return stride_; }

 private:
  std::string name_;
  int stride_;
  Conv2d<T> conv1_;
  Conv2d<T> conv2_;
  std::unique_ptr<Conv2d<T>> proj_;
};

template <typename T>
class MaxPool2 final : public Layer<T> {
 public:
  explicit MaxPool2(std::string name = "pool") : name_(std::move(name)) {}
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache) override;
  std::string name() const override { return name_; }
  int stride() const override { return 2; }

 private:
  std::string name_;
};

/// Chain of layers. Records every intermediate output so gradients can be
/// read off at any layer boundary.
template <typename T>
class Sequential {
 public:
  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache);
  /// Backpropagates from the sequence output down to the output of layer
  /// `index`, returning the gradient there (parameter gradients above that
  /// layer are accumulated too).
  Tensor<T> backward_to(const Tensor<T>& dy, const Cache<T>& cache, std::size_t index);
  /// Output of layer `index` recorded in `cache`.
  static const Tensor<T>& output_of(const Cache<T>& cache, std::size_t index) { return cache.tensors.at(index); }

  void collect(std::vector<Parameter<T>*>& out);
  std::size_t size() const { return layers_.size(); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }
  /// Index of the layer named `name`, or size() when absent.
  std::size_t find(const std::string& name) const;
  int total_stride() const;

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Stateless helpers -----------------------------------------------------------

/// (n, c, h, w) -> (n, c, 1, 1).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, int h, int w);

/// Nearest-neighbour 2x upsampling and its adjoint.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits a channel-concatenated gradient into the parts for `a` (first
/// `a_channels`) and `b`.
template <typename T>
void split_channels(const Tensor<T>& d, int a_channels, Tensor<T>& da, Tensor<T>& db);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
/// dy masked where the forward output was not positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace basup::nn
