#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "basup/nn/layers.hpp"

namespace basup::nn {

enum class BackboneKind { tiny_residual, residual_50 };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone(const std::string& name);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::tiny_residual;
  /// Channel width of the first stage; later stages double it.
  int width = 8;
  int in_channels = 3;
  int num_classes = 2;
};

/// 1x1 -> 3x3(stride) -> 1x1 bottleneck with a projection shortcut when the
/// shape changes. The last conv starts small so the block is close to the
/// identity at initialization, which keeps a deep stack trainable without
/// normalization layers.
template <typename T>
class BottleneckBlock final : public Layer<T> {
 public:
  BottleneckBlock(std::string name, int in_channels, int mid_channels, int out_channels, int stride, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache) override;
  void collect(std::vector<Parameter<T>*>& out) override;
  std::string name() const override { return name_; }
  int stride() const override { return stride_; }

 private:
  std::string name_;
  int stride_;
  Conv2d<T> reduce_;
  Conv2d<T> spatial_;
  Conv2d<T> expand_;
  std::unique_ptr<Conv2d<T>> proj_;
};

/// Convolutional backbone followed by a 1x1 conv emitting one evidence map
/// per class. Class scores are the global average of those maps, so the maps
/// are exactly the class activation maps.
template <typename T>
class ClassMapNet {
 public:
  ClassMapNet(const BackboneSpec& spec, std::uint64_t seed);

  /// Returns class maps (n, classes, h/stride, w/stride). Cache children are
  /// {backbone, head}.
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const;
  /// Backpropagates class-map gradients; returns the input gradient.
  Tensor<T> backward(const Tensor<T>& dmaps, const Cache<T>& cache);

  std::vector<Parameter<T>*> parameters();
  const BackboneSpec& spec() const { return spec_; }
  int stride() const { return backbone_.total_stride(); }

  Sequential<T>& backbone() { return backbone_; }
  const Sequential<T>& backbone() const { return backbone_; }
  Conv2d<T>& head() { return head_; }
  const Conv2d<T>& head() const { return head_; }

 private:
  BackboneSpec spec_;
  Sequential<T> backbone_;
  Conv2d<T> head_;
};

/// Four-level encoder-decoder with skip connections and a two-class head.
template <typename T>
class UNet {
 public:
  UNet(int base_width, std::uint64_t seed, int in_channels = 3);

  /// Returns per-pixel logits (n, 2, h, w); h and w must be multiples of 8.
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const;
  Tensor<T> backward(const Tensor<T>& dlogits, const Cache<T>& cache);

  std::vector<Parameter<T>*> parameters();
  int base_width() const { return width_; }
  static constexpr int kDivisor = 8;

 private:
  static Sequential<T> double_conv(const std::string& name, int in, int out, Rng& rng, bool standardize = false);

  int width_;
  Sequential<T> enc1_, enc2_, enc3_, bottleneck_, dec3_, dec2_, dec1_;
  MaxPool2<T> pool_;
  Conv2d<T> head_;
};

}  // namespace basup::nn
