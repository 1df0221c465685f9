#include "basup/nn/models.hpp"

#include <stdexcept>

#include "basup/error.hpp"

namespace basup::nn {

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::tiny_residual ? "tiny_residual" : "residual_50";
}

BackboneKind parse_backbone(const std::string& name) {
  if (name == "tiny_residual") return BackboneKind::tiny_residual;
  if (name == "residual_50") return BackboneKind::residual_50;
  throw ConfigError("unknown backbone '" + name + "'");
}

// BottleneckBlock -------------------------------------------------------------

template <typename T>
BottleneckBlock<T>::BottleneckBlock(std::string name, int in_channels, int mid_channels, int out_channels,
                                    int stride, Rng& rng)
    : name_(std::move(name)), stride_(stride),
      reduce_(name_ + ".reduce", in_channels, mid_channels, 1, 1, 0, rng),
      spatial_(name_ + ".spatial", mid_channels, mid_channels, 3, stride, 1, rng),
      expand_(name_ + ".expand", mid_channels, out_channels, 1, 1, 0, rng, 0.1) {
  if (in_channels != out_channels || stride != 1) {
    proj_ = std::make_unique<Conv2d<T>>(name_ + ".proj", in_channels, out_channels, 1, stride, 0, rng, 0.5);
  }
}

template <typename T>
Tensor<T> BottleneckBlock<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (cache) {
    cache->children.assign(4, Cache<T>{});
    cache->tensors.clear();
  }
  auto child = [&](int i) { return cache ? &cache->children[static_cast<std::size_t>(i)] : nullptr; };
  Tensor<T> a1 = relu(reduce_.forward(x, child(0)));
  Tensor<T> a2 = relu(spatial_.forward(a1, child(1)));
  Tensor<T> y = expand_.forward(a2, child(2));
  add_inplace(y, proj_ ? proj_->forward(x, child(3)) : x);
  y = relu(y);
  if (cache) {
    cache->tensors.push_back(std::move(a1));
    cache->tensors.push_back(std::move(a2));
    cache->tensors.push_back(y);
  }
  return y;
}

template <typename T>
Tensor<T> BottleneckBlock<T>::backward(const Tensor<T>& dy, const Cache<T>& cache) {
  const Tensor<T> dsum = relu_backward(dy, cache.tensors.at(2));
  Tensor<T> d2 = relu_backward(expand_.backward(dsum, cache.children.at(2)), cache.tensors.at(1));
  Tensor<T> d1 = relu_backward(spatial_.backward(d2, cache.children.at(1)), cache.tensors.at(0));
  Tensor<T> dx = reduce_.backward(d1, cache.children.at(0));
  add_inplace(dx, proj_ ? proj_->backward(dsum, cache.children.at(3)) : dsum);
  return dx;
}

template <typename T>
void BottleneckBlock<T>::collect(std::vector<Parameter<T>*>& out) {
  reduce_.collect(out);
  spatial_.collect(out);
  expand_.collect(out);
  if (proj_) proj_->collect(out);
}

// ClassMapNet -----------------------------------------------------------------

namespace {

template <typename T>
Conv2d<T> make_head(const BackboneSpec& spec, Rng& rng) {
  int features = 0;
  if (spec.kind == BackboneKind::tiny_residual) {
    features = spec.width * 4;
  } else {
    features = spec.width * 32;
  }
  return Conv2d<T>("head", features, spec.num_classes, 1, 1, 0, rng, 0.5);
}

}  // namespace

template <typename T>
ClassMapNet<T>::ClassMapNet(const BackboneSpec& spec, std::uint64_t seed)
    : spec_(spec), head_([&] {
        Rng head_rng(derive_seed(seed, "head"));
        return make_head<T>(spec, head_rng);
      }()) {
  if (spec.num_classes < 2) throw ConfigError("ClassMapNet: need at least 2 classes");
  if (spec.width < 1) throw ConfigError("ClassMapNet: width must be positive");
  Rng rng(derive_seed(seed, "backbone"));
  const int w = spec.width;
  backbone_.add(std::make_unique<Standardize<T>>("input_norm"));
  if (spec.kind == BackboneKind::tiny_residual) {
    backbone_.add(std::make_unique<Conv2d<T>>("stem", spec.in_channels, w, 3, 2, 1, rng));
    backbone_.add(std::make_unique<Relu<T>>("stem_relu"));
    backbone_.add(std::make_unique<ResidualBlock<T>>("block1", w, w, 1, rng));
    backbone_.add(std::make_unique<ResidualBlock<T>>("block2", w, 2 * w, 2, rng));
    backbone_.add(std::make_unique<ResidualBlock<T>>("block3", 2 * w, 2 * w, 1, rng));
    backbone_.add(std::make_unique<ResidualBlock<T>>("block4", 2 * w, 4 * w, 2, rng));
    backbone_.add(std::make_unique<ResidualBlock<T>>("block5", 4 * w, 4 * w, 1, rng));
  } else {
    // Bottleneck stages of depth (3, 4, 6, 3) after a strided stem and pool.
    backbone_.add(std::make_unique<Conv2d<T>>("stem", spec.in_channels, w, 7, 2, 3, rng));
    backbone_.add(std::make_unique<Relu<T>>("stem_relu"));
    backbone_.add(std::make_unique<MaxPool2<T>>("stem_pool"));
    const int depths[4] = {3, 4, 6, 3};
    int in = w;
    for (int stage = 0; stage < 4; ++stage) {
      const int mid = w << stage;
      const int out = mid * 4;
      for (int b = 0; b < depths[stage]; ++b) {
        const int stride = (b == 0 && stage > 0) ? 2 : 1;
        backbone_.add(std::make_unique<BottleneckBlock<T>>(
            "stage" + std::to_string(stage + 1) + "." + std::to_string(b), in, mid, out, stride, rng));
        in = out;
      }
    }
  }
}

template <typename T>
Tensor<T> ClassMapNet<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (cache) cache->children.assign(2, Cache<T>{});
  Tensor<T> f = backbone_.forward(x, cache ? &cache->children[0] : nullptr);
  return head_.forward(f, cache ? &cache->children[1] : nullptr);
}

template <typename T>
Tensor<T> ClassMapNet<T>::backward(const Tensor<T>& dmaps, const Cache<T>& cache) {
  Tensor<T> df = head_.backward(dmaps, cache.children.at(1));
  return backbone_.backward(df, cache.children.at(0));
}

template <typename T>
std::vector<Parameter<T>*> ClassMapNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  backbone_.collect(out);
  head_.collect(out);
  return out;
}

// UNet ------------------------------------------------------------------------

template <typename T>
Sequential<T> UNet<T>::double_conv(const std::string& name, int in, int out, Rng& rng, bool standardize) {
  Sequential<T> s;
  if (standardize) s.add(std::make_unique<Standardize<T>>("input_norm"));
  s.add(std::make_unique<Conv2d<T>>(name + ".conv1", in, out, 3, 1, 1, rng));
  s.add(std::make_unique<Relu<T>>(name + ".relu1"));
  s.add(std::make_unique<Conv2d<T>>(name + ".conv2", out, out, 3, 1, 1, rng));
  s.add(std::make_unique<Relu<T>>(name + ".relu2"));
  return s;
}

template <typename T>
UNet<T>::UNet(int base_width, std::uint64_t seed, int in_channels)
    : width_(base_width), head_([&] {
        Rng r(derive_seed(seed, "head"));
        return Conv2d<T>("head", base_width, 2, 1, 1, 0, r, 0.5);
      }()) {
  if (base_width < 1) throw ConfigError("UNet: width must be positive");
  Rng rng(derive_seed(seed, "unet"));
  const int c = base_width;
  enc1_ = double_conv("enc1", in_channels, c, rng, true);
  enc2_ = double_conv("enc2", c, 2 * c, rng);
  enc3_ = double_conv("enc3", 2 * c, 4 * c, rng);
  bottleneck_ = double_conv("bottleneck", 4 * c, 8 * c, rng);
  dec3_ = double_conv("dec3", 8 * c + 4 * c, 4 * c, rng);
  dec2_ = double_conv("dec2", 4 * c + 2 * c, 2 * c, rng);
  dec1_ = double_conv("dec1", 2 * c + c, c, rng);
}

namespace {
enum UNetSlot { kEnc1, kPool1, kEnc2, kPool2, kEnc3, kPool3, kBottleneck, kDec3, kDec2, kDec1, kHead, kSlots };
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (x.h() % kDivisor || x.w() % kDivisor) {
    throw ShapeError("UNet: input " + x.shape_string() + " not divisible by 8");
  }
  if (cache) cache->children.assign(kSlots, Cache<T>{});
  auto slot = [&](int i) { return cache ? &cache->children[static_cast<std::size_t>(i)] : nullptr; };
  Tensor<T> e1 = enc1_.forward(x, slot(kEnc1));
  Tensor<T> e2 = enc2_.forward(pool_.forward(e1, slot(kPool1)), slot(kEnc2));
  Tensor<T> e3 = enc3_.forward(pool_.forward(e2, slot(kPool2)), slot(kEnc3));
  Tensor<T> b = bottleneck_.forward(pool_.forward(e3, slot(kPool3)), slot(kBottleneck));
  Tensor<T> d3 = dec3_.forward(concat_channels(upsample2(b), e3), slot(kDec3));
  Tensor<T> d2 = dec2_.forward(concat_channels(upsample2(d3), e2), slot(kDec2));
  Tensor<T> d1 = dec1_.forward(concat_channels(upsample2(d2), e1), slot(kDec1));
  return head_.forward(d1, slot(kHead));
}

template <typename T>
Tensor<T> UNet<T>::backward(const Tensor<T>& dlogits, const Cache<T>& cache) {
  const int c = width_;
  auto at = [&](int i) -> const Cache<T>& { return cache.children.at(static_cast<std::size_t>(i)); };
  Tensor<T> up, skip1, skip2, skip3;
  Tensor<T> g = head_.backward(dlogits, at(kHead));
  split_channels(dec1_.backward(g, at(kDec1)), 2 * c, up, skip1);
  split_channels(dec2_.backward(upsample2_backward(up), at(kDec2)), 4 * c, up, skip2);
  split_channels(dec3_.backward(upsample2_backward(up), at(kDec3)), 8 * c, up, skip3);
  g = pool_.backward(bottleneck_.backward(upsample2_backward(up), at(kBottleneck)), at(kPool3));
  add_inplace(g, skip3);
  g = pool_.backward(enc3_.backward(g, at(kEnc3)), at(kPool2));
  add_inplace(g, skip2);
  g = pool_.backward(enc2_.backward(g, at(kEnc2)), at(kPool1));
  add_inplace(g, skip1);
  return enc1_.backward(g, at(kEnc1));
}

template <typename T>
std::vector<Parameter<T>*> UNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto* s : {&enc1_, &enc2_, &enc3_, &bottleneck_, &dec3_, &dec2_, &dec1_}) s->collect(out);
  head_.collect(out);
  return out;
}

template class BottleneckBlock<float>;
template class BottleneckBlock<double>;
template class ClassMapNet<float>;
template class ClassMapNet<double>;
template class UNet<float>;
template class UNet<double>;

}  // namespace basup::nn
