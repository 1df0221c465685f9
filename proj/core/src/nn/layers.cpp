#include "basup/nn/layers.hpp"

#include <cmath>

#include <Eigen/Core>

namespace basup::nn {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int pad, int oh, int ow, T* cols) {
  const std::size_t opl = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>((c * k + ky) * k + kx)) * opl;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* out = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* xr = xc + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            const int lo = std::max(0, pad - kx);
            const int hi = std::min(ow, w + pad - kx);
            for (int ox = 0; ox < lo; ++ox) out[ox] = T{0};
            for (int ox = lo; ox < hi; ++ox) out[ox] = xr[ox - pad + kx];
            for (int ox = std::max(hi, lo); ox < ow; ++ox) out[ox] = T{0};
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              out[ox] = (ix >= 0 && ix < w) ? xr[ix] : T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int channels, int h, int w, int k, int stride, int pad, int oh, int ow, T* dx) {
  const std::size_t opl = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    T* dc = dx + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>((c * k + ky) * k + kx)) * opl;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dr = dc + static_cast<std::size_t>(iy) * w;
          const T* in = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dr[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// Conv2d ----------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                  int padding, Rng& rng, double init_gain)
    : name_(std::move(name)), in_(in_channels), out_(out_channels), k_(kernel), stride_(stride),
      pad_(padding) {
  weight_.name = name_ + ".weight";
  weight_.value = Tensor<T>(out_, in_, k_, k_);
  weight_.grad = Tensor<T>(out_, in_, k_, k_);
  bias_.name = name_ + ".bias";
  bias_.value = Tensor<T>(1, out_, 1, 1);
  bias_.grad = Tensor<T>(1, out_, 1, 1);
  const double fan_in = static_cast<double>(in_) * k_ * k_;
  const double std = init_gain * std::sqrt(2.0 / fan_in);
  for (auto& v : weight_.value.storage()) v = static_cast<T>(rng.normal(0.0, std));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (x.c() != in_) {
    throw std::invalid_argument(name_ + ": expected " + std::to_string(in_) + " channels, got " + x.shape_string());
  }
  const int oh = out_size(x.h());
  const int ow = out_size(x.w());
  const int kdim = in_ * k_ * k_;
  const std::size_t opl = static_cast<std::size_t>(oh) * ow;
  Tensor<T> y(x.n(), out_, oh, ow);
  CMapRM<T> wmat(weight_.value.data(), out_, kdim);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_.value.data(), out_);
  std::vector<T> cols(pointwise() ? 0 : static_cast<std::size_t>(kdim) * opl);
  for (int n = 0; n < x.n(); ++n) {
    MapRM<T> ymat(y.sample(n), out_, static_cast<Eigen::Index>(opl));
    if (pointwise()) {
      ymat.noalias() = wmat * CMapRM<T>(x.sample(n), in_, static_cast<Eigen::Index>(opl));
    } else {
      im2col(x.sample(n), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, cols.data());
      ymat.noalias() = wmat * CMapRM<T>(cols.data(), kdim, static_cast<Eigen::Index>(opl));
    }
    ymat.colwise() += b;
  }
  if (cache) {
    cache->tensors.clear();
    cache->tensors.push_back(x);
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, const Cache<T>& cache) {
  const Tensor<T>& x = cache.tensors.at(0);
  const int oh = dy.h();
  const int ow = dy.w();
  const int kdim = in_ * k_ * k_;
  const std::size_t opl = static_cast<std::size_t>(oh) * ow;
  Tensor<T> dx(x.n(), x.c(), x.h(), x.w());
  CMapRM<T> wmat(weight_.value.data(), out_, kdim);
  MapRM<T> dw(weight_.grad.data(), out_, kdim);
  std::vector<T> cols(pointwise() ? 0 : static_cast<std::size_t>(kdim) * opl);
  std::vector<T> dcols(pointwise() ? 0 : static_cast<std::size_t>(kdim) * opl);
  for (int n = 0; n < x.n(); ++n) {
    CMapRM<T> dymat(dy.sample(n), out_, static_cast<Eigen::Index>(opl));
    // Plain ordered sums: Eigen's vectorized reduction peels to the buffer's
    // alignment, which made repeated runs differ in the last bit.
    for (int o = 0; o < out_; ++o) {
      const T* row = dy.sample(n) + static_cast<std::size_t>(o) * opl;
      T s{0};
      for (std::size_t i = 0; i < opl; ++i) s += row[i];
      bias_.grad[static_cast<std::size_t>(o)] += s;
    }
    if (pointwise()) {
      CMapRM<T> xmat(x.sample(n), in_, static_cast<Eigen::Index>(opl));
      dw.noalias() += dymat * xmat.transpose();
      MapRM<T>(dx.sample(n), in_, static_cast<Eigen::Index>(opl)).noalias() = wmat.transpose() * dymat;
    } else {
      im2col(x.sample(n), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, cols.data());
      CMapRM<T> cmat(cols.data(), kdim, static_cast<Eigen::Index>(opl));
      dw.noalias() += dymat * cmat.transpose();
      MapRM<T>(dcols.data(), kdim, static_cast<Eigen::Index>(opl)).noalias() = wmat.transpose() * dymat;
      col2im(dcols.data(), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, dx.sample(n));
    }
  }
  return dx;
}

template <typename T>
void Conv2d<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// Relu ------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.storage()) v = v > T{0} ? v : T{0};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > T{0})) dx[i] = T{0};
  }
  return dx;
}

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  Tensor<T> y = relu(x);
  if (cache) {
    cache->tensors.clear();
    cache->tensors.push_back(y);
  }
  return y;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& dy, const Cache<T>& cache) {
  return relu_backward(dy, cache.tensors.at(0));
}

template <typename T>
Tensor<T> Standardize<T>::forward(const Tensor<T>& x, Cache<T>* /*cache*/) const {
  Tensor<T> y = x;
  const T c = static_cast<T>(center_);
  const T inv = static_cast<T>(1.0 / scale_);
  for (auto& v : y.storage()) v = (v - c) * inv;
  return y;
}

template <typename T>
Tensor<T> Standardize<T>::backward(const Tensor<T>& dy, const Cache<T>& /*cache*/) {
  Tensor<T> dx = dy;
  const T inv = static_cast<T>(1.0 / scale_);
  for (auto& v : dx.storage()) v *= inv;
  return dx;
}

// ResidualBlock ---------------------------------------------------------------

template <typename T>
ResidualBlock<T>::ResidualBlock(std::string name, int in_channels, int out_channels, int stride, Rng& rng)
    : name_(std::move(name)), stride_(stride),
      conv1_(name_ + ".conv1", in_channels, out_channels, 3, stride, 1, rng),
      conv2_(name_ + ".conv2", out_channels, out_channels, 3, 1, 1, rng, 0.5) {
  if (in_channels != out_channels || stride != 1) {
    proj_ = std::make_unique<Conv2d<T>>(name_ + ".proj", in_channels, out_channels, 1, stride, 0, rng, 0.5);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  Cache<T>* c1 = nullptr;
  Cache<T>* c2 = nullptr;
  Cache<T>* cp = nullptr;
  if (cache) {
    cache->children.assign(3, Cache<T>{});
    cache->tensors.clear();
    c1 = &cache->children[0];
    c2 = &cache->children[1];
    cp = &cache->children[2];
  }
  Tensor<T> a1 = relu(conv1_.forward(x, c1));
  Tensor<T> y = conv2_.forward(a1, c2);
  if (proj_) {
    add_inplace(y, proj_->forward(x, cp));
  } else {
    add_inplace(y, x);
  }
  y = relu(y);
  if (cache) {
    cache->tensors.push_back(std::move(a1));
    cache->tensors.push_back(y);
  }
  return y;
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& dy, const Cache<T>& cache) {
  const Tensor<T> dsum = relu_backward(dy, cache.tensors.at(1));
  Tensor<T> da1 = relu_backward(conv2_.backward(dsum, cache.children.at(1)), cache.tensors.at(0));
  Tensor<T> dx = conv1_.backward(da1, cache.children.at(0));
  if (proj_) {
    add_inplace(dx, proj_->backward(dsum, cache.children.at(2)));
  } else {
    add_inplace(dx, dsum);
  }
  return dx;
}

template <typename T>
void ResidualBlock<T>::collect(std::vector<Parameter<T>*>& out) {
  conv1_.collect(out);
  conv2_.collect(out);
  if (proj_) proj_->collect(out);
}

// MaxPool2 --------------------------------------------------------------------

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (x.h() % 2 || x.w() % 2) throw std::invalid_argument(name_ + ": odd spatial size " + x.shape_string());
  const int oh = x.h() / 2;
  const int ow = x.w() / 2;
  Tensor<T> y(x.n(), x.c(), oh, ow);
  std::vector<int> arg;
  if (cache) arg.resize(y.size());
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* xc = x.channel(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          int best = (2 * oy) * x.w() + 2 * ox;
          const int cand[3] = {best + 1, best + x.w(), best + x.w() + 1};
          for (int k : cand) {
            if (xc[k] > xc[best]) best = k;
          }
          y[o] = xc[best];
          if (cache) arg[o] = best;
        }
      }
    }
  }
  if (cache) {
    cache->tensors.clear();
    cache->tensors.push_back(Tensor<T>(x.n(), x.c(), x.h(), x.w()));
    cache->indices = std::move(arg);
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& dy, const Cache<T>& cache) {
  Tensor<T> dx = cache.tensors.at(0);
  dx.fill(T{0});
  std::size_t o = 0;
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < dy.c(); ++c) {
      T* dc = dx.channel(n, c);
      for (std::size_t i = 0; i < dy.plane(); ++i, ++o) dc[cache.indices[o]] += dy[o];
    }
  }
  return dx;
}

// Sequential ------------------------------------------------------------------

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (cache) {
    cache->children.assign(layers_.size(), Cache<T>{});
    cache->tensors.clear();
  }
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cur = layers_[i]->forward(cur, cache ? &cache->children[i] : nullptr);
    if (cache) cache->tensors.push_back(cur);
  }
  return cur;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& dy, const Cache<T>& cache) {
  Tensor<T> g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, cache.children.at(i));
  return g;
}

template <typename T>
Tensor<T> Sequential<T>::backward_to(const Tensor<T>& dy, const Cache<T>& cache, std::size_t index) {
  Tensor<T> g = dy;
  for (std::size_t i = layers_.size(); i-- > index + 1;) g = layers_[i]->backward(g, cache.children.at(i));
  return g;
}

template <typename T>
void Sequential<T>::collect(std::vector<Parameter<T>*>& out) {
  for (auto& l : layers_) l->collect(out);
}

template <typename T>
std::size_t Sequential<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->name() == name) return i;
  }
  return layers_.size();
}

template <typename T>
int Sequential<T>::total_stride() const {
  int s = 1;
  for (const auto& l : layers_) s *= l->stride();
  return s;
}

// Helpers ---------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), 1, 1);
  const T inv = T{1} / static_cast<T>(x.plane());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.channel(n, c);
      T s{0};
      for (std::size_t i = 0; i < x.plane(); ++i) s += p[i];
      y.at(n, c, 0, 0) = s * inv;
    }
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, int h, int w) {
  Tensor<T> dx(dy.n(), dy.c(), h, w);
  const T inv = T{1} / static_cast<T>(h * w);
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < dy.c(); ++c) {
      const T g = dy.at(n, c, 0, 0) * inv;
      T* p = dx.channel(n, c);
      std::fill(p, p + dx.plane(), g);
    }
  }
  return dx;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.channel(n, c);
      T* dst = y.channel(n, c);
      for (int yy = 0; yy < y.h(); ++yy) {
        const T* sr = src + static_cast<std::size_t>(yy / 2) * x.w();
        T* dr = dst + static_cast<std::size_t>(yy) * y.w();
        for (int xx = 0; xx < y.w(); ++xx) dr[xx] = sr[xx / 2];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < dy.c(); ++c) {
      const T* src = dy.channel(n, c);
      T* dst = dx.channel(n, c);
      for (int yy = 0; yy < dy.h(); ++yy) {
        const T* sr = src + static_cast<std::size_t>(yy) * dy.w();
        T* dr = dst + static_cast<std::size_t>(yy / 2) * dx.w();
        for (int xx = 0; xx < dy.w(); ++xx) dr[xx / 2] += sr[xx];
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw std::invalid_argument("concat_channels: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    std::copy(a.sample(n), a.sample(n) + a.sample_size(), y.sample(n));
    std::copy(b.sample(n), b.sample(n) + b.sample_size(), y.sample(n) + a.sample_size());
  }
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& d, int a_channels, Tensor<T>& da, Tensor<T>& db) {
  da = Tensor<T>(d.n(), a_channels, d.h(), d.w());
  db = Tensor<T>(d.n(), d.c() - a_channels, d.h(), d.w());
  for (int n = 0; n < d.n(); ++n) {
    std::copy(d.sample(n), d.sample(n) + da.sample_size(), da.sample(n));
    std::copy(d.sample(n) + da.sample_size(), d.sample(n) + d.sample_size(), db.sample(n));
  }
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add_inplace: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

#define BASUP_INSTANTIATE(T)                                                              \
  template class Conv2d<T>;                                                               \
  template class Relu<T>;                                                                 \
  template class Standardize<T>;                                                          \
  template class ResidualBlock<T>;                                                        \
  template class MaxPool2<T>;                                                             \
  template class Sequential<T>;                                                           \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                   \
  template Tensor<T> global_avg_pool_backward(const Tensor<T>&, int, int);                \
  template Tensor<T> upsample2(const Tensor<T>&);                                         \
  template Tensor<T> upsample2_backward(const Tensor<T>&);                                \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                 \
  template void split_channels(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);            \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                   \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

BASUP_INSTANTIATE(float)
BASUP_INSTANTIATE(double)

#undef BASUP_INSTANTIATE

}  // namespace basup::nn
