#include "basup/image.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

namespace basup {

std::size_t count_nonzero(const Mask& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data().begin(), mask.data().end(),
                     [](std::uint8_t v) { return v != 0; }));
}

namespace {

struct Tap {
  int i0;
  int i1;
  float w1;
};

// Half-pixel-center source taps for one axis.
std::vector<Tap> make_taps(int src, int dst) {
  std::vector<Tap> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, src - 1);
    taps[static_cast<std::size_t>(i)] = {i0, i1, static_cast<float>(s - i0)};
  }
  return taps;
}

template <typename T, typename Out>
Raster<Out> resample(const Raster<T>& src, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("resize: empty target");
  if (src.empty()) throw std::invalid_argument("resize: empty source");
  const int ch = src.channels();
  Raster<Out> out(width, height, ch);
  const auto tx = make_taps(src.width(), width);
  const auto ty = make_taps(src.height(), height);
  for (int y = 0; y < height; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < ch; ++c) {
        const float v00 = static_cast<float>(src.at(b.i0, a.i0, c));
        const float v01 = static_cast<float>(src.at(b.i1, a.i0, c));
        const float v10 = static_cast<float>(src.at(b.i0, a.i1, c));
        const float v11 = static_cast<float>(src.at(b.i1, a.i1, c));
        const float top = v00 + (v01 - v00) * b.w1;
        const float bot = v10 + (v11 - v10) * b.w1;
        const float v = top + (bot - top) * a.w1;
        if constexpr (std::is_same_v<Out, std::uint8_t>) {
          out.at(x, y, c) = static_cast<std::uint8_t>(
              std::clamp(std::lround(v), 0L, 255L));
        } else {
          out.at(x, y, c) = v;
        }
      }
    }
  }
  return out;
}

}  // namespace

Image resize_bilinear(const Image& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  return resample<std::uint8_t, std::uint8_t>(src, width, height);
}

FloatMap resize_bilinear(const FloatMap& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  return resample<float, float>(src, width, height);
}

Mask resize_nearest(const Mask& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  Mask out(width, height, src.channels());
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(src.height() - 1,
                            static_cast<int>((y + 0.5) * src.height() / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(src.width() - 1,
                              static_cast<int>((x + 0.5) * src.width() / width));
      for (int c = 0; c < src.channels(); ++c) out.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return out;
}

Mask mask_to_u8(const Mask& mask) {
  Mask out = mask;
  for (auto& v : out.storage()) v = v ? 255 : 0;
  return out;
}

Mask mask_from_u8(const Mask& stored) {
  Mask out = stored;
  for (auto& v : out.storage()) v = v >= 128 ? 1 : 0;
  return out;
}

Mask mask_or(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask_or: shape mismatch");
  Mask out = a;
  for (std::size_t i = 0; i < out.storage().size(); ++i) out[i] = (a[i] || b[i]) ? 1 : 0;
  return out;
}

Mask mask_and(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask_and: shape mismatch");
  Mask out = a;
  for (std::size_t i = 0; i < out.storage().size(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
  return out;
}

}  // namespace basup
