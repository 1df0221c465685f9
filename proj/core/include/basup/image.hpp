#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace basup {

/// Dense row-major raster with interleaved channels.
template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels <= 0) {
      throw std::invalid_argument("Raster: invalid dimensions");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * height_;
  }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Raster& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }
  template <typename U>
  bool same_extent(const Raster<U>& o) const {
    return width_ == o.width() && height_ == o.height();
  }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Raster&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

/// 8-bit RGB image.
using Image = Raster<std::uint8_t>;
/// Binary mask, values 0 or 1.
using Mask = Raster<std::uint8_t>;
/// Instance label map, 0 = background.
using LabelMap = Raster<std::uint16_t>;
/// Single-channel float map (saliency, probabilities).
using FloatMap = Raster<float>;
/// Two-channel float field of (dx, dy) displacements.
using FlowField = Raster<float>;

inline Image make_image(int width, int height) { return Image(width, height, 3); }
inline Mask make_mask(int width, int height) { return Mask(width, height, 1); }

std::size_t count_nonzero(const Mask& mask);

/// Bilinear resampling with half-pixel centers; identity when sizes match.
Image resize_bilinear(const Image& src, int width, int height);
FloatMap resize_bilinear(const FloatMap& src, int width, int height);
Mask resize_nearest(const Mask& src, int width, int height);

/// Converts a 0/1 mask to 0/255 for storage and back.
Mask mask_to_u8(const Mask& mask);
Mask mask_from_u8(const Mask& stored);

/// Unions/intersections of equally sized masks.
Mask mask_or(const Mask& a, const Mask& b);
Mask mask_and(const Mask& a, const Mask& b);

}  // namespace basup
