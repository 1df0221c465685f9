#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "basup/image.hpp"
#include "basup/nn/tensor.hpp"
#include "basup/rng.hpp"

namespace basup::test {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("basup-test-" + tag + "-" + std::to_string(counter()++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  fs::path path_;
};

inline Image random_image(int w, int h, Rng& rng) {
  Image img = make_image(w, h);
  for (auto& v : img.storage()) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

inline Image solid_image(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img = make_image(w, h);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    img[3 * p] = r;
    img[3 * p + 1] = g;
    img[3 * p + 2] = b;
  }
  return img;
}

inline Mask random_mask(int w, int h, double density, Rng& rng) {
  Mask m = make_mask(w, h);
  for (auto& v : m.storage()) v = rng.bernoulli(density) ? 1 : 0;
  return m;
}

inline Mask rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
  Mask m = make_mask(w, h);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) m.at(x, y) = 1;
  }
  return m;
}

template <typename T>
nn::Tensor<T> random_tensor(int n, int c, int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
  nn::Tensor<T> t(n, c, h, w);
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).generic_string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return out;
}

inline std::size_t count_files(const fs::path& root, const std::string& extension) {
  std::size_t n = 0;
  if (!fs::exists(root)) return 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == extension) ++n;
  }
  return n;
}

/// Brute-force unwanted-class IoU in percent over paired masks.
inline double brute_iou(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
  double inter = 0, uni = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    for (std::size_t i = 0; i < pred[f].pixel_count(); ++i) {
      const bool p = pred[f][i] != 0;
      const bool g = gt[f][i] != 0;
      inter += p && g;
      uni += p || g;
    }
  }
  return uni == 0 ? 100.0 : 100.0 * inter / uni;
}

}  // namespace basup::test
