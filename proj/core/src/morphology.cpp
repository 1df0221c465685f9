#include "basup/morphology.hpp"

#include <vector>

namespace basup {

namespace {

template <bool Dilate>
Mask morph3(const Mask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  Mask out = make_mask(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool hit = !Dilate;
      for (int dy = -1; dy <= 1 && hit != Dilate; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          if ((mask.at(xx, yy) != 0) == Dilate) {
            hit = Dilate;
            break;
          }
        }
      }
      out.at(x, y) = hit ? 1 : 0;
    }
  }
  return out;
}

}  // namespace

Mask dilate3(const Mask& mask) { return morph3<true>(mask); }
Mask erode3(const Mask& mask) { return morph3<false>(mask); }

Mask close3(const Mask& mask, int iterations) {
  Mask out = mask;
  for (int i = 0; i < iterations; ++i) out = dilate3(out);
  for (int i = 0; i < iterations; ++i) out = erode3(out);
  return out;
}

LabelMap connected_components(const Mask& mask, Connectivity conn, int* count) {
  const int w = mask.width();
  const int h = mask.height();
  LabelMap labels(w, h, 1);
  std::vector<int> stack;
  int next = 0;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      if (!mask.at(x0, y0) || labels.at(x0, y0)) continue;
      ++next;
      labels.at(x0, y0) = static_cast<std::uint16_t>(next);
      stack.assign(1, y0 * w + x0);
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int px = p % w;
        const int py = p / w;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            if (conn == Connectivity::four && dx != 0 && dy != 0) continue;
            const int x = px + dx;
            const int y = py + dy;
            if (x < 0 || y < 0 || x >= w || y >= h) continue;
            if (!mask.at(x, y) || labels.at(x, y)) continue;
            labels.at(x, y) = static_cast<std::uint16_t>(next);
            stack.push_back(y * w + x);
          }
        }
      }
    }
  }
  if (count) *count = next;
  return labels;
}

Mask remove_small_components(const Mask& mask, int min_size, Connectivity conn) {
  int n = 0;
  const LabelMap labels = connected_components(mask, conn, &n);
  std::vector<int> sizes(static_cast<std::size_t>(n) + 1, 0);
  for (auto l : labels.data()) ++sizes[l];
  Mask out = make_mask(mask.width(), mask.height());
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    const auto l = labels[i];
    out[i] = (l != 0 && sizes[l] >= min_size) ? 1 : 0;
  }
  return out;
}

Mask fill_holes(const Mask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  // Flood the background from the border; whatever background stays unreached
  // is enclosed.
  Mask outside = make_mask(w, h);
  std::vector<int> stack;
  auto seed = [&](int x, int y) {
    if (!mask.at(x, y) && !outside.at(x, y)) {
      outside.at(x, y) = 1;
      stack.push_back(y * w + x);
    }
  };
  for (int x = 0; x < w; ++x) {
    seed(x, 0);
    seed(x, h - 1);
  }
  for (int y = 0; y < h; ++y) {
    seed(0, y);
    seed(w - 1, y);
  }
  while (!stack.empty()) {
    const int p = stack.back();
    stack.pop_back();
    const int px = p % w;
    const int py = p / w;
    if (px > 0) seed(px - 1, py);
    if (px + 1 < w) seed(px + 1, py);
    if (py > 0) seed(px, py - 1);
    if (py + 1 < h) seed(px, py + 1);
  }
  Mask out = make_mask(w, h);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) out[i] = outside[i] ? 0 : 1;
  return out;
}

}  // namespace basup
