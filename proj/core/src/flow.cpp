#include "basup/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "basup/error.hpp"

namespace basup::flow {

template <typename T>
bool sample_bilinear(const T* plane, int w, int h, double x, double y, T& out) {
  if (!(x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1)) return false;
  const int x0 = std::min(static_cast<int>(x), w - 1);
  const int y0 = std::min(static_cast<int>(y), h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const T fx = static_cast<T>(x - x0);
  const T fy = static_cast<T>(y - y0);
  const T top = plane[y0 * w + x0] * (T{1} - fx) + plane[y0 * w + x1] * fx;
  const T bot = plane[y1 * w + x0] * (T{1} - fx) + plane[y1 * w + x1] * fx;
  out = top * (T{1} - fy) + bot * fy;
  return true;
}

template <typename T>
void scatter_bilinear(T* plane, int w, int h, double x, double y, T g) {
  const int x0 = std::min(static_cast<int>(x), w - 1);
  const int y0 = std::min(static_cast<int>(y), h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const T fx = static_cast<T>(x - x0);
  const T fy = static_cast<T>(y - y0);
  plane[y0 * w + x0] += g * (T{1} - fx) * (T{1} - fy);
  plane[y0 * w + x1] += g * fx * (T{1} - fy);
  plane[y1 * w + x0] += g * (T{1} - fx) * fy;
  plane[y1 * w + x1] += g * fx * fy;
}

template bool sample_bilinear(const float*, int, int, double, double, float&);
template bool sample_bilinear(const double*, int, int, double, double, double&);
template void scatter_bilinear(float*, int, int, double, double, float);
template void scatter_bilinear(double*, int, int, double, double, double);

FlowField resample_flow(const FlowField& flow, int width, int height) {
  if (flow.channels() != 2) throw ShapeError("resample_flow: expected a 2-channel field");
  if (width == flow.width() && height == flow.height()) return flow;
  FlowField out(width, height, 2);
  std::vector<double> sum(static_cast<std::size_t>(width) * height * 2, 0.0);
  std::vector<int> count(static_cast<std::size_t>(width) * height, 0);
  const double sx = static_cast<double>(width) / flow.width();
  const double sy = static_cast<double>(height) / flow.height();
  for (int y = 0; y < flow.height(); ++y) {
    const int ty = std::min(height - 1, static_cast<int>((y + 0.5) * sy));
    for (int x = 0; x < flow.width(); ++x) {
      const int tx = std::min(width - 1, static_cast<int>((x + 0.5) * sx));
      const std::size_t t = static_cast<std::size_t>(ty) * width + tx;
      sum[2 * t] += flow.at(x, y, 0);
      sum[2 * t + 1] += flow.at(x, y, 1);
      ++count[t];
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t t = static_cast<std::size_t>(y) * width + x;
      if (count[t] == 0) {
        // Upsampling: take the source pixel under this cell's center.
        const int fx = std::min(flow.width() - 1, static_cast<int>((x + 0.5) / sx));
        const int fy = std::min(flow.height() - 1, static_cast<int>((y + 0.5) / sy));
        out.at(x, y, 0) = static_cast<float>(flow.at(fx, fy, 0) * sx);
        out.at(x, y, 1) = static_cast<float>(flow.at(fx, fy, 1) * sy);
      } else {
        out.at(x, y, 0) = static_cast<float>(sum[2 * t] / count[t] * sx);
        out.at(x, y, 1) = static_cast<float>(sum[2 * t + 1] / count[t] * sy);
      }
    }
  }
  return out;
}

LabelMap forward_warp_labels(const LabelMap& labels, const FlowField& flow) {
  if (!labels.same_extent(flow) || flow.channels() != 2) throw ShapeError("forward_warp_labels: shape mismatch");
  LabelMap out(labels.width(), labels.height(), 1);
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      const auto l = labels.at(x, y);
      if (!l) continue;
      const auto tx = static_cast<int>(std::lround(x + flow.at(x, y, 0)));
      const auto ty = static_cast<int>(std::lround(y + flow.at(x, y, 1)));
      if (tx < 0 || ty < 0 || tx >= labels.width() || ty >= labels.height()) continue;
      out.at(tx, ty) = l;
    }
  }
  return out;
}

namespace {

struct Gray {
  int w = 0;
  int h = 0;
  std::vector<float> v;
  float at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Gray to_gray(const Image& img) {
  Gray g{img.width(), img.height(), std::vector<float>(img.pixel_count())};
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    g.v[i] = 0.299f * img[3 * i] + 0.587f * img[3 * i + 1] + 0.114f * img[3 * i + 2];
  }
  return g;
}

Gray half(const Gray& g) {
  Gray out{g.w / 2, g.h / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.w) * out.h);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      out.v[static_cast<std::size_t>(y) * out.w + x] =
          0.25f * (g.at(2 * x, 2 * y) + g.at(2 * x + 1, 2 * y) + g.at(2 * x, 2 * y + 1) + g.at(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

double block_sad(const Gray& a, const Gray& b, int x0, int y0, int bw, int bh, int dx, int dy) {
  double sad = 0.0;
  int n = 0;
  for (int y = y0; y < y0 + bh; ++y) {
    const int ty = y + dy;
    if (ty < 0 || ty >= b.h) continue;
    for (int x = x0; x < x0 + bw; ++x) {
      const int tx = x + dx;
      if (tx < 0 || tx >= b.w) continue;
      sad += std::abs(a.at(x, y) - b.at(tx, ty));
      ++n;
    }
  }
  // Require at least half the block to overlap.
  if (n * 2 < bw * bh) return std::numeric_limits<double>::infinity();
  return sad / n;
}

}  // namespace

FlowField estimate_flow(const Image& from, const Image& to, const BlockMatchParams& params) {
  if (!from.same_shape(to)) throw ShapeError("estimate_flow: frame size mismatch");
  if (params.block < 1 || params.coarse_radius < 0 || params.refine_radius < 0) {
    throw ConfigError("estimate_flow: invalid block-matching parameters");
  }
  std::vector<Gray> pa{to_gray(from)};
  std::vector<Gray> pb{to_gray(to)};
  while (std::min(pa.back().w, pa.back().h) / 2 >= params.min_level_size) {
    pa.push_back(half(pa.back()));
    pb.push_back(half(pb.back()));
  }

  // Per-pixel integer vectors at the current level.
  std::vector<int> fx, fy;
  for (std::size_t lvl = pa.size(); lvl-- > 0;) {
    const Gray& a = pa[lvl];
    const Gray& b = pb[lvl];
    const bool coarsest = lvl + 1 == pa.size();
    std::vector<int> nx(static_cast<std::size_t>(a.w) * a.h, 0), ny(nx.size(), 0);
    const int radius = coarsest ? params.coarse_radius : params.refine_radius;
    const int prev_w = coarsest ? 0 : pa[lvl + 1].w;
    const int prev_h = coarsest ? 0 : pa[lvl + 1].h;
    for (int by = 0; by < a.h; by += params.block) {
      for (int bx = 0; bx < a.w; bx += params.block) {
        const int bw = std::min(params.block, a.w - bx);
        const int bh = std::min(params.block, a.h - by);
        int gx = 0, gy = 0;
        if (!coarsest) {
          const int cx = std::min(prev_w - 1, (bx + bw / 2) / 2);
          const int cy = std::min(prev_h - 1, (by + bh / 2) / 2);
          gx = 2 * fx[static_cast<std::size_t>(cy) * prev_w + cx];
          gy = 2 * fy[static_cast<std::size_t>(cy) * prev_w + cx];
        }
        double best = std::numeric_limits<double>::infinity();
        int best_dx = gx, best_dy = gy;
        // Ties favour the smallest displacement change, scanned outward.
        for (int r = 0; r <= radius; ++r) {
          for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
              if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
              const double s = block_sad(a, b, bx, by, bw, bh, gx + dx, gy + dy);
              if (s < best) {
                best = s;
                best_dx = gx + dx;
                best_dy = gy + dy;
              }
            }
          }
        }
        for (int y = by; y < by + bh; ++y) {
          for (int x = bx; x < bx + bw; ++x) {
            nx[static_cast<std::size_t>(y) * a.w + x] = best_dx;
            ny[static_cast<std::size_t>(y) * a.w + x] = best_dy;
          }
        }
      }
    }
    fx = std::move(nx);
    fy = std::move(ny);
  }

  FlowField out(from.width(), from.height(), 2);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    out[2 * i] = static_cast<float>(fx[i]);
    out[2 * i + 1] = static_cast<float>(fy[i]);
  }
  return out;
}

}  // namespace basup::flow
