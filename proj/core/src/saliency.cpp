#include "basup/saliency.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "basup/error.hpp"

namespace basup::sal {

std::string to_string(Method method) {
  switch (method) {
    case Method::gradcam: return "gradcam";
    case Method::gradcam_pp: return "gradcam_pp";
    case Method::layercam: return "layercam";
    case Method::raw_map: return "raw_map";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "gradcam") return Method::gradcam;
  if (name == "gradcam_pp" || name == "gradcam++") return Method::gradcam_pp;
  if (name == "layercam") return Method::layercam;
  if (name == "raw_map" || name == "raw") return Method::raw_map;
  throw ConfigError("unknown saliency method '" + name + "'");
}

template <typename T>
FloatMap cam_from_gradients(Method method, const nn::Tensor<T>& acts, const nn::Tensor<T>& grads, int sample) {
  if (!acts.same_shape(grads)) throw ShapeError("cam: activation/gradient shapes differ");
  const int k = acts.c();
  const int h = acts.h();
  const int w = acts.w();
  const std::size_t plane = acts.plane();
  std::vector<double> cam(plane, 0.0);
  switch (method) {
    case Method::gradcam:
    case Method::gradcam_pp: {
      for (int c = 0; c < k; ++c) {
        const T* a = acts.channel(sample, c);
        const T* g = grads.channel(sample, c);
        double weight = 0.0;
        if (method == Method::gradcam) {
          for (std::size_t i = 0; i < plane; ++i) weight += g[i];
          weight /= static_cast<double>(plane);
        } else {
          // alpha = g^2 / (2 g^2 + sum(A) g^3), weight = sum(alpha * relu(g)).
          double sum_a = 0.0;
          for (std::size_t i = 0; i < plane; ++i) sum_a += a[i];
          for (std::size_t i = 0; i < plane; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            const double g2 = gi * gi;
            const double alpha = g2 / (2.0 * g2 + sum_a * g2 * gi + 1e-7);
            weight += alpha * std::max(gi, 0.0);
          }
        }
        for (std::size_t i = 0; i < plane; ++i) cam[i] += weight * a[i];
      }
      break;
    }
    case Method::layercam: {
      for (int c = 0; c < k; ++c) {
        const T* a = acts.channel(sample, c);
        const T* g = grads.channel(sample, c);
        for (std::size_t i = 0; i < plane; ++i) cam[i] += std::max<double>(g[i], 0.0) * a[i];
      }
      break;
    }
    case Method::raw_map:
      throw ConfigError("raw_map is read from the class maps, not computed from gradients");
  }
  FloatMap out(w, h, 1);
  for (std::size_t i = 0; i < plane; ++i) out[i] = static_cast<float>(std::max(cam[i], 0.0));
  return out;
}

template FloatMap cam_from_gradients(Method, const nn::Tensor<float>&, const nn::Tensor<float>&, int);
template FloatMap cam_from_gradients(Method, const nn::Tensor<double>&, const nn::Tensor<double>&, int);

FloatMap normalize_minmax(const FloatMap& map) {
  FloatMap out(map.width(), map.height(), 1);
  if (map.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(map.storage().begin(), map.storage().end());
  const float lo = *lo_it;
  const float hi = *hi_it;
  if (!(hi > lo)) return out;
  const double range = static_cast<double>(hi) - lo;
  // Division (not multiplication by a reciprocal) keeps the extremes exactly 0 and 1.
  for (std::size_t i = 0; i < map.storage().size(); ++i) {
    out[i] = static_cast<float>((static_cast<double>(map[i]) - lo) / range);
  }
  return out;
}

SaliencyMap compute_saliency(cls::Net& net, int input_size, const Image& image, int target, Method method,
                             const std::string& layer) {
  if (target < 0 || target >= net.spec().num_classes) {
    throw ConfigError("saliency target class " + std::to_string(target) + " out of range");
  }
  nn::Tensor<float> x = data::to_tensor(resize_bilinear(image, input_size, input_size));
  nn::Cache<float> cache;
  const nn::Tensor<float> maps = net.forward(x, &cache);

  FloatMap raw;
  if (method == Method::raw_map) {
    raw = FloatMap(maps.w(), maps.h(), 1);
    std::copy(maps.channel(0, target), maps.channel(0, target) + maps.plane(), raw.storage().begin());
  } else {
    auto& backbone = net.backbone();
    std::size_t index = backbone.size() - 1;
    if (!layer.empty() && layer != kLastConv) {
      index = backbone.find(layer);
      if (index == backbone.size()) throw ConfigError("unknown saliency layer '" + layer + "'");
    }
    const auto& backbone_cache = cache.children.at(0);
    const nn::Tensor<float>& acts = nn::Sequential<float>::output_of(backbone_cache, index);
    if (acts.h() * acts.w() < 2) throw ConfigError("saliency layer '" + layer + "' has no spatial extent");
    // score = mean of the target class map, so d score / d maps is uniform.
    nn::Tensor<float> dmaps(maps.n(), maps.c(), maps.h(), maps.w());
    std::fill(dmaps.channel(0, target), dmaps.channel(0, target) + dmaps.plane(), 1.0f / static_cast<float>(maps.plane()));
    const nn::Tensor<float> dfeat = net.head().backward(dmaps, cache.children.at(1));
    const nn::Tensor<float> grads = backbone.backward_to(dfeat, backbone_cache, index);
    raw = cam_from_gradients(method, acts, grads);
    nn::zero_grads(net.parameters());
  }
  SaliencyMap out;
  out.values = normalize_minmax(resize_bilinear(raw, image.width(), image.height()));
  out.target_class = target;
  out.method = method;
  return out;
}

SaliencyMap compute_saliency(cls::ClassifierCheckpoint& ckpt, const Image& image, const std::string& target_label,
                             Method method, const std::string& layer) {
  if (!ckpt.model) throw Error("compute_saliency: checkpoint has no model");
  return compute_saliency(*ckpt.model, ckpt.config.input_size, image, ckpt.label_index(target_label), method, layer);
}

CoarseMask threshold_saliency(const SaliencyMap& map, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("threshold tau must be in (0,1)");
  CoarseMask out{make_mask(map.values.width(), map.values.height()), tau};
  const auto t = static_cast<float>(tau);
  for (std::size_t i = 0; i < out.mask.pixel_count(); ++i) out.mask[i] = map.values[i] >= t ? 1 : 0;
  return out;
}

CoarseMask threshold_otsu(const SaliencyMap& map) {
  std::array<double, 256> hist{};
  for (float v : map.values.data()) hist[static_cast<std::size_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f)] += 1.0;
  const double total = static_cast<double>(map.values.pixel_count());
  double sum_all = 0.0;
  for (std::size_t i = 0; i < 256; ++i) sum_all += static_cast<double>(i) * hist[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  std::size_t best_t = 255;
  for (std::size_t t = 0; t < 255; ++t) {
    w0 += hist[t];
    sum0 += static_cast<double>(t) * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  // Pixels in bins above best_t are foreground.
  const double tau = (static_cast<double>(best_t) + 0.5) / 255.0;
  CoarseMask out{make_mask(map.values.width(), map.values.height()), tau};
  for (std::size_t i = 0; i < out.mask.pixel_count(); ++i) out.mask[i] = map.values[i] >= tau ? 1 : 0;
  return out;
}

std::filesystem::path mirrored_path(const std::filesystem::path& root, const data::FrameRecord& record,
                                    const std::string& extension) {
  auto p = root / record.relative_key();
  p += extension;
  return p;
}

BatchSummary batch_saliency(cls::ClassifierCheckpoint& ckpt, const data::RecordList& records, const SaliencyJob& job,
                            const std::filesystem::path& out_root) {
  if (job.mode == ThresholdMode::fixed && !(job.tau > 0.0 && job.tau < 1.0)) {
    throw ConfigError("threshold tau must be in (0,1)");
  }
  const int target = ckpt.label_index(job.target);
  BatchSummary summary;
  for (const auto& r : records) {
    const auto mask_path = mirrored_path(out_root, r);
    const auto map_path = mirrored_path(out_root / "maps", r);
    if (job.resume && std::filesystem::exists(mask_path) && (!job.save_maps || std::filesystem::exists(map_path))) {
      ++summary.skipped;
      continue;
    }
    const Image image = io::read_image(r.path);
    SaliencyMap map = compute_saliency(*ckpt.model, ckpt.config.input_size, image, target, job.method, job.layer);
    map.source = r.path.string();
    const CoarseMask coarse = job.mode == ThresholdMode::fixed ? threshold_saliency(map, job.tau) : threshold_otsu(map);
    io::write_mask(mask_path, coarse.mask);
    if (job.save_maps) io::write_gray(map_path, map.values);
    ++summary.written;
  }
  return summary;
}

}  // namespace basup::sal
