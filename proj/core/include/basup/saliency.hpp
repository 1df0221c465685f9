#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "basup/classifier.hpp"
#include "basup/dataio.hpp"
#include "basup/image.hpp"

namespace basup::sal {

enum class Method { gradcam, gradcam_pp, layercam, raw_map };

std::string to_string(Method method);
/// Accepts the canonical names plus "raw" for raw_map.
Method parse_method(const std::string& name);

struct SaliencyMap {
  FloatMap values;  // [0,1], image resolution
  int target_class = 0;
  Method method = Method::gradcam;
  std::string source;
};

/// Selects the activation layer by backbone layer name; empty or "last_conv"
/// means the backbone output feeding the class head.
inline constexpr char kLastConv[] = "last_conv";

/// CAM of one sample from activations `acts` and score gradients `grads`
/// (both (n, k, h, w)), before upsampling and normalization.
template <typename T>
FloatMap cam_from_gradients(Method method, const nn::Tensor<T>& acts, const nn::Tensor<T>& grads, int sample = 0);

/// Min-max normalization to [0,1]; constant maps become all-zero.
FloatMap normalize_minmax(const FloatMap& map);

/// Saliency for class `target` of an image. The network's gradient buffers
/// are used as scratch space and left zeroed.
SaliencyMap compute_saliency(cls::Net& net, int input_size, const Image& image, int target, Method method,
                             const std::string& layer = kLastConv);
SaliencyMap compute_saliency(cls::ClassifierCheckpoint& ckpt, const Image& image, const std::string& target_label,
                             Method method, const std::string& layer = kLastConv);

struct CoarseMask {
  Mask mask;
  double threshold = 0.25;
};

enum class ThresholdMode { fixed, otsu };

/// mask = values >= tau. Throws ConfigError unless tau is in (0, 1).
CoarseMask threshold_saliency(const SaliencyMap& map, double tau = 0.25);
/// Otsu's threshold over a 256-bin histogram of the map; all-zero maps give
/// an empty mask.
CoarseMask threshold_otsu(const SaliencyMap& map);

struct SaliencyJob {
  Method method = Method::gradcam;
  std::string target = "before";
  std::string layer = kLastConv;
  ThresholdMode mode = ThresholdMode::fixed;
  double tau = 0.25;
  bool save_maps = false;
  bool resume = false;
};

struct BatchSummary {
  std::size_t written = 0;
  std::size_t skipped = 0;
};

/// Path of a per-frame output mirroring the dataset tree under `root`.
std::filesystem::path mirrored_path(const std::filesystem::path& root, const data::FrameRecord& record,
                                    const std::string& extension = ".png");

/// Writes one coarse mask per record under `out_root` (and grayscale maps
/// under `out_root/maps` when requested). With `resume`, records whose
/// outputs already exist are skipped untouched.
BatchSummary batch_saliency(cls::ClassifierCheckpoint& ckpt, const data::RecordList& records, const SaliencyJob& job,
                            const std::filesystem::path& out_root);

}  // namespace basup::sal
