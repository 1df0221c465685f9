#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "basup/dataio.hpp"
#include "basup/image.hpp"
#include "basup/io.hpp"
#include "basup/nn/models.hpp"

namespace basup::seg {

inline constexpr char kTinyEncoderDecoder[] = "tiny_encoder_decoder";

struct SegConfig {
  std::string architecture = kTinyEncoderDecoder;
  int base_width = 8;
  double learning_rate = 1e-3;
  int max_epochs = 25;
  int patience = 5;
  int batch_size = 8;
  /// Square network input side (multiple of 8).
  int input_size = 128;
  /// Fraction of sequences used for training; the rest validate.
  double train_ratio = 0.8;
  /// Loss weight of unwanted-class pixels.
  double positive_weight = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  io::KeyValueFile to_kv(const std::string& prefix = "segtrain") const;
  static SegConfig from_kv(const io::KeyValueFile& kv, const std::string& prefix = "segtrain");
};

using SegNet = nn::UNet<float>;

struct SegEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_iou = 0.0;  // dataset-level IoU against the validation pseudo-masks
  double seconds = 0.0;
};

struct SegCheckpoint {
  SegConfig config;
  std::shared_ptr<SegNet> model;
  std::vector<SegEpoch> curves;
  int best_epoch = -1;
  bool stopped_early = false;

  std::string curves_csv() const;
};

inline constexpr char kSegMagic[8] = {'B', 'A', 'S', 'E', 'G', '0', '0', '1'};
inline constexpr std::uint32_t kSegVersion = 1;

void save_checkpoint(const SegCheckpoint& ckpt, const std::filesystem::path& path);
SegCheckpoint load_checkpoint(const std::filesystem::path& path);

struct SegSample {
  Image image;
  Mask mask;
  std::string sequence_id;
};

struct SegObserver {
  std::function<void(const SegEpoch&)> on_epoch;
};

/// Trains on `train`, early-stopping on pixel loss over `val`, and returns the
/// best-validation model. Throws DivergenceError on a non-finite loss.
SegCheckpoint train_segmenter(const std::vector<SegSample>& train, const std::vector<SegSample>& val,
                              const SegConfig& config, const SegObserver& observer = {});

/// Pairs every record with its pseudo-mask under `mask_root` (mirrored tree),
/// holds out whole sequences for validation and trains.
SegCheckpoint train_segmenter(const data::RecordList& records, const std::filesystem::path& mask_root,
                              const SegConfig& config, const SegObserver& observer = {});

/// Per-pixel decision between the two class probabilities; equal
/// probabilities resolve to background.
Mask decide(const FloatMap& p_background, const FloatMap& p_unwanted);

/// Unwanted-class probability at image resolution.
FloatMap probability(const SegNet& net, int input_size, const Image& image);
/// Binary mask S with the shape of `image`.
Mask segment(const SegNet& net, int input_size, const Image& image);
Mask segment(const SegCheckpoint& ckpt, const Image& image);

struct SegmentSummary {
  std::size_t written = 0;
  std::size_t skipped = 0;
};

SegmentSummary batch_segment(const SegCheckpoint& ckpt, const data::RecordList& records,
                             const std::filesystem::path& out_root, bool resume);

}  // namespace basup::seg
