#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "basup/dataio.hpp"
#include "basup/image.hpp"
#include "basup/io.hpp"

namespace basup::br {

/// Per-class photometric background estimate.
struct BackgroundModel {
  std::string label;
  FloatMap median;  // 3 channels, pixel-wise median over the class
  FloatMap scale;   // 3 channels, MAD x 1.4826 (not floored)

  int width() const { return median.width(); }
  int height() const { return median.height(); }
};

struct ForegroundParams {
  double dev_thresh = 4.0;
  double sat_thresh = 0.25;
  int min_blob = 25;
  /// Lower bound on the deviation scale, in intensity levels.
  double scale_floor = 2.0;
  int closing_iterations = 1;

  void validate() const;
  io::KeyValueFile to_kv(const std::string& prefix = "bgremoval") const;
  static ForegroundParams from_kv(const io::KeyValueFile& kv, const std::string& prefix = "bgremoval");
};

/// Median of `values` (mean of the two middle values for even counts).
/// Reorders the input.
double median_inplace(std::vector<double>& values);

BackgroundModel fit_background(const std::vector<Image>& frames, const std::string& label);
/// Loads the records and fits; errors name the first offending file.
BackgroundModel fit_background(const data::RecordList& records, const std::string& label);

/// (max - min) / max on [0,1]-scaled channels; 0 where max is 0.
double saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// Deviation/saturation test only, before morphology.
Mask raw_foreground(const Image& image, const BackgroundModel& model, const ForegroundParams& params);
/// raw_foreground, then 3x3 closing and small-component removal.
Mask foreground_mask(const Image& image, const BackgroundModel& model, const ForegroundParams& params = {});

constexpr std::uint8_t kNeutralGray = 128;

/// Background pixels replaced by mid-gray.
Image foreground_variant(const Image& image, const Mask& foreground);
/// Foreground pixels replaced by the class median.
Image background_variant(const Image& image, const Mask& foreground, const BackgroundModel& model);

/// Seeded choice of ceil(n / 2) distinct indices, returned in ascending order.
std::vector<std::size_t> select_half(std::size_t n, std::uint64_t seed);

enum class Variant { foreground, background };

struct ThreeClassItem {
  data::FrameRecord source;
  std::string label;  // "before", "after" or "background"
  Variant variant = Variant::foreground;
  /// Sequence folder in the derived tree; background items are prefixed with
  /// their source class so before/after sequence ids cannot collide.
  std::string sequence_id;
};

struct ThreeClassSet {
  std::vector<ThreeClassItem> items;

  std::size_t count(const std::string& label) const;
};

/// Plans the three-class set: every before/after frame as a foreground
/// variant plus background variants from a seeded half of each class.
ThreeClassSet build_three_class_set(const data::RecordList& before, const data::RecordList& after,
                                    std::uint64_t seed);

/// Renders one planned item with the model of its source class.
Image render_item(const ThreeClassItem& item, const BackgroundModel& model, const ForegroundParams& params);

struct BrSummary {
  std::size_t before = 0;
  std::size_t after = 0;
  std::size_t background = 0;
  std::filesystem::path out_root;
};

/// Builds and writes the derived tree `out_root/train/{before,after,background}`
/// in the canonical layout, copying ground-truth flow where present, plus the
/// fitted medians under `out_root/models/`.
BrSummary write_three_class_set(const data::RecordList& before, const data::RecordList& after,
                                const std::filesystem::path& out_root, const ForegroundParams& params,
                                std::uint64_t seed);

}  // namespace basup::br
