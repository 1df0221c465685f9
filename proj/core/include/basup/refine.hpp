#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "basup/dataio.hpp"
#include "basup/image.hpp"
#include "basup/instances.hpp"
#include "basup/io.hpp"

namespace basup::refine {

struct RegionParams {
  /// Scale parameter k of the graph-based merge criterion.
  double k = 300.0;
  /// Gaussian smoothing applied before building the graph.
  double sigma = 0.8;
  /// Regions smaller than this are merged into their largest neighbour.
  int min_size = 25;
};

/// Graph-based color-region segmentation on the 8-connected pixel grid,
/// followed by small-region merging. Labels are contiguous 1..n in raster
/// order of each region's first pixel.
LabelMap classical_regions(const Image& image, const RegionParams& params = {});

struct ProviderConfig {
  InstanceProvider provider = InstanceProvider::oracle;
  RegionParams regions;
  /// external_promptable: HTTP endpoint "http://host[:port]/path" receiving
  /// the image as a PNG POST body and answering with a 16-bit PNG label map.
  std::string endpoint;
  /// external_promptable: command run with {input} and {output} replaced by
  /// a PNG image path and the label-map path it must write.
  std::string runner;
  int timeout_seconds = 60;

  void validate() const;
  io::KeyValueFile to_kv(const std::string& prefix = "refine") const;
  static ProviderConfig from_kv(const io::KeyValueFile& kv, const std::string& prefix = "refine");
};

/// Instance masks for an image. The oracle provider reads `gt_instances`;
/// external providers that cannot be reached raise ProviderError.
InstanceMaskSet get_instances(const Image& image, const ProviderConfig& config,
                              const std::optional<std::filesystem::path>& gt_instances = std::nullopt);

enum class LeftoverPolicy { drop, keep };
std::string to_string(LeftoverPolicy p);
LeftoverPolicy parse_leftover(const std::string& name);

struct RefineParams {
  double overlap_tau = 0.5;
  LeftoverPolicy leftover = LeftoverPolicy::drop;
  bool fill_holes = true;

  void validate() const;
  io::KeyValueFile to_kv(const std::string& prefix = "refine") const;
  static RefineParams from_kv(const io::KeyValueFile& kv, const std::string& prefix = "refine");
};

struct Selection {
  int instance_id = 0;
  double overlap = 0.0;  // |instance & coarse| / |instance|
};

struct RefinedMask {
  Mask mask;
  std::vector<Selection> selected;
  LeftoverPolicy leftover = LeftoverPolicy::drop;
  std::size_t leftover_pixels = 0;  // coarse pixels outside every instance
};

/// Selects instances covered by the coarse mask on at least `overlap_tau` of
/// their area, unions them (plus leftover coarse pixels under `keep`) and
/// fills holes.
RefinedMask refine_mask(const Mask& coarse, const InstanceMaskSet& instances, const RefineParams& params = {});

struct RefineSummary {
  std::size_t written = 0;
  std::size_t skipped = 0;
};

/// Refines the coarse mask of every record (read from the mirrored path
/// under `coarse_root`) and writes mask plus provenance sidecar under
/// `out_root`.
RefineSummary batch_refine(const data::RecordList& records, const std::filesystem::path& coarse_root,
                           const ProviderConfig& provider, const RefineParams& params,
                           const std::filesystem::path& out_root, bool resume);

}  // namespace basup::refine
