#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "basup/dataio.hpp"
#include "basup/image.hpp"
#include "basup/io.hpp"

namespace basup::eval {

enum class IouMode {
  /// Pixel intersections and unions summed over all frames.
  dataset_level,
  /// Mean of per-frame IoU; empty/empty frames score 1, empty gt with a
  /// nonempty prediction scores 0.
  per_image,
};

std::string to_string(IouMode mode);
IouMode parse_iou_mode(const std::string& name);

/// Unwanted-class confusion totals. Adding frames is commutative, so partial
/// accumulators can be merged in any order.
struct IouAccumulator {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;
  std::uint64_t pred_pixels = 0;
  std::uint64_t gt_pixels = 0;
  std::uint64_t total_pixels = 0;
  double per_image_sum = 0.0;
  std::size_t frames = 0;

  void add(const Mask& pred, const Mask& gt);
  void merge(const IouAccumulator& other);
  /// Percentage in [0, 100]. An empty accumulator scores 100 in
  /// dataset_level mode when nothing was predicted or annotated.
  double miou(IouMode mode) const;
};

/// Percentage IoU of paired masks. Throws ShapeError on count or size mismatch.
double iou(std::span<const Mask> pred, std::span<const Mask> gt, IouMode mode = IouMode::dataset_level);
double iou(const Mask& pred, const Mask& gt, IouMode mode = IouMode::dataset_level);

enum class Stage { coarse, refined, segmenter };
inline constexpr Stage kStages[] = {Stage::coarse, Stage::refined, Stage::segmenter};
inline constexpr const char* kSplits[] = {"before", "after"};

/// "C", "R" or "S".
std::string stage_letter(Stage stage);
Stage parse_stage(const std::string& name);

struct Cell {
  Stage stage = Stage::coarse;
  std::string split;
  bool present = false;
  double miou = 0.0;
  IouAccumulator totals;
};

struct EvalReport {
  std::string method;
  IouMode mode = IouMode::dataset_level;
  std::vector<Cell> cells;  // stage-major, split-minor
  std::vector<std::string> warnings;
  /// Stage name to config hash of the artifacts that produced it.
  std::map<std::string, std::string> config_hashes;
  double seconds = 0.0;

  const Cell* find(Stage stage, const std::string& split) const;
  /// Value of a present cell, nullopt when absent.
  std::optional<double> value(Stage stage, const std::string& split) const;

  /// One row per present cell. Timing is excluded so reruns compare equal.
  std::string csv() const;
  /// Aligned text table with stages as rows and splits as columns.
  std::string table() const;
  io::KeyValueFile to_kv() const;
  static EvalReport from_kv(const io::KeyValueFile& kv);
};

struct ProtocolInputs {
  std::string method = "gradcam";
  IouMode mode = IouMode::dataset_level;
  /// Test records per split; each needs a ground-truth mask.
  std::map<std::string, data::RecordList> test;
  /// Stage mask trees mirroring FrameRecord::relative_key(). A stage with no
  /// entry, a missing root or any missing mask is reported absent.
  std::map<Stage, std::filesystem::path> stage_roots;
  std::map<std::string, std::string> config_hashes;
};

EvalReport run_protocol(const ProtocolInputs& inputs);

struct PanelOptions {
  std::filesystem::path out_dir;
  /// Optional grayscale saliency maps mirrored like the mask trees.
  std::optional<std::filesystem::path> saliency_root;
  int frames_per_split = 4;
  std::uint64_t seed = 0;
};

/// Writes image | saliency | C | R | S | gt strips for frames sampled from
/// each split. Missing tiles are drawn mid-gray. Returns the written paths.
std::vector<std::filesystem::path> write_panels(const ProtocolInputs& inputs, const PanelOptions& options);

struct RankedMethod {
  std::string method;
  double key = 0.0;
  /// Per shared cell ("C/before", ...): this method minus the top method.
  std::map<std::string, double> deltas;
};

struct Comparison {
  /// Cell used for ranking, e.g. "R/before".
  std::string ranking_cell;
  std::vector<std::string> shared_cells;
  std::vector<RankedMethod> ranking;

  std::string table() const;
};

/// Ranks reports by R(Ts^B) when all of them have it, otherwise by the first
/// shared cell in the order R, C, S (before split first). Throws ConfigError
/// for fewer than two reports and DataError when no cell is shared.
Comparison compare_methods(std::span<const EvalReport> reports);

}  // namespace basup::eval
