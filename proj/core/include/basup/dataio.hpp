#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "basup/image.hpp"
#include "basup/io.hpp"
#include "basup/nn/tensor.hpp"
#include "basup/rng.hpp"

namespace basup::data {

namespace fs = std::filesystem;

enum class Layout {
  /// <root>/{train,test}/<class>/<seq_id>/<frame_idx>.{png,jpg}, ground truth
  /// mirrored under <root>/<split>/gt/<class>/<seq_id>/<frame_idx>.png.
  canonical,
  /// <root>/{train,test}/<class>/<seq_id>_<frame_idx>.{png,jpg}, masks under
  /// <root>/<split>/masks/<class>/<seq_id>_<frame_idx>.png.
  zenodo,
};

std::string to_string(Layout layout);
Layout parse_layout(const std::string& name);

struct FrameRecord {
  fs::path path;
  std::string label;  // "before", "after" (or "background" in derived sets)
  std::string sequence_id;
  int frame_index = 0;
  std::optional<fs::path> gt_mask;
  std::optional<fs::path> gt_instances;
  std::optional<fs::path> gt_flow;

  /// "<label>/<sequence>/<frame>" relative key used to mirror trees.
  fs::path relative_key() const;
};

using RecordList = std::vector<FrameRecord>;

/// Per-class record lists for each partition. Sequences are never shared
/// between partitions.
struct DatasetSplit {
  std::map<std::string, RecordList> train;
  std::map<std::string, RecordList> val;
  std::map<std::string, RecordList> test;
};

struct DatasetStats {
  /// Keyed by "<partition>/<class>".
  std::map<std::string, int> frames;
  std::map<std::string, int> sequences;
  int width = 0;
  int height = 0;
  int total_frames = 0;

  io::KeyValueFile to_kv() const;
  std::string report() const;
};

struct IngestOptions {
  Layout layout = Layout::canonical;
  std::vector<std::string> classes{"before", "after"};
  /// When false, a missing test/ tree is accepted (derived training sets).
  bool require_test = true;
  /// Read the first image to fill in the resolution.
  bool probe_resolution = true;
};

struct IngestResult {
  DatasetSplit split;
  DatasetStats stats;
};

/// Scans and validates a dataset tree. `split.val` is left empty; see
/// split_train_val. Throws DataError naming the offending path.
IngestResult ingest(const fs::path& root, const IngestOptions& options = {});

/// Recomputes stats for a split (after train/val partitioning).
DatasetStats compute_stats(const DatasetSplit& split);

/// Partitions one class's records by sequence. Validation gets
/// max(1, floor(n_seq * (1 - ratio))) sequences chosen by a seeded shuffle;
/// record order is preserved in both outputs.
std::pair<RecordList, RecordList> split_train_val(const RecordList& records, double ratio, std::uint64_t seed);

/// Applies split_train_val to every training class, with per-class seeds.
void assign_validation(DatasetSplit& split, double ratio, std::uint64_t seed);

// Batching ---------------------------------------------------------------------

struct AugmentationSpec {
  bool enabled = false;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
};

/// In-memory labeled image.
struct Sample {
  Image image;
  int label = 0;
  std::string sequence_id;
  int frame_index = 0;
};

/// Loads every record, mapping its label through `label_index`.
std::vector<Sample> load_samples(const RecordList& records, const std::map<std::string, int>& label_index);

struct Batch {
  nn::Tensor<float> images;  // (n, 3, size, size) in [0, 1]
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // into the sample list
};

/// Converts an RGB image to a (1, 3, h, w) float tensor in [0, 1].
nn::Tensor<float> to_tensor(const Image& image);
/// Writes `image` as sample `n` of `out`.
void write_tensor_sample(const Image& image, nn::Tensor<float>& out, int n);

/// Applies brightness, contrast then saturation jitter with factors drawn
/// uniformly from [1 - f, 1 + f]; operates on [0,1] data for one sample.
void color_jitter(float* rgb_planar, std::size_t plane, const AugmentationSpec& spec, Rng& rng);

/// Deterministic mini-batch stream over an in-memory sample list. Each epoch
/// visits every sample exactly once in a seed- and epoch-determined order.
class BatchIterator {
 public:
  BatchIterator(const std::vector<Sample>& samples, int batch_size, int resize_to,
                AugmentationSpec augmentation, std::uint64_t seed, bool shuffle = true);

  void start_epoch(int epoch);
  bool next(Batch& batch);
  std::size_t batches_per_epoch() const;
  /// Seed of the color jitter applied to sample `index` in the current epoch,
  /// so paired frames can receive the same photometric change.
  std::uint64_t jitter_seed(std::size_t index) const;
  int epoch() const { return epoch_; }

 private:
  const std::vector<Sample>* samples_;
  int batch_size_;
  int resize_to_;
  AugmentationSpec aug_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int epoch_ = 0;
};

}  // namespace basup::data
