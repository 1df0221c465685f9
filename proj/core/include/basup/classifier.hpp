#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "basup/dataio.hpp"
#include "basup/flow.hpp"
#include "basup/io.hpp"
#include "basup/nn/models.hpp"

namespace basup::cls {

enum class ClassLoss { categorical_cross_entropy, multi_label_soft_margin };
enum class OptimizerKind { adaptive_moment, momentum_sgd };

std::string to_string(ClassLoss loss);
ClassLoss parse_class_loss(const std::string& name);
std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct ClassifierConfig {
  int num_classes = 2;
  nn::BackboneKind backbone = nn::BackboneKind::tiny_residual;
  int width = 8;
  ClassLoss loss = ClassLoss::categorical_cross_entropy;
  OptimizerKind optimizer = OptimizerKind::adaptive_moment;
  /// Unset means 5e-4 for Adam and 0.05 for momentum SGD.
  std::optional<double> learning_rate;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int max_epochs = 25;
  /// Epochs without validation-loss improvement before stopping.
  int patience = 5;
  int batch_size = 32;
  /// Square network input side; images are resized to it.
  int input_size = 128;
  /// Color jitter is on for classifier training by default.
  data::AugmentationSpec augmentation{.enabled = true};
  /// Fraction of each class's sequences kept for training.
  double train_ratio = 0.8;
  bool puzzle_enabled = false;
  bool temporal_enabled = false;
  double alpha = 2.0;
  double beta = 6.0;
  int tile_grid = 2;
  /// Upper bound on frame pairs per batch for the temporal term.
  int temporal_pairs = 8;
  /// Start from the parameters of `init_checkpoint` instead of random init.
  bool pretrained = false;
  std::filesystem::path init_checkpoint;
  std::uint64_t seed = 1;

  double effective_learning_rate() const;
  void validate() const;
  io::KeyValueFile to_kv(const std::string& prefix = "classifier") const;
  static ClassifierConfig from_kv(const io::KeyValueFile& kv, const std::string& prefix = "classifier");
};

using Net = nn::ClassMapNet<float>;

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_classification = 0.0;
  double train_puzzle = 0.0;
  double train_temporal = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct ClassifierCheckpoint {
  ClassifierConfig config;
  /// Label order: class index i is labels[i].
  std::vector<std::string> labels;
  std::shared_ptr<Net> model;
  std::vector<EpochRecord> curves;
  int best_epoch = -1;
  bool stopped_early = false;

  int label_index(const std::string& label) const;
  std::string curves_csv() const;
};

inline constexpr char kCheckpointMagic[8] = {'B', 'A', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ClassifierCheckpoint& ckpt, const std::filesystem::path& path);
ClassifierCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the network described by `config` with its seeded initialization.
std::shared_ptr<Net> make_network(const ClassifierConfig& config);

// Auxiliary-loss building blocks -------------------------------------------------

/// Splits each image into grid x grid non-overlapping tiles. Output sample
/// order is (image, tile row, tile column). Throws ShapeError when the sides
/// are not divisible by `grid`.
template <typename T>
nn::Tensor<T> tile_batch(const nn::Tensor<T>& x, int grid);
/// Inverse of tile_batch.
template <typename T>
nn::Tensor<T> merge_tiles(const nn::Tensor<T>& tiles, int grid);

/// Mean |full - merged| over the label channel of each sample. Gradients
/// are written when the output pointers are non-null.
template <typename T>
T puzzle_term(const nn::Tensor<T>& full, const nn::Tensor<T>& merged, std::span<const int> labels,
              nn::Tensor<T>* dfull, nn::Tensor<T>* dmerged);

/// One frame pair inside a batch of class maps.
struct MapPair {
  int first = 0;   // sample index of frame t
  int second = 0;  // sample index of frame t+1
  int channel = 0;
  const FlowField* flow = nullptr;  // at map resolution
};

/// For every pixel p of map t with p + flow(p) inside map t+1, compares
/// map_t(p) to the bilinear read of map_{t+1} at p + flow(p); returns the
/// mean absolute difference over all valid pixels of all pairs (0 when none
/// are valid). Gradients are accumulated into `dmaps` when non-null.
template <typename T>
T temporal_term(const nn::Tensor<T>& maps, std::span<const MapPair> pairs, nn::Tensor<T>* dmaps,
                std::size_t* valid_count = nullptr);

struct LossSetup {
  ClassLoss loss = ClassLoss::categorical_cross_entropy;
  bool puzzle = false;
  bool temporal = false;
  double alpha = 2.0;
  double beta = 6.0;
  int grid = 2;
};

struct LossTerms {
  double total = 0.0;
  double classification = 0.0;
  double puzzle = 0.0;
  double temporal = 0.0;
  std::size_t correct = 0;
};

/// Successor frames for the temporal term: `frames` holds one frame t+1 for
/// each entry of `partner` (index into the main batch), with flows already
/// at class-map resolution.
template <typename T>
struct TemporalBatch {
  nn::Tensor<T> frames;
  std::vector<int> partner;
  std::vector<FlowField> flows;
};

/// Forward pass of the full objective; with `backward` set, parameter
/// gradients are accumulated (not zeroed first).
template <typename T>
LossTerms compute_loss(nn::ClassMapNet<T>& net, const nn::Tensor<T>& x, std::span<const int> labels,
                       const TemporalBatch<T>* pairs, const LossSetup& setup, bool backward);

/// Model-level puzzle reconstruction loss on a batch.
template <typename T>
T puzzle_loss(const nn::ClassMapNet<T>& net, const nn::Tensor<T>& x, std::span<const int> labels, int grid);

/// Model-level temporal consistency loss for frames t, t+1 and their flow at
/// frame resolution (one flow per sample).
template <typename T>
T temporal_consistency_loss(const nn::ClassMapNet<T>& net, const nn::Tensor<T>& frames_t,
                            const nn::Tensor<T>& frames_t1, std::span<const FlowField> flows,
                            std::span<const int> labels);

// Training ------------------------------------------------------------------------

struct TrainingData {
  std::vector<std::string> classes;
  std::vector<data::Sample> train;
  std::vector<data::Sample> val;
  /// Per train sample: index of its successor frame, when one exists.
  std::vector<std::optional<std::size_t>> next;
  /// Per train sample: flow to the successor at frame resolution.
  std::vector<FlowField> flow_to_next;
};

/// Loads a split's train and val partitions. With `with_flow`, successor
/// frames are linked and flows read from ground truth or estimated by block
/// matching.
TrainingData load_training_data(const data::DatasetSplit& split, const std::vector<std::string>& classes,
                                bool with_flow, const flow::BlockMatchParams& matcher = {});

struct TrainObserver {
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains with early stopping and returns the best-validation-loss model.
/// Throws DivergenceError on a non-finite loss.
ClassifierCheckpoint train_classifier(const TrainingData& data, const ClassifierConfig& config,
                                      const TrainObserver& observer = {});

/// Ingests `root` (classes taken from its train/ folders), splits by sequence
/// and trains.
ClassifierCheckpoint train_classifier(const std::filesystem::path& root, const ClassifierConfig& config,
                                      const TrainObserver& observer = {});

/// Class probabilities (softmax over pooled logits), one row per image.
std::vector<std::vector<double>> predict(const ClassifierCheckpoint& ckpt, const std::vector<Image>& images);
std::vector<std::vector<double>> predict(const Net& net, int input_size, const std::vector<Image>& images);

/// Classification accuracy over labeled samples.
double accuracy(const Net& net, int input_size, const std::vector<data::Sample>& samples);

}  // namespace basup::cls
