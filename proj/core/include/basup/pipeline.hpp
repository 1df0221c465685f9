#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "basup/bgremoval.hpp"
#include "basup/classifier.hpp"
#include "basup/dataio.hpp"
#include "basup/evalreport.hpp"
#include "basup/io.hpp"
#include "basup/refine.hpp"
#include "basup/saliency.hpp"
#include "basup/scenegen.hpp"
#include "basup/segtrain.hpp"

namespace basup::pipe {

namespace fs = std::filesystem;

/// Pipeline stages in execution order. The first stage is `generate` for
/// synthetic runs and `ingest` when a dataset root is configured.
enum class StageId { data, bgremove, train_classifier, cam, refine, train_seg, segment, eval };

inline constexpr StageId kAllStages[] = {StageId::data,    StageId::bgremove,  StageId::train_classifier,
                                         StageId::cam,     StageId::refine,    StageId::train_seg,
                                         StageId::segment, StageId::eval};

std::string to_string(StageId stage);
/// Accepts the subcommand names; "generate" and "ingest" both map to data.
StageId parse_stage(const std::string& name);

struct SaliencySettings {
  sal::Method method = sal::Method::gradcam;
  sal::ThresholdMode threshold = sal::ThresholdMode::fixed;
  double tau = 0.25;
  std::string layer = sal::kLastConv;

  void validate() const;
  io::KeyValueFile to_kv(const std::string& prefix = "saliency") const;
  static SaliencySettings from_kv(const io::KeyValueFile& kv, const std::string& prefix = "saliency");
};

struct PipelineConfig {
  /// Empty means a synthetic scene is generated from `scene`.
  fs::path dataset_root;
  data::Layout layout = data::Layout::canonical;
  scene::SceneConfig scene;
  /// Three-class background-removal strategy; off trains before/after only.
  bool background_removal = true;
  br::ForegroundParams foreground;
  cls::ClassifierConfig classifier;
  SaliencySettings saliency;
  refine::ProviderConfig provider;
  refine::RefineParams refine;
  seg::SegConfig seg;
  eval::IouMode iou_mode = eval::IouMode::dataset_level;
  int panels_per_split = 4;
  /// Method name stamped into the report; empty derives one.
  std::string method_name;
  std::uint64_t seed = 0;
  fs::path output_root = "runs";

  void validate() const;
  /// The INI form with [global], [scene], [bgremoval], [classifier],
  /// [saliency], [refine], [segtrain] and [eval] sections.
  io::KeyValueFile to_kv() const;
  static PipelineConfig from_kv(const io::KeyValueFile& kv);
  static PipelineConfig load(const fs::path& path);

  std::string method() const;
  /// Copy with every stage seed derived from `seed` and the classifier class
  /// count matching the strategy.
  PipelineConfig resolved() const;
};

/// Content-addressed stage directories. Each stage's hash covers its own
/// settings and the hash of the stage before it, so a changed parameter
/// invalidates exactly the stages downstream of it.
struct StagePlan {
  std::map<StageId, std::string> hashes;
  std::map<StageId, fs::path> dirs;
  /// Canonical text of each stage's settings, as hashed.
  std::map<StageId, std::string> settings;
};

StagePlan plan_stages(const PipelineConfig& resolved);

struct RunOptions {
  std::optional<StageId> until;
  /// Reuse completed stages and continue partial ones; otherwise every
  /// stage directory is rebuilt.
  bool resume = false;
  std::function<void(const std::string&)> log;
};

struct RunResult {
  StagePlan plan;
  std::vector<StageId> completed;
  std::vector<StageId> reused;
  std::optional<eval::EvalReport> report;
  cls::ClassifierCheckpoint classifier;
};

/// Runs the stages in order up to `until`. A failing stage throws
/// StageFailure; its directory is left as it was for inspection and resume.
RunResult run_pipeline(const PipelineConfig& config, const RunOptions& options = {});

class StageFailure : public std::runtime_error {
 public:
  StageFailure(StageId stage, const std::string& what)
      : std::runtime_error("stage '" + to_string(stage) + "' failed: " + what), stage_(stage) {}
  StageId stage() const { return stage_; }

 private:
  StageId stage_;
};

/// Dataset root of a run: the generated scene directory or the configured root.
fs::path dataset_root(const PipelineConfig& resolved, const StagePlan& plan);

/// Records the pipeline applies saliency and refinement to: all train
/// before frames and both test splits.
struct RunRecords {
  data::RecordList train_before;
  std::map<std::string, data::RecordList> test;
};
RunRecords collect_records(const PipelineConfig& resolved, const fs::path& root);

}  // namespace basup::pipe
