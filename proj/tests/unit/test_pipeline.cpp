#include <gtest/gtest.h>

#include "basup/error.hpp"
#include "basup/io.hpp"
#include "basup/pipeline.hpp"
#include "helpers.hpp"

using namespace basup;
using namespace basup::pipe;

namespace {

PipelineConfig tiny(const fs::path& root) {
  PipelineConfig c;
  c.output_root = root;
  c.scene.image_size = 32;
  c.scene.frames_per_sequence = 6;
  c.scene.num_sequences_before = 3;
  c.scene.num_sequences_after = 3;
  c.scene.test_sequences_before = 1;
  c.scene.test_sequences_after = 1;
  c.scene.belt_speed = 3;
  c.classifier.width = 4;
  c.classifier.input_size = 32;
  c.classifier.max_epochs = 1;
  c.classifier.batch_size = 8;
  c.seg.base_width = 4;
  c.seg.input_size = 32;
  c.seg.max_epochs = 1;
  c.panels_per_split = 1;
  return c;
}

std::size_t index_of(StageId s) {
  for (std::size_t i = 0; i < std::size(kAllStages); ++i) {
    if (kAllStages[i] == s) return i;
  }
  return 0;
}

}  // namespace

TEST(Config, KvRoundTripAndFile) {
  test::TempDir dir("pipe-cfg");
  auto c = tiny(dir.path());
  c.saliency.tau = 0.4;
  c.saliency.method = sal::Method::layercam;
  c.classifier.puzzle_enabled = true;
  c.iou_mode = eval::IouMode::per_image;
  const auto text = c.to_kv().str();
  EXPECT_EQ(PipelineConfig::from_kv(io::KeyValueFile::parse(text)).to_kv().str(), text);
  io::write_text(dir / "run.ini", text);
  EXPECT_EQ(PipelineConfig::load(dir / "run.ini").to_kv().str(), text);
  EXPECT_EQ(c.method(), "layercam+puzzle");
  c.background_removal = false;
  EXPECT_EQ(c.method(), "layercam+puzzle/two-class");
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto kv = PipelineConfig().to_kv();
  kv.set("classifier.widht", 4);
  EXPECT_THROW(PipelineConfig::from_kv(kv), ConfigError);
  auto bad = PipelineConfig().to_kv();
  bad.set("saliency.tau", 2.0);
  EXPECT_THROW(PipelineConfig::from_kv(bad), ConfigError);
  EXPECT_THROW(parse_stage("train"), ConfigError);
  EXPECT_EQ(parse_stage("generate"), StageId::data);
  EXPECT_EQ(parse_stage("ingest"), StageId::data);
}

TEST(Config, ResolvedSetsClassCountAndSeeds) {
  PipelineConfig c;
  c.seed = 5;
  EXPECT_EQ(c.resolved().classifier.num_classes, 3);
  c.background_removal = false;
  const auto r = c.resolved();
  EXPECT_EQ(r.classifier.num_classes, 2);
  EXPECT_NE(r.scene.seed, r.classifier.seed);
  c.seed = 6;
  EXPECT_NE(c.resolved().scene.seed, r.scene.seed);
}

// Property: changing a stage's parameter changes the hash of that stage and
// every later one, and nothing before it.
TEST(Plan, ChangeInvalidatesExactlyDownstream) {
  const PipelineConfig base = tiny("runs").resolved();
  const auto plan = plan_stages(base);
  const std::vector<std::pair<StageId, std::function<void(PipelineConfig&)>>> edits{
      {StageId::data, [](PipelineConfig& c) { c.scene.belt_speed = 4; }},
      {StageId::bgremove, [](PipelineConfig& c) { c.foreground.dev_thresh = 3.5; }},
      {StageId::train_classifier, [](PipelineConfig& c) { c.classifier.width = 6; }},
      {StageId::cam, [](PipelineConfig& c) { c.saliency.tau = 0.3; }},
      {StageId::refine, [](PipelineConfig& c) { c.refine.overlap_tau = 0.6; }},
      {StageId::train_seg, [](PipelineConfig& c) { c.seg.max_epochs = 2; }},
      {StageId::eval, [](PipelineConfig& c) { c.iou_mode = eval::IouMode::per_image; }},
  };
  for (const auto& [stage, edit] : edits) {
    PipelineConfig changed = base;
    edit(changed);
    const auto other = plan_stages(changed);
    for (StageId s : kAllStages) {
      const bool downstream = index_of(s) >= index_of(stage);
      EXPECT_EQ(other.hashes.at(s) != plan.hashes.at(s), downstream) << to_string(stage) << " -> " << to_string(s);
      EXPECT_EQ(other.dirs.at(s) != plan.dirs.at(s), downstream);
    }
  }
  EXPECT_EQ(plan_stages(base).hashes, plan.hashes);
}

TEST(Run, FullRunResumesAndRerunsDownstream) {
  test::TempDir dir("pipe-run");
  const auto c = tiny(dir.path());
  const auto first = run_pipeline(c);
  EXPECT_EQ(first.completed.size(), std::size(kAllStages));
  ASSERT_TRUE(first.report);
  for (eval::Stage s : eval::kStages) {
    for (const char* split : eval::kSplits) EXPECT_TRUE(first.report->value(s, split)) << split;
  }
  const auto tree = test::read_tree(dir.path());

  RunOptions resume;
  resume.resume = true;
  const auto again = run_pipeline(c, resume);
  EXPECT_TRUE(again.completed.empty());
  EXPECT_EQ(again.reused.size(), std::size(kAllStages));
  ASSERT_TRUE(again.report);
  EXPECT_EQ(again.report->csv(), first.report->csv());
  EXPECT_EQ(test::read_tree(dir.path()), tree);

  auto changed = c;
  changed.saliency.tau = 0.35;
  const auto third = run_pipeline(changed, resume);
  EXPECT_EQ(third.reused, (std::vector<StageId>{StageId::data, StageId::bgremove, StageId::train_classifier}));
  EXPECT_EQ(third.completed.size(), std::size(kAllStages) - 3);
  for (StageId s : kAllStages) EXPECT_TRUE(fs::exists(third.plan.dirs.at(s)));
}

TEST(Run, UntilStopsAfterTheStage) {
  test::TempDir dir("pipe-until");
  RunOptions o;
  o.until = StageId::bgremove;
  const auto r = run_pipeline(tiny(dir.path()), o);
  EXPECT_EQ(r.completed, (std::vector<StageId>{StageId::data, StageId::bgremove}));
  EXPECT_FALSE(fs::exists(r.plan.dirs.at(StageId::train_classifier)));
  EXPECT_FALSE(r.report);
}

TEST(Run, FailureNamesTheStage) {
  test::TempDir dir("pipe-fail");
  auto c = tiny(dir / "runs");
  c.dataset_root = dir / "no-such-dataset";
  try {
    run_pipeline(c);
    FAIL() << "expected StageFailure";
  } catch (const StageFailure& e) {
    EXPECT_EQ(e.stage(), StageId::data);
    EXPECT_NE(std::string(e.what()).find("stage 'data'"), std::string::npos) << e.what();
  }

  auto ext = tiny(dir / "runs2");
  ext.provider.provider = InstanceProvider::external_promptable;
  ext.provider.endpoint = "http://127.0.0.1:9/segment";
  ext.provider.timeout_seconds = 2;
  try {
    run_pipeline(ext);
    FAIL() << "expected StageFailure";
  } catch (const StageFailure& e) {
    EXPECT_EQ(e.stage(), StageId::refine);
  }
}
