#include <gtest/gtest.h>

#include "basup/classifier.hpp"
#include "basup/error.hpp"
#include "basup/io.hpp"
#include "basup/segtrain.hpp"
#include "helpers.hpp"

using namespace basup;
using namespace basup::seg;

namespace {

SegConfig small_config() {
  SegConfig c;
  c.base_width = 4;
  c.input_size = 32;
  c.max_epochs = 3;
  c.batch_size = 4;
  return c;
}

std::vector<SegSample> random_samples(int n, Rng& rng, bool empty_masks) {
  std::vector<SegSample> out;
  for (int i = 0; i < n; ++i) {
    Mask m = empty_masks ? make_mask(32, 32) : test::rect_mask(32, 32, 4, 6, 20, 22);
    out.push_back({test::random_image(32, 32, rng), m, "s" + std::to_string(i)});
  }
  return out;
}

double iou(const Mask& a, const Mask& b) {
  return test::brute_iou({a}, {b}) / 100.0;
}

}  // namespace

TEST(Decide, UnwantedOnlyWhenStrictlyMoreLikely) {
  Rng rng(1);
  FloatMap pb(7, 5, 1), pu(7, 5, 1);
  for (std::size_t i = 0; i < pb.pixel_count(); ++i) {
    pu[i] = static_cast<float>(rng.uniform_int(0, 4)) / 4.0f;
    pb[i] = 1.0f - pu[i];
  }
  const auto m = decide(pb, pu);
  for (std::size_t i = 0; i < m.pixel_count(); ++i) EXPECT_EQ(m[i] != 0, pu[i] > pb[i]);
  FloatMap half(3, 3, 1);
  half.storage().assign(9, 0.5f);
  EXPECT_EQ(count_nonzero(decide(half, half)), 0u);
}

TEST(Segmenter, EmptyPseudoMasksPredictAlmostNothing) {
  Rng rng(2);
  const auto train = random_samples(12, rng, true);
  const auto val = random_samples(4, rng, true);
  auto c = small_config();
  c.max_epochs = 10;
  const auto ckpt = train_segmenter(train, val, c);
  std::size_t on = 0, total = 0;
  for (const auto& s : train) {
    const auto m = segment(ckpt, s.image);
    on += count_nonzero(m);
    total += m.pixel_count();
  }
  EXPECT_LT(static_cast<double>(on) / static_cast<double>(total), 0.001);
}

TEST(Segmenter, MemorizesRepeatedImage) {
  Rng rng(3);
  const Image img = test::random_image(32, 32, rng);
  const Mask mask = test::rect_mask(32, 32, 5, 8, 19, 25);
  std::vector<SegSample> train(30, SegSample{img, mask, "a"});
  std::vector<SegSample> val{SegSample{img, mask, "b"}};
  auto c = small_config();
  c.max_epochs = 25;
  c.patience = 25;
  const auto ckpt = train_segmenter(train, val, c);
  EXPECT_GE(iou(segment(ckpt, img), mask), 0.95);
}

TEST(Segmenter, TrainingIsDeterministic) {
  Rng rng(4);
  const auto train = random_samples(8, rng, false);
  const auto val = random_samples(2, rng, false);
  auto c = small_config();
  c.max_epochs = 2;
  const auto a = train_segmenter(train, val, c);
  const auto b = train_segmenter(train, val, c);
  ASSERT_EQ(a.curves.size(), b.curves.size());
  for (std::size_t i = 0; i < a.curves.size(); ++i) {
    EXPECT_EQ(a.curves[i].train_loss, b.curves[i].train_loss);
    EXPECT_EQ(a.curves[i].val_loss, b.curves[i].val_loss);
    EXPECT_EQ(a.curves[i].val_iou, b.curves[i].val_iou);
  }
  const auto pa = a.model->parameters(), pb = b.model->parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) ASSERT_EQ(pa[i]->value.storage(), pb[i]->value.storage());
}

TEST(Segmenter, BestEpochHasLowestValidationLoss) {
  Rng rng(5);
  const auto train = random_samples(8, rng, false);
  const auto val = random_samples(3, rng, false);
  auto c = small_config();
  c.max_epochs = 6;
  c.patience = 2;
  const auto ckpt = train_segmenter(train, val, c);
  ASSERT_GE(ckpt.best_epoch, 1);
  const double best = ckpt.curves[static_cast<std::size_t>(ckpt.best_epoch - 1)].val_loss;
  for (const auto& e : ckpt.curves) EXPECT_GE(e.val_loss, best);
}

// Property: for any image size the mask has the image's shape and 0/1 values.
TEST(Segment, OutputShapeProperty) {
  auto net = std::make_shared<SegNet>(4, 7);
  Rng rng(6);
  for (int trial = 0; trial < 8; ++trial) {
    const int w = static_cast<int>(rng.uniform_int(9, 70)), h = static_cast<int>(rng.uniform_int(9, 70));
    const auto img = test::random_image(w, h, rng);
    const auto m = segment(*net, 32, img);
    ASSERT_EQ(m.width(), w);
    ASSERT_EQ(m.height(), h);
    for (auto v : m.storage()) ASSERT_LE(v, 1);
    const auto p = probability(*net, 32, img);
    for (float v : p.storage()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Checkpoint, RoundTripAndWrongMagic) {
  test::TempDir dir("seg-ckpt");
  Rng rng(7);
  auto c = small_config();
  c.max_epochs = 1;
  const auto ckpt = train_segmenter(random_samples(4, rng, false), random_samples(2, rng, false), c);
  save_checkpoint(ckpt, dir / "s.bin");
  const auto back = load_checkpoint(dir / "s.bin");
  EXPECT_EQ(back.config.to_kv().str(), ckpt.config.to_kv().str());
  const auto img = test::random_image(40, 30, rng);
  EXPECT_EQ(segment(back, img), segment(ckpt, img));
  EXPECT_EQ(probability(*back.model, 32, img), probability(*ckpt.model, 32, img));

  cls::ClassifierConfig cc;
  cc.width = 4;
  cls::ClassifierCheckpoint other;
  other.config = cc;
  other.labels = {"before", "after"};
  other.model = cls::make_network(cc);
  cls::save_checkpoint(other, dir / "c.bin");
  EXPECT_THROW(load_checkpoint(dir / "c.bin"), Error);
}

TEST(Batch, WritesMirroredMasksAndResumes) {
  test::TempDir dir("seg-batch");
  Rng rng(8);
  SegCheckpoint ckpt;
  ckpt.config = small_config();
  ckpt.model = std::make_shared<SegNet>(4, 3);
  data::RecordList recs;
  for (int i = 0; i < 3; ++i) {
    data::FrameRecord r;
    r.path = dir / ("f" + std::to_string(i) + ".png");
    io::write_image(r.path, test::random_image(24, 24, rng));
    r.label = "after";
    r.sequence_id = "0001";
    r.frame_index = i;
    recs.push_back(r);
  }
  EXPECT_EQ(batch_segment(ckpt, recs, dir / "out", false).written, 3u);
  const auto tree = test::read_tree(dir / "out");
  EXPECT_EQ(tree.size(), 3u);
  EXPECT_EQ(batch_segment(ckpt, recs, dir / "out", true).skipped, 3u);
  EXPECT_EQ(test::read_tree(dir / "out"), tree);
}

TEST(SegConfig, ValidationAndKvRoundTrip) {
  SegConfig c;
  c.positive_weight = 2.5;
  c.base_width = 6;
  EXPECT_EQ(SegConfig::from_kv(io::KeyValueFile::parse(c.to_kv().str())).to_kv().str(), c.to_kv().str());
  for (auto breaker : std::vector<std::function<void(SegConfig&)>>{
           [](SegConfig& x) { x.input_size = 30; }, [](SegConfig& x) { x.learning_rate = 0.0; },
           [](SegConfig& x) { x.architecture = "transformer"; }, [](SegConfig& x) { x.batch_size = 0; }}) {
    SegConfig bad;
    breaker(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }
}
