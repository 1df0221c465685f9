#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "basup/dataio.hpp"
#include "basup/error.hpp"
#include "basup/io.hpp"
#include "basup/scenegen.hpp"
#include "helpers.hpp"

using namespace basup;
using namespace basup::data;
namespace fs = std::filesystem;

namespace {

void touch(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream(p).put('\0');
}

// Zenodo-layout tree of empty files: `frames` spread over `sequences`.
void mock_partition(const fs::path& root, const std::string& partition, const std::string& cls, int sequences,
                    int frames, const std::string& seq_prefix) {
  const bool test = partition == "test";
  for (int s = 0; s < sequences; ++s) {
    const int n = frames / sequences + (s < frames % sequences ? 1 : 0);
    for (int f = 0; f < n; ++f) {
      const std::string stem = seq_prefix + std::to_string(s) + "_" + std::to_string(f);
      touch(root / partition / cls / (stem + ".png"));
      if (test) touch(root / partition / "masks" / cls / (stem + ".png"));
    }
  }
}

scene::SceneConfig tiny_scene() {
  scene::SceneConfig c;
  c.image_size = 32;
  c.frames_per_sequence = 5;
  c.num_sequences_before = 4;
  c.num_sequences_after = 3;
  c.test_sequences_before = 1;
  c.test_sequences_after = 1;
  return c;
}

std::vector<Sample> toy_samples(int n) {
  std::vector<Sample> out;
  Rng rng(1);
  for (int i = 0; i < n; ++i) out.push_back({test::random_image(12, 10, rng), i % 2, "s" + std::to_string(i / 3), i % 3});
  return out;
}

}  // namespace

// Frame and sequence counts of the public before/after dataset release.
TEST(Ingest, ZenodoTreeWithPublishedCounts) {
  test::TempDir dir("zenodo");
  mock_partition(dir.path(), "train", "before", 250, 4851, "b");
  mock_partition(dir.path(), "train", "after", 270, 4712, "a");
  mock_partition(dir.path(), "test", "before", 34, 496, "tb");
  mock_partition(dir.path(), "test", "after", 43, 1001, "ta");
  IngestOptions opt;
  opt.layout = Layout::zenodo;
  opt.probe_resolution = false;
  const auto r = ingest(dir.path(), opt);
  EXPECT_EQ(r.stats.frames.at("train/before"), 4851);
  EXPECT_EQ(r.stats.frames.at("train/after"), 4712);
  EXPECT_EQ(r.stats.frames.at("test/before"), 496);
  EXPECT_EQ(r.stats.frames.at("test/after"), 1001);
  EXPECT_EQ(r.stats.sequences.at("train/before") + r.stats.sequences.at("test/before"), 284);
  EXPECT_EQ(r.stats.sequences.at("train/after") + r.stats.sequences.at("test/after"), 313);
  EXPECT_EQ(r.stats.total_frames, 11060);
  for (const auto& rec : r.split.test.at("after")) ASSERT_TRUE(rec.gt_mask.has_value());
}

TEST(Ingest, MissingTestMaskNamesExpectedPath) {
  test::TempDir dir("zenodo-missing");
  mock_partition(dir.path(), "train", "before", 2, 4, "b");
  mock_partition(dir.path(), "train", "after", 2, 4, "a");
  mock_partition(dir.path(), "test", "before", 1, 2, "tb");
  mock_partition(dir.path(), "test", "after", 1, 2, "ta");
  fs::remove(dir / "test/masks/after/ta0_1.png");
  IngestOptions opt;
  opt.layout = Layout::zenodo;
  opt.probe_resolution = false;
  try {
    ingest(dir.path(), opt);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("masks/after/ta0_1.png"), std::string::npos) << e.what();
  }
}

TEST(Ingest, RejectsBadNamesAndMissingFolders) {
  test::TempDir dir("zenodo-bad");
  mock_partition(dir.path(), "train", "before", 1, 2, "b");
  mock_partition(dir.path(), "test", "before", 1, 2, "tb");
  mock_partition(dir.path(), "test", "after", 1, 2, "ta");
  IngestOptions opt;
  opt.layout = Layout::zenodo;
  opt.probe_resolution = false;
  EXPECT_THROW(ingest(dir.path(), opt), DataError);  // no train/after
  mock_partition(dir.path(), "train", "after", 1, 2, "a");
  touch(dir / "train/after/noindex.png");
  EXPECT_THROW(ingest(dir.path(), opt), DataError);
  EXPECT_THROW(ingest(dir / "nowhere", opt), DataError);
}

TEST(Ingest, CanonicalGeneratedTree) {
  test::TempDir dir("canonical");
  const auto c = tiny_scene();
  scene::generate_scene(c, dir.path());
  const auto r = ingest(dir.path());
  EXPECT_EQ(r.stats.frames.at("train/before"), 20);
  EXPECT_EQ(r.stats.frames.at("train/after"), 15);
  EXPECT_EQ(r.stats.sequences.at("test/after"), 1);
  EXPECT_EQ(r.stats.width, 32);
  for (const auto& [cls, recs] : r.split.test) {
    for (const auto& rec : recs) {
      ASSERT_TRUE(rec.gt_mask.has_value());
      EXPECT_TRUE(fs::exists(*rec.gt_mask));
    }
  }
  const auto& first = r.split.train.at("before").front();
  EXPECT_EQ(first.relative_key().generic_string(),
            "before/" + first.sequence_id + "/" + scene::frame_file_stem(first.frame_index));
}

// Property: validation and training never share a sequence, every record lands
// in exactly one side, and the split is a function of the seed.
TEST(Split, SequenceDisjointProperty) {
  Rng gen(11);
  for (int trial = 0; trial < 40; ++trial) {
    RecordList recs;
    const int seqs = static_cast<int>(gen.uniform_int(2, 30));
    for (int s = 0; s < seqs; ++s) {
      const int frames = static_cast<int>(gen.uniform_int(1, 6));
      for (int f = 0; f < frames; ++f) {
        FrameRecord r;
        r.path = "x" + std::to_string(s) + "_" + std::to_string(f);
        r.label = "before";
        r.sequence_id = "s" + std::to_string(s);
        r.frame_index = f;
        recs.push_back(r);
      }
    }
    const double ratio = gen.uniform(0.05, 0.95);
    const auto seed = gen.next();
    const auto [train, val] = split_train_val(recs, ratio, seed);
    EXPECT_EQ(train.size() + val.size(), recs.size());
    std::set<std::string> ts, vs;
    for (const auto& r : train) ts.insert(r.sequence_id);
    for (const auto& r : val) vs.insert(r.sequence_id);
    for (const auto& s : vs) EXPECT_FALSE(ts.count(s));
    const auto expected_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::floor(seqs * (1.0 - ratio) + 1e-9)), 1, static_cast<std::size_t>(seqs) - 1);
    EXPECT_EQ(vs.size(), expected_val);
    const auto again = split_train_val(recs, ratio, seed);
    EXPECT_EQ(again.second.size(), val.size());
    for (std::size_t i = 0; i < val.size(); ++i) EXPECT_EQ(again.second[i].path, val[i].path);
  }
}

TEST(Split, RejectsSingleSequenceAndBadRatio) {
  RecordList recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[static_cast<std::size_t>(i)].sequence_id = "only";
    recs[static_cast<std::size_t>(i)].frame_index = i;
  }
  EXPECT_THROW(split_train_val(recs, 0.8, 0), DataError);
  recs[2].sequence_id = "other";
  EXPECT_THROW(split_train_val(recs, 1.0, 0), ConfigError);
  EXPECT_THROW(split_train_val(recs, 0.0, 0), ConfigError);
}

// Property: every epoch visits each sample exactly once, batch sizes sum to the
// sample count, and the stream is a function of (seed, epoch).
TEST(Batches, EpochCoverageProperty) {
  const auto samples = toy_samples(23);
  for (int bs : {1, 4, 7, 23, 40}) {
    BatchIterator a(samples, bs, 8, {}, 5), b(samples, bs, 8, {}, 5);
    for (int epoch = 0; epoch < 3; ++epoch) {
      a.start_epoch(epoch);
      b.start_epoch(epoch);
      std::multiset<std::size_t> seen;
      Batch ba, bb;
      std::size_t batches = 0;
      while (a.next(ba)) {
        ASSERT_TRUE(b.next(bb));
        EXPECT_EQ(ba.indices, bb.indices);
        EXPECT_EQ(ba.images.storage(), bb.images.storage());
        EXPECT_EQ(ba.images.h(), 8);
        EXPECT_EQ(ba.images.n(), static_cast<int>(ba.indices.size()));
        for (std::size_t i = 0; i < ba.indices.size(); ++i) {
          EXPECT_EQ(ba.labels[i], samples[ba.indices[i]].label);
        }
        seen.insert(ba.indices.begin(), ba.indices.end());
        ++batches;
      }
      EXPECT_EQ(batches, a.batches_per_epoch());
      ASSERT_EQ(seen.size(), samples.size());
      for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_EQ(seen.count(i), 1u);
    }
  }
}

TEST(Batches, UnshuffledOrderIsSampleOrder) {
  const auto samples = toy_samples(9);
  BatchIterator it(samples, 4, 8, {}, 0, false);
  it.start_epoch(3);
  Batch b;
  std::vector<std::size_t> order;
  while (it.next(b)) order.insert(order.end(), b.indices.begin(), b.indices.end());
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
}

TEST(Batches, TensorMatchesImageScaling) {
  Rng rng(2);
  const auto img = test::random_image(5, 4, rng);
  const auto t = to_tensor(img);
  ASSERT_EQ(t.c(), 3);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int k = 0; k < 3; ++k) EXPECT_FLOAT_EQ(t.at(0, k, y, x), img.at(x, y, k) / 255.0f);
    }
  }
}

TEST(Jitter, ZeroStrengthIsIdentityAndOutputStaysInRange) {
  Rng rng(3);
  auto t = test::random_tensor<float>(1, 3, 6, 6, rng);
  const auto original = t.storage();
  AugmentationSpec none{true, 0.0, 0.0, 0.0};
  Rng j(4);
  color_jitter(t.data(), t.plane(), none, j);
  EXPECT_EQ(t.storage(), original);

  AugmentationSpec strong{true, 0.9, 0.9, 0.9};
  for (int trial = 0; trial < 50; ++trial) {
    color_jitter(t.data(), t.plane(), strong, j);
    for (float v : t.storage()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}
