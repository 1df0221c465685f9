#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "basup/classifier.hpp"
#include "basup/error.hpp"
#include "basup/io.hpp"
#include "helpers.hpp"

using namespace basup;
using namespace basup::cls;

namespace {

TrainingData red_blue(int per_class, int val_per_class, int size) {
  TrainingData d;
  d.classes = {"before", "after"};
  for (int i = 0; i < per_class; ++i) {
    const bool val = i >= per_class - val_per_class;
    auto& dst = val ? d.val : d.train;
    dst.push_back({test::solid_image(size, size, 220, 20, 20), 0, "r" + std::to_string(i), 0});
    dst.push_back({test::solid_image(size, size, 20, 20, 220), 1, "b" + std::to_string(i), 0});
  }
  d.next.assign(d.train.size(), std::nullopt);
  d.flow_to_next.assign(d.train.size(), FlowField{});
  return d;
}

// Logistic regression on per-image channel means, fitted by gradient descent.
double channel_mean_oracle_accuracy(const std::vector<data::Sample>& samples) {
  std::vector<std::array<double, 3>> feats;
  for (const auto& s : samples) {
    std::array<double, 3> m{};
    for (std::size_t p = 0; p < s.image.pixel_count(); ++p) {
      for (std::size_t k = 0; k < 3; ++k) m[k] += s.image[3 * p + k] / 255.0;
    }
    for (auto& v : m) v /= static_cast<double>(s.image.pixel_count());
    feats.push_back(m);
  }
  std::array<double, 4> w{};
  for (int it = 0; it < 2000; ++it) {
    std::array<double, 4> g{};
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double z = w[0] * feats[i][0] + w[1] * feats[i][1] + w[2] * feats[i][2] + w[3];
      const double err = 1.0 / (1.0 + std::exp(-z)) - (samples[i].label == 1 ? 1.0 : 0.0);
      for (std::size_t k = 0; k < 3; ++k) g[k] += err * feats[i][k];
      g[3] += err;
    }
    for (std::size_t k = 0; k < 4; ++k) w[k] -= 0.5 * g[k] / static_cast<double>(samples.size());
  }
  std::size_t right = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double z = w[0] * feats[i][0] + w[1] * feats[i][1] + w[2] * feats[i][2] + w[3];
    right += (z > 0) == (samples[i].label == 1);
  }
  return static_cast<double>(right) / static_cast<double>(samples.size());
}

ClassifierConfig toy_config() {
  ClassifierConfig c;
  c.width = 4;
  c.input_size = 32;
  c.max_epochs = 5;
  c.batch_size = 16;
  return c;
}

double bilinear_oracle(const double* plane, int w, int h, double x, double y) {
  double s = 0.0;
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      s += plane[j * w + i] * std::max(0.0, 1.0 - std::abs(x - i)) * std::max(0.0, 1.0 - std::abs(y - j));
    }
  }
  return s;
}

}  // namespace

// Default schedule: accuracy must reach 1.0 in the first five epochs, and the
// finished checkpoint is confident on a red image.
TEST(Classifier, RedBlueToySeparatesWithinFiveEpochs) {
  const auto d = red_blue(64, 12, 32);
  // The task is linearly separable by channel means.
  ASSERT_DOUBLE_EQ(channel_mean_oracle_accuracy(d.val), 1.0);
  ClassifierConfig c;
  c.input_size = 32;
  const auto ckpt = train_classifier(d, c);
  ASSERT_GE(ckpt.curves.size(), 5u);
  const bool reached = std::any_of(ckpt.curves.begin(), ckpt.curves.begin() + 5,
                                   [](const EpochRecord& r) { return r.val_accuracy == 1.0; });
  EXPECT_TRUE(reached);
  EXPECT_DOUBLE_EQ(accuracy(*ckpt.model, 32, d.val), 1.0);
  const auto p = predict(ckpt, {test::solid_image(32, 32, 220, 20, 20)});
  EXPECT_GT(p[0][static_cast<std::size_t>(ckpt.label_index("before"))], 0.99);
}

TEST(Classifier, BestEpochHasLowestValidationLoss) {
  auto d = red_blue(24, 6, 32);
  auto c = toy_config();
  c.max_epochs = 8;
  c.patience = 2;
  const auto ckpt = train_classifier(d, c);
  ASSERT_GE(ckpt.best_epoch, 1);
  ASSERT_LE(static_cast<std::size_t>(ckpt.best_epoch), ckpt.curves.size());
  const double best = ckpt.curves[static_cast<std::size_t>(ckpt.best_epoch - 1)].val_loss;
  for (const auto& r : ckpt.curves) EXPECT_GE(r.val_loss, best);
  if (ckpt.stopped_early) {
    EXPECT_EQ(ckpt.curves.size(), static_cast<std::size_t>(ckpt.best_epoch + c.patience));
  }
}

TEST(Classifier, PredictionsAreSimplexRows) {
  Rng rng(3);
  ClassifierConfig c;
  c.num_classes = 3;
  c.width = 4;
  c.input_size = 32;
  ClassifierCheckpoint ckpt;
  ckpt.config = c;
  ckpt.labels = {"before", "after", "background"};
  ckpt.model = make_network(c);
  std::vector<Image> imgs;
  for (int i = 0; i < 6; ++i) imgs.push_back(test::random_image(40, 24, rng));
  for (const auto& row : predict(ckpt, imgs)) {
    ASSERT_EQ(row.size(), 3u);
    double s = 0.0;
    for (double v : row) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  test::TempDir dir("ckpt");
  const auto d = red_blue(8, 2, 32);
  auto c = toy_config();
  c.max_epochs = 1;
  const auto ckpt = train_classifier(d, c);
  save_checkpoint(ckpt, dir / "c.bin");
  const auto back = load_checkpoint(dir / "c.bin");
  EXPECT_EQ(back.labels, ckpt.labels);
  EXPECT_EQ(back.config.to_kv().str(), ckpt.config.to_kv().str());
  EXPECT_EQ(back.best_epoch, ckpt.best_epoch);
  Rng rng(4);
  const std::vector<Image> imgs{test::random_image(32, 32, rng)};
  EXPECT_EQ(predict(back, imgs), predict(ckpt, imgs));
  EXPECT_THROW(back.label_index("background"), ConfigError);
  io::write_text(dir / "junk.bin", "not a checkpoint");
  EXPECT_THROW(load_checkpoint(dir / "junk.bin"), Error);
}

TEST(ClassifierConfig, ValidationAndKvRoundTrip) {
  ClassifierConfig c;
  c.num_classes = 3;
  c.puzzle_enabled = true;
  c.learning_rate = 1e-3;
  const auto back = ClassifierConfig::from_kv(io::KeyValueFile::parse(c.to_kv().str()));
  EXPECT_EQ(back.to_kv().str(), c.to_kv().str());
  EXPECT_DOUBLE_EQ(back.effective_learning_rate(), 1e-3);
  EXPECT_DOUBLE_EQ(ClassifierConfig{}.effective_learning_rate(), 5e-4);

  for (auto breaker : std::vector<std::function<void(ClassifierConfig&)>>{
           [](ClassifierConfig& x) { x.num_classes = 4; }, [](ClassifierConfig& x) { x.batch_size = 0; },
           [](ClassifierConfig& x) { x.train_ratio = 1.0; }, [](ClassifierConfig& x) { x.pretrained = true; },
           [](ClassifierConfig& x) { x.alpha = -1.0; }}) {
    ClassifierConfig bad;
    breaker(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }
}

TEST(Tiles, TileAndMergeAreInverse) {
  Rng rng(5);
  for (int grid : {1, 2, 4}) {
    const auto x = test::random_tensor<double>(2, 3, 8, 12, rng);
    const auto tiles = tile_batch(x, grid);
    ASSERT_EQ(tiles.n(), 2 * grid * grid);
    ASSERT_EQ(tiles.h(), 8 / grid);
    const int th = 8 / grid, tw = 12 / grid;
    for (int i = 0; i < 2; ++i) {
      for (int r = 0; r < grid; ++r) {
        for (int col = 0; col < grid; ++col) {
          const int t = (i * grid + r) * grid + col;
          for (int c = 0; c < 3; ++c) {
            EXPECT_EQ(tiles.at(t, c, 0, 0), x.at(i, c, r * th, col * tw));
            EXPECT_EQ(tiles.at(t, c, th - 1, tw - 1), x.at(i, c, r * th + th - 1, col * tw + tw - 1));
          }
        }
      }
    }
    EXPECT_EQ(merge_tiles(tiles, grid), x);
  }
  EXPECT_THROW(tile_batch(test::random_tensor<double>(1, 1, 7, 8, rng), 2), ShapeError);
}

TEST(Puzzle, TermMatchesDirectFormulaAndGradient) {
  Rng rng(6);
  const auto full = test::random_tensor<double>(3, 3, 4, 5, rng, -1, 1);
  const auto merged = test::random_tensor<double>(3, 3, 4, 5, rng, -1, 1);
  const std::vector<int> labels{2, 0, 1};
  nn::Tensor<double> df(3, 3, 4, 5), dm(3, 3, 4, 5);
  const double v = puzzle_term(full, merged, std::span<const int>(labels), &df, &dm);
  double want = 0.0;
  for (int n = 0; n < 3; ++n) {
    const int c = labels[static_cast<std::size_t>(n)];
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 5; ++x) {
        const double d = full.at(n, c, y, x) - merged.at(n, c, y, x);
        want += std::abs(d);
        EXPECT_DOUBLE_EQ(df.at(n, c, y, x), (d > 0 ? 1.0 : -1.0) / 60.0);
        EXPECT_DOUBLE_EQ(dm.at(n, c, y, x), -df.at(n, c, y, x));
        EXPECT_EQ(df.at(n, (c + 1) % 3, y, x), 0.0);
      }
    }
  }
  EXPECT_NEAR(v, want / 60.0, 1e-12);
}

// Second route for the puzzle loss: run the network on each tile separately
// and stitch the class maps by hand.
TEST(Puzzle, ModelLossMatchesPerTileEvaluation) {
  Rng rng(7);
  nn::ClassMapNet<double> net({nn::BackboneKind::tiny_residual, 3, 3, 2}, 3);
  const auto x = test::random_tensor<double>(2, 3, 32, 32, rng);
  const std::vector<int> labels{1, 0};
  const double loss = puzzle_loss(net, x, std::span<const int>(labels), 2);
  const auto full = net.forward(x, nullptr);
  double sum = 0.0;
  std::size_t count = 0;
  for (int n = 0; n < 2; ++n) {
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 2; ++c) {
        nn::Tensor<double> tile(1, 3, 16, 16);
        for (int k = 0; k < 3; ++k) {
          for (int y = 0; y < 16; ++y) {
            for (int xx = 0; xx < 16; ++xx) tile.at(0, k, y, xx) = x.at(n, k, r * 16 + y, c * 16 + xx);
          }
        }
        const auto maps = net.forward(tile, nullptr);
        const int ch = labels[static_cast<std::size_t>(n)];
        for (int y = 0; y < maps.h(); ++y) {
          for (int xx = 0; xx < maps.w(); ++xx) {
            sum += std::abs(full.at(n, ch, r * maps.h() + y, c * maps.w() + xx) - maps.at(0, ch, y, xx));
            ++count;
          }
        }
      }
    }
  }
  EXPECT_NEAR(loss, sum / static_cast<double>(count), 1e-10);
}

TEST(Temporal, TermMatchesBruteForceWarp) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = static_cast<int>(rng.uniform_int(2, 7)), h = static_cast<int>(rng.uniform_int(2, 7));
    const auto maps = test::random_tensor<double>(3, 2, h, w, rng);
    std::vector<FlowField> flows(2, FlowField(w, h, 2));
    for (auto& f : flows) {
      for (auto& v : f.storage()) v = static_cast<float>(rng.uniform(-2.5, 2.5));
    }
    const std::vector<MapPair> pairs{{0, 1, 1, &flows[0]}, {1, 2, 0, &flows[1]}};
    std::size_t valid = 0;
    const double got = temporal_term<double>(maps, std::span<const MapPair>(pairs), nullptr, &valid);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& pr : pairs) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double tx = x + static_cast<double>(pr.flow->at(x, y, 0));
          const double ty = y + static_cast<double>(pr.flow->at(x, y, 1));
          if (tx < 0 || ty < 0 || tx > w - 1 || ty > h - 1) continue;
          const double warped = bilinear_oracle(maps.channel(pr.second, pr.channel), w, h, tx, ty);
          sum += std::abs(maps.at(pr.first, pr.channel, y, x) - warped);
          ++count;
        }
      }
    }
    EXPECT_EQ(valid, count);
    EXPECT_NEAR(got, count ? sum / static_cast<double>(count) : 0.0, 1e-12);
  }
}

TEST(Temporal, ZeroFlowOnIdenticalMapsIsZero) {
  Rng rng(9);
  auto maps = test::random_tensor<double>(2, 1, 5, 5, rng);
  std::copy(maps.channel(0, 0), maps.channel(0, 0) + 25, maps.channel(1, 0));
  FlowField zero(5, 5, 2);
  const std::vector<MapPair> pairs{{0, 1, 0, &zero}};
  std::size_t valid = 0;
  EXPECT_EQ(temporal_term<double>(maps, std::span<const MapPair>(pairs), nullptr, &valid), 0.0);
  EXPECT_EQ(valid, 25u);
  FlowField wrong(4, 5, 2);
  const std::vector<MapPair> bad{{0, 1, 0, &wrong}};
  EXPECT_THROW(temporal_term<double>(maps, std::span<const MapPair>(bad), nullptr), ShapeError);
}

TEST(Temporal, ConstantShiftCountsValidPixels) {
  Rng rng(10);
  const auto maps = test::random_tensor<double>(2, 1, 6, 8, rng);
  FlowField shift(8, 6, 2);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) shift.at(x, y, 0) = 3.0f;
  }
  const std::vector<MapPair> pairs{{0, 1, 0, &shift}};
  std::size_t valid = 0;
  temporal_term<double>(maps, std::span<const MapPair>(pairs), nullptr, &valid);
  EXPECT_EQ(valid, 6u * 5u);
}
