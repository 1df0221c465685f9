#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "basup/bgremoval.hpp"
#include "basup/error.hpp"
#include "basup/io.hpp"
#include "basup/scenegen.hpp"
#include "helpers.hpp"

using namespace basup;
using namespace basup::br;

namespace {

double sorted_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

data::RecordList fake_records(const std::string& label, int sequences, int frames) {
  data::RecordList out;
  for (int s = 0; s < sequences; ++s) {
    for (int f = 0; f < frames; ++f) {
      data::FrameRecord r;
      r.path = label + std::to_string(s) + "_" + std::to_string(f) + ".png";
      r.label = label;
      r.sequence_id = std::to_string(s);
      r.frame_index = f;
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace

TEST(Median, MatchesSortOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(rng.uniform_int(1, 40)));
    for (auto& x : v) x = static_cast<double>(rng.uniform_int(0, 20));
    const double want = sorted_median(v);
    EXPECT_DOUBLE_EQ(median_inplace(v), want);
  }
  std::vector<double> even{4, 1, 3, 2};
  EXPECT_DOUBLE_EQ(median_inplace(even), 2.5);
}

TEST(FitBackground, MedianAndScaledMadPerPixel) {
  Rng rng(2);
  for (int count : {3, 4, 7}) {
    std::vector<Image> frames;
    for (int i = 0; i < count; ++i) frames.push_back(test::random_image(5, 4, rng));
    const auto m = fit_background(frames, "before");
    EXPECT_EQ(m.label, "before");
    for (std::size_t i = 0; i < frames[0].storage().size(); ++i) {
      std::vector<double> v;
      for (const auto& f : frames) v.push_back(f[i]);
      const double med = sorted_median(v);
      std::vector<double> dev;
      for (double x : v) dev.push_back(std::abs(x - med));
      EXPECT_FLOAT_EQ(m.median[i], static_cast<float>(med));
      EXPECT_FLOAT_EQ(m.scale[i], static_cast<float>(sorted_median(dev) * 1.4826));
    }
  }
}

TEST(FitBackground, RejectsTooFewOrMismatchedFrames) {
  Rng rng(3);
  std::vector<Image> frames{test::random_image(4, 4, rng), test::random_image(4, 4, rng)};
  EXPECT_THROW(fit_background(frames, "after"), DataError);
  frames.push_back(test::random_image(5, 4, rng));
  EXPECT_THROW(fit_background(frames, "after"), DataError);
}

TEST(Saturation, Formula) {
  EXPECT_DOUBLE_EQ(saturation(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(saturation(200, 200, 200), 0.0);
  EXPECT_DOUBLE_EQ(saturation(200, 100, 50), 0.75);
  EXPECT_DOUBLE_EQ(saturation(0, 0, 255), 1.0);
}

// Objects on the synthetic belt are found against the class median.
TEST(Foreground, RecoversSyntheticObjects) {
  scene::SceneConfig c;
  c.image_size = 96;
  c.frames_per_sequence = 30;
  for (auto cam : {scene::Camera::before, scene::Camera::after}) {
    const auto seq = scene::generate_sequence(c, "train", cam, 0);
    std::vector<Image> frames;
    for (const auto& f : seq.frames) frames.push_back(f.image);
    const auto model = fit_background(frames, scene::to_string(cam));
    std::size_t objects = 0, found = 0, fg = 0, false_pos = 0;
    for (const auto& f : seq.frames) {
      const auto m = foreground_mask(f.image, model);
      for (std::size_t p = 0; p < m.pixel_count(); ++p) {
        const bool obj = f.gt_instances[p] != 0;
        objects += obj;
        found += obj && m[p];
        fg += m[p] != 0;
        false_pos += m[p] && !obj;
      }
    }
    ASSERT_GT(objects, 0u);
    EXPECT_GE(static_cast<double>(found) / objects, 0.9);
    EXPECT_LE(static_cast<double>(false_pos) / std::max<std::size_t>(fg, 1), 0.1);
  }
}

TEST(Foreground, EmptyOnUnsaturatedMedian) {
  std::vector<Image> frames(3, test::solid_image(20, 20, 120, 118, 121));
  const auto model = fit_background(frames, "before");
  EXPECT_EQ(count_nonzero(foreground_mask(frames[0], model)), 0u);
}

TEST(Variants, ReplaceTheRightPixels) {
  Rng rng(5);
  std::vector<Image> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(test::random_image(10, 8, rng));
  const auto model = fit_background(frames, "before");
  const auto img = test::random_image(10, 8, rng);
  const auto fg = test::random_mask(10, 8, 0.3, rng);
  const auto f = foreground_variant(img, fg);
  const auto b = background_variant(img, fg, model);
  for (std::size_t p = 0; p < fg.pixel_count(); ++p) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (fg[p]) {
        EXPECT_EQ(f[3 * p + k], img[3 * p + k]);
        EXPECT_EQ(b[3 * p + k], static_cast<std::uint8_t>(std::lround(model.median[3 * p + k])));
      } else {
        EXPECT_EQ(f[3 * p + k], kNeutralGray);
        EXPECT_EQ(b[3 * p + k], img[3 * p + k]);
      }
    }
  }
  EXPECT_THROW(background_variant(img, make_mask(3, 3), model), ShapeError);
}

TEST(SelectHalf, Property) {
  Rng gen(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::size_t>(gen.uniform_int(0, 60));
    const auto seed = gen.next();
    const auto idx = select_half(n, seed);
    EXPECT_EQ(idx.size(), (n + 1) / 2);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), idx.size());
    for (auto i : idx) EXPECT_LT(i, n);
    EXPECT_EQ(select_half(n, seed), idx);
  }
}

TEST(ThreeClass, CountsAndSequenceNames) {
  for (auto [nb, na] : {std::pair{7, 4}, std::pair{1, 1}, std::pair{10, 9}}) {
    const auto before = fake_records("before", 1, nb);
    const auto after = fake_records("after", 1, na);
    const auto set = build_three_class_set(before, after, 3);
    EXPECT_EQ(set.count("before"), static_cast<std::size_t>(nb));
    EXPECT_EQ(set.count("after"), static_cast<std::size_t>(na));
    EXPECT_EQ(set.count("background"), static_cast<std::size_t>((nb + 1) / 2 + (na + 1) / 2));
    for (const auto& item : set.items) {
      if (item.label == "background") {
        EXPECT_EQ(item.variant, Variant::background);
        EXPECT_EQ(item.sequence_id.rfind(item.source.label, 0), 0u) << item.sequence_id;
      } else {
        EXPECT_EQ(item.variant, Variant::foreground);
        EXPECT_EQ(item.label, item.source.label);
      }
    }
  }
}

TEST(ThreeClass, WritesDerivedTree) {
  test::TempDir src("br-src"), out("br-out");
  scene::SceneConfig c;
  c.image_size = 32;
  c.frames_per_sequence = 5;
  c.num_sequences_before = 2;
  c.num_sequences_after = 1;
  c.test_sequences_before = 1;
  c.test_sequences_after = 1;
  scene::generate_scene(c, src.path());
  const auto in = data::ingest(src.path());
  const auto summary = write_three_class_set(in.split.train.at("before"), in.split.train.at("after"), out.path(),
                                             {}, 9);
  EXPECT_EQ(summary.before, 10u);
  EXPECT_EQ(summary.after, 5u);
  EXPECT_EQ(summary.background, 5u + 3u);
  data::IngestOptions opt;
  opt.classes = {"before", "after", "background"};
  opt.require_test = false;
  const auto derived = data::ingest(out.path(), opt);
  EXPECT_EQ(derived.stats.frames.at("train/background"), 8);
  EXPECT_EQ(derived.stats.width, 32);
}

TEST(ForegroundParams, KvRoundTripAndValidation) {
  ForegroundParams p;
  p.dev_thresh = 3.5;
  p.min_blob = 7;
  const auto back = ForegroundParams::from_kv(io::KeyValueFile::parse(p.to_kv().str()));
  EXPECT_EQ(back.to_kv().str(), p.to_kv().str());
  p.sat_thresh = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
}
