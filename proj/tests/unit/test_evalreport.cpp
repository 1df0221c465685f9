#include <gtest/gtest.h>

#include <cmath>

#include "basup/error.hpp"
#include "basup/evalreport.hpp"
#include "basup/io.hpp"
#include "helpers.hpp"

using namespace basup;
using namespace basup::eval;

namespace {

double brute_per_image(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
  double sum = 0.0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    double i = 0, u = 0;
    for (std::size_t k = 0; k < pred[f].pixel_count(); ++k) {
      i += pred[f][k] && gt[f][k];
      u += pred[f][k] || gt[f][k];
    }
    sum += u == 0 ? 1.0 : i / u;
  }
  return pred.empty() ? 100.0 : 100.0 * sum / static_cast<double>(pred.size());
}

EvalReport report_with(const std::string& method, std::map<std::string, double> values) {
  EvalReport r;
  r.method = method;
  for (Stage s : kStages) {
    for (const char* split : kSplits) {
      Cell c;
      c.stage = s;
      c.split = split;
      auto it = values.find(stage_letter(s) + "/" + split);
      if (it != values.end()) {
        c.present = true;
        c.miou = it->second;
      }
      r.cells.push_back(c);
    }
  }
  return r;
}

}  // namespace

TEST(Iou, KnownValues) {
  const Mask a = test::rect_mask(10, 10, 0, 0, 4, 5);  // 20 px
  const Mask b = test::rect_mask(10, 10, 2, 0, 6, 5);  // 20 px, 10 shared
  EXPECT_DOUBLE_EQ(iou(a, b), 100.0 * 10 / 30);
  EXPECT_DOUBLE_EQ(iou(a, a), 100.0);
  EXPECT_DOUBLE_EQ(iou(make_mask(10, 10), make_mask(10, 10)), 100.0);
  EXPECT_DOUBLE_EQ(iou(a, make_mask(10, 10)), 0.0);
  EXPECT_DOUBLE_EQ(iou(make_mask(10, 10), make_mask(10, 10), IouMode::per_image), 100.0);
  EXPECT_DOUBLE_EQ(iou(a, make_mask(10, 10), IouMode::per_image), 0.0);
}

// Property: both modes agree with brute-force counting on random mask sets.
TEST(Iou, MatchesBruteForceProperty) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 6));
    const int w = static_cast<int>(rng.uniform_int(1, 20)), h = static_cast<int>(rng.uniform_int(1, 20));
    std::vector<Mask> pred, gt;
    for (int i = 0; i < n; ++i) {
      pred.push_back(test::random_mask(w, h, rng.uniform(0.0, 0.6), rng));
      gt.push_back(test::random_mask(w, h, rng.uniform(0.0, 0.6), rng));
    }
    EXPECT_NEAR(iou(pred, gt), test::brute_iou(pred, gt), 1e-9);
    EXPECT_NEAR(iou(pred, gt, IouMode::per_image), brute_per_image(pred, gt), 1e-9);
    const double v = iou(pred, gt);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
}

// Property: splitting frames across accumulators and merging in any order
// gives the same totals as one pass.
TEST(Iou, MergeIsOrderIndependentProperty) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Mask> pred, gt;
    for (int i = 0; i < 8; ++i) {
      pred.push_back(test::random_mask(9, 7, 0.3, rng));
      gt.push_back(test::random_mask(9, 7, 0.3, rng));
    }
    IouAccumulator whole;
    for (int i = 0; i < 8; ++i) whole.add(pred[i], gt[i]);
    std::vector<IouAccumulator> parts(3);
    for (int i = 0; i < 8; ++i) parts[static_cast<std::size_t>(rng.uniform_int(0, 2))].add(pred[i], gt[i]);
    IouAccumulator merged;
    for (std::size_t k : rng.permutation(3)) merged.merge(parts[k]);
    EXPECT_EQ(merged.intersection, whole.intersection);
    EXPECT_EQ(merged.union_, whole.union_);
    EXPECT_EQ(merged.pred_pixels, whole.pred_pixels);
    EXPECT_EQ(merged.gt_pixels, whole.gt_pixels);
    EXPECT_EQ(merged.total_pixels, whole.total_pixels);
    EXPECT_EQ(merged.frames, whole.frames);
    EXPECT_NEAR(merged.miou(IouMode::per_image), whole.miou(IouMode::per_image), 1e-9);
    EXPECT_DOUBLE_EQ(merged.miou(IouMode::dataset_level), whole.miou(IouMode::dataset_level));
  }
}

TEST(Iou, ShapeErrors) {
  std::vector<Mask> one{make_mask(4, 4)}, two{make_mask(4, 4), make_mask(4, 4)};
  EXPECT_THROW(iou(one, two), ShapeError);
  EXPECT_THROW(iou(make_mask(4, 4), make_mask(4, 5)), ShapeError);
}

TEST(Names, ParseAndPrint) {
  for (Stage s : kStages) EXPECT_EQ(parse_stage(stage_letter(s)), s);
  EXPECT_EQ(parse_iou_mode(to_string(IouMode::per_image)), IouMode::per_image);
  EXPECT_EQ(parse_iou_mode(to_string(IouMode::dataset_level)), IouMode::dataset_level);
  EXPECT_THROW(parse_stage("Q"), ConfigError);
  EXPECT_THROW(parse_iou_mode("macro"), ConfigError);
}

TEST(Protocol, PresentAbsentAndKvRoundTrip) {
  test::TempDir dir("eval-proto");
  Rng rng(3);
  std::map<std::string, data::RecordList> test;
  std::vector<Mask> gts, coarse;
  for (const char* split : kSplits) {
    for (int i = 0; i < 3; ++i) {
      data::FrameRecord r;
      r.label = split;
      r.sequence_id = "0002";
      r.frame_index = i;
      r.path = dir / (std::string(split) + std::to_string(i) + ".png");
      io::write_image(r.path, test::random_image(12, 8, rng));
      r.gt_mask = dir / (std::string(split) + std::to_string(i) + "_gt.png");
      const Mask g = test::random_mask(12, 8, 0.3, rng);
      io::write_mask(*r.gt_mask, g);
      const Mask p = test::random_mask(12, 8, 0.3, rng);
      auto out = dir / "C" / r.relative_key();
      out += ".png";
      io::write_mask(out, p);
      if (std::string(split) == "before") {
        gts.push_back(g);
        coarse.push_back(p);
      }
      test[split].push_back(r);
    }
  }
  // R exists but is missing one after mask; S has no tree at all.
  for (const auto& r : test["before"]) {
    auto out = dir / "R" / r.relative_key();
    out += ".png";
    io::write_mask(out, make_mask(12, 8));
  }
  ProtocolInputs in;
  in.method = "gradcam";
  in.test = test;
  in.stage_roots = {{Stage::coarse, dir / "C"}, {Stage::refined, dir / "R"}};
  in.config_hashes = {{"cam", "abc123"}};
  const auto report = run_protocol(in);

  ASSERT_TRUE(report.value(Stage::coarse, "before"));
  EXPECT_NEAR(*report.value(Stage::coarse, "before"), test::brute_iou(coarse, gts), 1e-9);
  EXPECT_TRUE(report.value(Stage::coarse, "after"));
  EXPECT_TRUE(report.value(Stage::refined, "before"));
  EXPECT_FALSE(report.value(Stage::refined, "after"));
  EXPECT_FALSE(report.value(Stage::segmenter, "before"));
  EXPECT_EQ(report.warnings.size(), 3u);
  EXPECT_NE(report.table().find("absent"), std::string::npos);

  const auto back = EvalReport::from_kv(io::KeyValueFile::parse(report.to_kv().str()));
  EXPECT_EQ(back.csv(), report.csv());
  EXPECT_EQ(back.warnings, report.warnings);
  EXPECT_EQ(back.config_hashes, report.config_hashes);
  EXPECT_EQ(back.to_kv().str(), report.to_kv().str());

  auto no_gt = in;
  no_gt.test["after"][0].gt_mask.reset();
  EXPECT_THROW(run_protocol(no_gt), DataError);
}

TEST(Panels, OnePerSampledFrame) {
  test::TempDir dir("eval-panels");
  Rng rng(4);
  ProtocolInputs in;
  for (int i = 0; i < 5; ++i) {
    data::FrameRecord r;
    r.label = "before";
    r.sequence_id = "0001";
    r.frame_index = i;
    r.path = dir / ("b" + std::to_string(i) + ".png");
    io::write_image(r.path, test::random_image(10, 6, rng));
    r.gt_mask = dir / ("g" + std::to_string(i) + ".png");
    io::write_mask(*r.gt_mask, test::random_mask(10, 6, 0.4, rng));
    in.test["before"].push_back(r);
  }
  PanelOptions opt;
  opt.out_dir = dir / "panels";
  opt.frames_per_split = 3;
  const auto paths = write_panels(in, opt);
  ASSERT_EQ(paths.size(), 3u);
  const auto panel = io::read_image(paths[0]);
  EXPECT_EQ(panel.width(), 6 * 12 - 2);
  EXPECT_EQ(panel.height(), 6);
  EXPECT_EQ(write_panels(in, opt), paths);
}

TEST(Compare, RanksOnRefinedBeforeAndReportsDeltas) {
  const std::vector<EvalReport> reports{
      report_with("a", {{"C/before", 40}, {"R/before", 50}, {"C/after", 30}}),
      report_with("b", {{"C/before", 45}, {"R/before", 60}, {"S/before", 70}}),
      report_with("c", {{"C/before", 20}, {"R/before", 55}, {"C/after", 10}}),
  };
  const auto cmp = compare_methods(reports);
  EXPECT_EQ(cmp.ranking_cell, "R/before");
  EXPECT_EQ(cmp.shared_cells, (std::vector<std::string>{"R/before", "C/before"}));
  ASSERT_EQ(cmp.ranking.size(), 3u);
  EXPECT_EQ(cmp.ranking[0].method, "b");
  EXPECT_EQ(cmp.ranking[1].method, "c");
  EXPECT_EQ(cmp.ranking[2].method, "a");
  EXPECT_DOUBLE_EQ(cmp.ranking[0].deltas.at("R/before"), 0.0);
  EXPECT_DOUBLE_EQ(cmp.ranking[1].deltas.at("C/before"), -25.0);
  EXPECT_DOUBLE_EQ(cmp.ranking[2].deltas.at("R/before"), -10.0);
  EXPECT_FALSE(cmp.table().empty());
}

TEST(Compare, FallsBackAndRejects) {
  const std::vector<EvalReport> coarse_only{report_with("a", {{"C/after", 10}, {"C/before", 5}}),
                                            report_with("b", {{"C/after", 20}, {"C/before", 7}})};
  const auto cmp = compare_methods(coarse_only);
  EXPECT_EQ(cmp.ranking_cell, "C/before");
  EXPECT_EQ(cmp.ranking[0].method, "b");

  const std::vector<EvalReport> one{report_with("a", {{"C/before", 1}})};
  EXPECT_THROW(compare_methods(one), ConfigError);
  const std::vector<EvalReport> disjoint{report_with("a", {{"C/before", 1}}), report_with("b", {{"R/after", 1}})};
  EXPECT_THROW(compare_methods(disjoint), DataError);
}
