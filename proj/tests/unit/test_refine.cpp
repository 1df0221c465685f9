#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <queue>
#include <set>
#include <thread>

#include "basup/error.hpp"
#include "basup/io.hpp"
#include "basup/refine.hpp"
#include "basup/scenegen.hpp"
#include "helpers.hpp"

using namespace basup;
using namespace basup::refine;

namespace {

Image two_squares() {
  Image img = test::solid_image(48, 48, 128, 128, 128);
  for (int y = 5; y < 20; ++y) {
    for (int x = 5; x < 20; ++x) {
      img.at(x, y, 0) = 230;
      img.at(x, y, 1) = 40;
      img.at(x, y, 2) = 40;
    }
  }
  for (int y = 28; y < 44; ++y) {
    for (int x = 25; x < 42; ++x) {
      img.at(x, y, 0) = 30;
      img.at(x, y, 1) = 40;
      img.at(x, y, 2) = 220;
    }
  }
  return img;
}

// Number of 8-connected components of pixels carrying `label`.
int components(const LabelMap& labels, int label) {
  const int w = labels.width(), h = labels.height();
  std::vector<char> seen(labels.pixel_count(), 0);
  int count = 0;
  for (int start = 0; start < w * h; ++start) {
    if (labels[static_cast<std::size_t>(start)] != label || seen[static_cast<std::size_t>(start)]) continue;
    ++count;
    std::queue<int> q;
    q.push(start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!q.empty()) {
      const int p = q.front();
      q.pop();
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = p % w + dx, y = p / w + dy;
          if (x < 0 || y < 0 || x >= w || y >= h) continue;
          const auto i = static_cast<std::size_t>(y * w + x);
          if (labels[i] == label && !seen[i]) {
            seen[i] = 1;
            q.push(y * w + x);
          }
        }
      }
    }
  }
  return count;
}

InstanceMaskSet blobs(int w, int h, int count, Rng& rng) {
  InstanceMaskSet s;
  s.labels = LabelMap(w, h, 1);
  for (int id = 1; id <= count; ++id) {
    const int x0 = static_cast<int>(rng.uniform_int(0, w - 4)), y0 = static_cast<int>(rng.uniform_int(0, h - 4));
    const int x1 = static_cast<int>(rng.uniform_int(x0 + 2, w)), y1 = static_cast<int>(rng.uniform_int(y0 + 2, h));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) s.labels.at(x, y) = static_cast<std::uint16_t>(id);
    }
  }
  s.labels = compact_labels(s.labels);
  return s;
}

}  // namespace

TEST(Regions, TwoSquaresGiveConnectedRegions) {
  const auto labels = classical_regions(two_squares());
  std::set<int> ids(labels.storage().begin(), labels.storage().end());
  EXPECT_GE(ids.size(), 2u);
  EXPECT_FALSE(ids.count(0));
  int expected = 1;
  for (int id : ids) EXPECT_EQ(id, expected++);
  for (int id : ids) EXPECT_EQ(components(labels, id), 1) << id;
  // Each square is covered by a single region.
  EXPECT_EQ(labels.at(6, 6), labels.at(18, 18));
  EXPECT_EQ(labels.at(26, 29), labels.at(40, 42));
  EXPECT_NE(labels.at(6, 6), labels.at(26, 29));
  EXPECT_NE(labels.at(6, 6), labels.at(0, 47));
}

TEST(Regions, RasterOrderAndMinSize) {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto img = test::random_image(24, 20, rng);
    RegionParams p;
    p.min_size = 10;
    const auto labels = classical_regions(img, p);
    int next = 1;
    std::vector<std::size_t> sizes(labels.pixel_count() + 1, 0);
    for (std::size_t i = 0; i < labels.pixel_count(); ++i) {
      ASSERT_GE(labels[i], 1);
      if (labels[i] == next) ++next;
      ASSERT_LT(labels[i], next) << "labels not in raster order of first pixel";
      ++sizes[labels[i]];
    }
    for (int id = 1; id < next; ++id) EXPECT_GE(sizes[static_cast<std::size_t>(id)], 10u);
  }
  EXPECT_EQ(classical_regions(test::solid_image(10, 10, 9, 9, 9)).storage(), std::vector<std::uint16_t>(100, 1));
}

// Property: the refined mask is exactly the union of instances whose coarse
// overlap reaches tau, plus leftovers under `keep`.
TEST(Refine, SelectionRuleMatchesBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const int w = 20, h = 16;
    const auto inst = blobs(w, h, static_cast<int>(rng.uniform_int(1, 6)), rng);
    const auto coarse = test::random_mask(w, h, rng.uniform(0.1, 0.9), rng);
    RefineParams p;
    p.overlap_tau = rng.uniform(0.05, 0.95);
    p.leftover = rng.bernoulli(0.5) ? LeftoverPolicy::keep : LeftoverPolicy::drop;
    p.fill_holes = false;
    const auto got = refine_mask(coarse, inst, p);

    std::map<int, std::pair<double, double>> stats;  // id -> (area, covered)
    std::size_t leftover = 0;
    for (std::size_t i = 0; i < coarse.pixel_count(); ++i) {
      const int id = inst.labels[i];
      if (id) {
        stats[id].first += 1;
        stats[id].second += coarse[i] ? 1 : 0;
      } else if (coarse[i]) {
        ++leftover;
      }
    }
    std::set<int> chosen;
    for (const auto& [id, s] : stats) {
      if (s.second / s.first >= p.overlap_tau) chosen.insert(id);
    }
    std::set<int> reported;
    for (const auto& s : got.selected) {
      reported.insert(s.instance_id);
      EXPECT_NEAR(s.overlap, stats[s.instance_id].second / stats[s.instance_id].first, 1e-12);
    }
    EXPECT_EQ(reported, chosen);
    EXPECT_EQ(got.leftover_pixels, leftover);
    for (std::size_t i = 0; i < coarse.pixel_count(); ++i) {
      const int id = inst.labels[i];
      const bool want = id ? chosen.count(id) > 0 : (p.leftover == LeftoverPolicy::keep && coarse[i]);
      ASSERT_EQ(got.mask[i] != 0, want) << trial << " pixel " << i;
    }
  }
}

TEST(Refine, FillsEnclosedHoles) {
  InstanceMaskSet ring;
  ring.labels = LabelMap(9, 9, 1);
  for (int y = 1; y < 8; ++y) {
    for (int x = 1; x < 8; ++x) {
      if (x == 1 || y == 1 || x == 7 || y == 7) ring.labels.at(x, y) = 1;
    }
  }
  const auto coarse = test::rect_mask(9, 9, 0, 0, 9, 9);
  const auto filled = refine_mask(coarse, ring);
  EXPECT_EQ(filled.mask.at(4, 4), 1);
  EXPECT_EQ(filled.mask.at(0, 0), 0);
  RefineParams p;
  p.fill_holes = false;
  EXPECT_EQ(refine_mask(coarse, ring, p).mask.at(4, 4), 0);
}

TEST(Refine, ForcedOverlapsAroundTau) {
  InstanceMaskSet inst;
  inst.labels = LabelMap(10, 2, 1);
  for (int x = 0; x < 10; ++x) {
    inst.labels.at(x, 0) = 1;
    inst.labels.at(x, 1) = 2;
  }
  Mask coarse = make_mask(10, 2);
  for (int x = 0; x < 6; ++x) coarse.at(x, 0) = 1;  // 60 %
  for (int x = 0; x < 4; ++x) coarse.at(x, 1) = 1;  // 40 %
  const auto r = refine_mask(coarse, inst);
  ASSERT_EQ(r.selected.size(), 1u);
  EXPECT_EQ(r.selected[0].instance_id, 1);
  EXPECT_EQ(count_nonzero(r.mask), 10u);
  EXPECT_THROW(refine_mask(make_mask(3, 3), inst), ShapeError);
}

TEST(Providers, RunnerCommandRoundTrip) {
  test::TempDir dir("runner");
  Rng rng(3);
  LabelMap labels(16, 12, 1);
  for (auto& v : labels.storage()) v = static_cast<std::uint16_t>(rng.uniform_int(0, 3) * 7);
  io::write_labels(dir / "answer.png", labels);
  ProviderConfig c;
  c.provider = InstanceProvider::external_promptable;
  c.runner = "test -s {input} && cp '" + (dir / "answer.png").string() + "' {output}";
  const auto got = get_instances(test::random_image(16, 12, rng), c);
  EXPECT_EQ(got.labels, compact_labels(labels));
  EXPECT_EQ(got.provider, InstanceProvider::external_promptable);

  c.runner = "false";
  EXPECT_THROW(get_instances(test::random_image(16, 12, rng), c), ProviderError);
  c.runner = "true";
  EXPECT_THROW(get_instances(test::random_image(16, 12, rng), c), ProviderError);
  c.runner = "cp '" + (dir / "answer.png").string() + "' {output}";
  EXPECT_THROW(get_instances(test::random_image(20, 12, rng), c), ProviderError);  // size mismatch
}

TEST(Providers, HttpEndpointRoundTrip) {
  test::TempDir dir("endpoint");
  LabelMap labels(16, 12, 1);
  for (int y = 2; y < 8; ++y) {
    for (int x = 3; x < 9; ++x) labels.at(x, y) = 5;
  }
  io::write_labels(dir / "answer.png", labels);
  const std::string answer = io::read_text(dir / "answer.png");

  httplib::Server server;
  std::atomic<int> width{0};
  server.Post("/segment", [&](const httplib::Request& req, httplib::Response& res) {
    io::write_text(dir / "request.png", req.body);
    width = io::read_image(dir / "request.png").width();
    res.set_content(answer, "image/png");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ProviderConfig c;
  c.provider = InstanceProvider::external_promptable;
  c.timeout_seconds = 5;
  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/segment";
  Rng rng(4);
  const auto got = get_instances(test::random_image(16, 12, rng), c);
  EXPECT_EQ(width.load(), 16);
  EXPECT_EQ(got.labels, compact_labels(labels));
  EXPECT_EQ(got.count(), 1);

  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/broken";
  EXPECT_THROW(get_instances(test::random_image(16, 12, rng), c), ProviderError);
  server.stop();
  t.join();

  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/segment";
  c.timeout_seconds = 1;
  EXPECT_THROW(get_instances(test::random_image(16, 12, rng), c), ProviderError);
  c.endpoint = "ftp://nowhere";
  EXPECT_THROW(get_instances(test::random_image(16, 12, rng), c), ProviderError);
  c.endpoint.clear();
  EXPECT_THROW(get_instances(test::random_image(16, 12, rng), c), ProviderError);
}

TEST(Providers, OracleNeedsGroundTruth) {
  Rng rng(5);
  EXPECT_THROW(get_instances(test::random_image(8, 8, rng), ProviderConfig{}), ProviderError);
}

TEST(Batch, OracleRefinementOfGroundTruthIsFixedPointAndResumes) {
  test::TempDir dir("refine-batch");
  scene::SceneConfig c;
  c.image_size = 48;
  c.frames_per_sequence = 4;
  c.num_sequences_before = 2;
  c.num_sequences_after = 1;
  c.test_sequences_before = 1;
  c.test_sequences_after = 1;
  scene::generate_scene(c, dir / "data");
  const auto in = data::ingest(dir / "data");
  const auto& recs = in.split.test.at("before");
  for (const auto& r : recs) {
    const auto dst = dir / "coarse" / r.relative_key();
    std::filesystem::create_directories(dst.parent_path());
    std::filesystem::copy_file(*r.gt_mask, std::filesystem::path(dst.string() + ".png"));
  }
  const auto first = batch_refine(recs, dir / "coarse", ProviderConfig{}, RefineParams{}, dir / "out", false);
  EXPECT_EQ(first.written, recs.size());
  for (const auto& r : recs) {
    const auto out = io::read_mask(std::filesystem::path((dir / "out" / r.relative_key()).string() + ".png"));
    EXPECT_EQ(out, io::read_mask(*r.gt_mask)) << r.path;
  }
  const auto snapshot = test::read_tree(dir / "out");
  const auto second = batch_refine(recs, dir / "coarse", ProviderConfig{}, RefineParams{}, dir / "out", true);
  EXPECT_EQ(second.skipped, recs.size());
  EXPECT_EQ(test::read_tree(dir / "out"), snapshot);
}

TEST(Params, KvRoundTripAndValidation) {
  ProviderConfig p;
  p.provider = InstanceProvider::classical_regions;
  p.runner = "seg {input} {output}";
  EXPECT_EQ(ProviderConfig::from_kv(io::KeyValueFile::parse(p.to_kv().str())).to_kv().str(), p.to_kv().str());
  RefineParams r;
  r.overlap_tau = 0.3;
  r.leftover = LeftoverPolicy::keep;
  EXPECT_EQ(RefineParams::from_kv(io::KeyValueFile::parse(r.to_kv().str())).to_kv().str(), r.to_kv().str());
  r.overlap_tau = 0.0;
  EXPECT_THROW(r.validate(), ConfigError);
  p.timeout_seconds = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_THROW(parse_leftover("maybe"), ConfigError);
}
