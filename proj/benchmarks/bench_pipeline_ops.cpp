#include <benchmark/benchmark.h>

#include "basup/bgremoval.hpp"
#include "basup/classifier.hpp"
#include "basup/evalreport.hpp"
#include "basup/morphology.hpp"
#include "basup/refine.hpp"
#include "basup/rng.hpp"
#include "basup/saliency.hpp"

using namespace basup;

namespace {

Image random_image(int side, Rng& rng) {
  Image img = make_image(side, side);
  for (auto& v : img.storage()) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

// Blobby mask: random disks, so components have realistic sizes.
Mask blob_mask(int side, int disks, Rng& rng) {
  Mask m = make_mask(side, side);
  for (int d = 0; d < disks; ++d) {
    const int cx = static_cast<int>(rng.uniform_int(0, side - 1)), cy = static_cast<int>(rng.uniform_int(0, side - 1));
    const int r = static_cast<int>(rng.uniform_int(3, side / 8));
    for (int y = std::max(0, cy - r); y < std::min(side, cy + r + 1); ++y) {
      for (int x = std::max(0, cx - r); x < std::min(side, cx + r + 1); ++x) {
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.at(x, y) = 1;
      }
    }
  }
  return m;
}

void BM_Saliency(benchmark::State& state) {
  const auto method = static_cast<sal::Method>(state.range(0));
  cls::ClassifierConfig config;
  config.num_classes = 3;
  auto net = cls::make_network(config);
  Rng rng(1);
  const Image image = random_image(128, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sal::compute_saliency(*net, 128, image, 0, method));
  state.SetLabel(sal::to_string(method));
}
BENCHMARK(BM_Saliency)
    ->Arg(static_cast<int>(sal::Method::gradcam))
    ->Arg(static_cast<int>(sal::Method::gradcam_pp))
    ->Arg(static_cast<int>(sal::Method::layercam))
    ->Unit(benchmark::kMillisecond);

void BM_ConnectedComponents(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(2);
  const Mask m = blob_mask(side, 40, rng);
  for (auto _ : state) benchmark::DoNotOptimize(connected_components(m, Connectivity::eight));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_ConnectedComponents)->Arg(128)->Arg(512);

void BM_RefineMask(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(3);
  const Mask coarse = blob_mask(side, 10, rng);
  InstanceMaskSet instances;
  instances.labels = connected_components(blob_mask(side, 30, rng), Connectivity::eight);
  for (auto _ : state) benchmark::DoNotOptimize(refine::refine_mask(coarse, instances));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_RefineMask)->Arg(128)->Arg(512);

void BM_Iou(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(4);
  std::vector<Mask> pred, gt;
  for (int i = 0; i < 16; ++i) {
    pred.push_back(blob_mask(side, 10, rng));
    gt.push_back(blob_mask(side, 10, rng));
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::iou(pred, gt));
  state.SetItemsProcessed(state.iterations() * 16 * side * side);
}
BENCHMARK(BM_Iou)->Arg(128)->Arg(512);

void BM_FitBackground(benchmark::State& state) {
  const int frames = static_cast<int>(state.range(0));
  Rng rng(5);
  std::vector<Image> images;
  for (int i = 0; i < frames; ++i) images.push_back(random_image(128, rng));
  for (auto _ : state) benchmark::DoNotOptimize(br::fit_background(images, "before"));
  state.SetItemsProcessed(state.iterations() * frames);
}
BENCHMARK(BM_FitBackground)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
