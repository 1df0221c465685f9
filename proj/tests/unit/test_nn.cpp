#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <functional>

#include "basup/error.hpp"
#include "basup/io.hpp"
#include "basup/nn/layers.hpp"
#include "basup/nn/losses.hpp"
#include "basup/nn/models.hpp"
#include "basup/nn/serialize.hpp"
#include "helpers.hpp"

using namespace basup;
using namespace basup::nn;
using basup::test::random_tensor;

namespace {

// Linear probe loss sum(r * y) gives dy = r.
double probe(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Checks input and parameter gradients of `layer` against central differences.
void check_layer(Layer<double>& layer, Tensor<double> x, Rng& rng, double tol = 1e-6) {
  Cache<double> cache;
  const auto y = layer.forward(x, &cache);
  const auto r = random_tensor<double>(y.n(), y.c(), y.h(), y.w(), rng, -1.0, 1.0);
  std::vector<Parameter<double>*> params;
  layer.collect(params);
  zero_grads(params);
  const auto dx = layer.backward(r, cache);
  const double h = 1e-6;
  auto f = [&] { return probe(layer.forward(x, nullptr), r); };
  for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 40)) {
    const double v = x[i];
    x[i] = v + h;
    const double fp = f();
    x[i] = v - h;
    const double fm = f();
    x[i] = v;
    EXPECT_LT(rel_err(dx[i], (fp - fm) / (2 * h)), tol) << layer.name() << " input " << i;
  }
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 20)) {
      const double v = p->value[i];
      p->value[i] = v + h;
      const double fp = f();
      p->value[i] = v - h;
      const double fm = f();
      p->value[i] = v;
      EXPECT_LT(rel_err(p->grad[i], (fp - fm) / (2 * h)), tol) << p->name << "[" << i << "]";
    }
  }
}

}  // namespace

TEST(Conv2d, ForwardMatchesDirectConvolution) {
  Rng rng(1);
  for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, std::tuple{3, 2, 1}, std::tuple{1, 1, 0}, std::tuple{1, 2, 0}}) {
    Conv2d<double> conv("c", 3, 4, k, stride, pad, rng);
    const auto x = random_tensor<double>(2, 3, 9, 7, rng, -1, 1);
    const auto y = conv.forward(x, nullptr);
    const auto& w = conv.weight().value;
    const auto& b = conv.bias().value;
    for (int n = 0; n < 2; ++n) {
      for (int o = 0; o < 4; ++o) {
        for (int oy = 0; oy < y.h(); ++oy) {
          for (int ox = 0; ox < y.w(); ++ox) {
            double s = b[static_cast<std::size_t>(o)];
            for (int c = 0; c < 3; ++c) {
              for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = oy * stride - pad + ky;
                  const int ix = ox * stride - pad + kx;
                  if (iy < 0 || ix < 0 || iy >= 9 || ix >= 7) continue;
                  s += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
                }
              }
            }
            ASSERT_NEAR(y.at(n, o, oy, ox), s, 1e-12);
          }
        }
      }
    }
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(2);
  Conv2d<double> c3("c3", 2, 3, 3, 1, 1, rng);
  check_layer(c3, random_tensor<double>(2, 2, 6, 5, rng, -1, 1), rng);
  Conv2d<double> strided("s", 2, 3, 3, 2, 1, rng);
  check_layer(strided, random_tensor<double>(1, 2, 7, 8, rng, -1, 1), rng);
  Conv2d<double> pw("pw", 3, 2, 1, 1, 0, rng);
  check_layer(pw, random_tensor<double>(2, 3, 4, 4, rng, -1, 1), rng);
}

TEST(Layers, PoolReluStandardizeResidualGradients) {
  Rng rng(3);
  MaxPool2<double> pool;
  check_layer(pool, random_tensor<double>(2, 2, 6, 6, rng, -1, 1), rng);
  Relu<double> relu;
  check_layer(relu, random_tensor<double>(1, 3, 5, 5, rng, -1, 1), rng);
  Standardize<double> st;
  check_layer(st, random_tensor<double>(1, 3, 4, 4, rng), rng);
  ResidualBlock<double> same("r1", 3, 3, 1, rng);
  check_layer(same, random_tensor<double>(1, 3, 6, 6, rng, -1, 1), rng, 1e-5);
  ResidualBlock<double> down("r2", 3, 5, 2, rng);
  check_layer(down, random_tensor<double>(1, 3, 8, 8, rng, -1, 1), rng, 1e-5);
}

TEST(Layers, StandardizeIsFixedAffineMap) {
  Rng rng(4);
  Standardize<double> st;
  const auto x = random_tensor<double>(1, 3, 2, 2, rng);
  const auto y = st.forward(x, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], (x[i] - 0.5) / 0.25);
}

TEST(Layers, UpsampleAndConcatAdjoints) {
  Rng rng(5);
  const auto x = random_tensor<double>(2, 3, 3, 4, rng);
  const auto up = upsample2(x);
  ASSERT_EQ(up.h(), 6);
  ASSERT_EQ(up.w(), 8);
  const auto r = random_tensor<double>(2, 3, 6, 8, rng);
  // <up(x), r> == <x, up^T(r)>
  EXPECT_NEAR(probe(up, r), probe(x, upsample2_backward(r)), 1e-12);

  const auto a = random_tensor<double>(1, 2, 3, 3, rng);
  const auto b = random_tensor<double>(1, 3, 3, 3, rng);
  const auto ab = concat_channels(a, b);
  Tensor<double> da, db;
  split_channels(ab, 2, da, db);
  EXPECT_EQ(da.storage(), a.storage());
  EXPECT_EQ(db.storage(), b.storage());
}

TEST(Losses, SoftmaxCrossEntropyMatchesFormula) {
  Rng rng(6);
  const auto logits = random_tensor<double>(4, 3, 1, 1, rng, -3, 3);
  const std::vector<int> labels{0, 2, 1, 2};
  const auto lg = softmax_cross_entropy(logits, std::span<const int>(labels));
  double want = 0.0;
  for (int n = 0; n < 4; ++n) {
    double z = 0.0;
    for (int c = 0; c < 3; ++c) z += std::exp(logits.at(n, c, 0, 0));
    want -= std::log(std::exp(logits.at(n, labels[static_cast<std::size_t>(n)], 0, 0)) / z);
  }
  EXPECT_NEAR(lg.value, want / 4, 1e-12);
}

TEST(Losses, SoftMarginMatchesFormulaAndGradient) {
  Rng rng(7);
  auto logits = random_tensor<double>(3, 3, 1, 1, rng, -4, 4);
  const std::vector<int> labels{1, 0, 2};
  const auto lg = multilabel_soft_margin(logits, std::span<const int>(labels));
  auto formula = [&](const Tensor<double>& l) {
    double s = 0.0;
    for (int n = 0; n < 3; ++n) {
      for (int c = 0; c < 3; ++c) {
        const double sig = 1.0 / (1.0 + std::exp(-l.at(n, c, 0, 0)));
        const double y = labels[static_cast<std::size_t>(n)] == c ? 1.0 : 0.0;
        s -= y * std::log(sig) + (1 - y) * std::log(1 - sig);
      }
    }
    return s / 9.0;
  };
  EXPECT_NEAR(lg.value, formula(logits), 1e-12);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double v = logits[i];
    logits[i] = v + 1e-6;
    const double fp = formula(logits);
    logits[i] = v - 1e-6;
    const double fm = formula(logits);
    logits[i] = v;
    EXPECT_NEAR(lg.grad[i], (fp - fm) / 2e-6, 1e-7);
  }
}

TEST(Losses, PixelCrossEntropyWeightsPositives) {
  Rng rng(8);
  auto logits = random_tensor<double>(2, 2, 3, 3, rng, -2, 2);
  Tensor<double> targets(2, 1, 3, 3);
  for (auto& t : targets.storage()) t = rng.bernoulli(0.4) ? 1.0 : 0.0;
  const double pw = 3.0;
  auto formula = [&](const Tensor<double>& l) {
    double s = 0.0;
    for (int n = 0; n < 2; ++n) {
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) {
          const double a = l.at(n, 0, y, x), b = l.at(n, 1, y, x);
          const double p1 = std::exp(b) / (std::exp(a) + std::exp(b));
          const bool pos = targets.at(n, 0, y, x) > 0.5;
          s -= pos ? pw * std::log(p1) : std::log(1 - p1);
        }
      }
    }
    return s / 18.0;
  };
  const auto lg = pixel_cross_entropy(logits, targets, pw);
  EXPECT_NEAR(lg.value, formula(logits), 1e-12);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double v = logits[i];
    logits[i] = v + 1e-6;
    const double fp = formula(logits);
    logits[i] = v - 1e-6;
    const double fm = formula(logits);
    logits[i] = v;
    EXPECT_NEAR(lg.grad[i], (fp - fm) / 2e-6, 1e-7);
  }
}

TEST(Models, UNetGradientsMatchFiniteDifferences) {
  Rng rng(9);
  UNet<double> net(2, 11);
  const auto x = random_tensor<double>(1, 3, 8, 8, rng);
  Cache<double> cache;
  const auto y = net.forward(x, &cache);
  ASSERT_EQ(y.c(), 2);
  ASSERT_EQ(y.h(), 8);
  const auto r = random_tensor<double>(y.n(), y.c(), y.h(), y.w(), rng, -1, 1);
  auto params = net.parameters();
  zero_grads(params);
  net.backward(r, cache);
  Rng pick(10);
  int checked = 0;
  for (int s = 0; s < 60; ++s) {
    auto* p = params[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(params.size()) - 1))];
    const auto i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(p->value.size()) - 1));
    const double v = p->value[i];
    p->value[i] = v + 1e-6;
    const double fp = probe(net.forward(x, nullptr), r);
    p->value[i] = v - 1e-6;
    const double fm = probe(net.forward(x, nullptr), r);
    p->value[i] = v;
    const double num = (fp - fm) / 2e-6;
    // ReLU kinks inside the step show up as disagreeing one-sided slopes.
    const double f0 = probe(net.forward(x, nullptr), r);
    if (std::abs((fp - f0) - (f0 - fm)) > 1e-3 * std::max(std::abs(fp - f0), 1e-12)) continue;
    EXPECT_LT(rel_err(p->grad[i], num), 1e-5) << p->name << "[" << i << "]";
    ++checked;
  }
  EXPECT_GT(checked, 40);
}

TEST(Models, ClassMapNetStrideAndShape) {
  ClassMapNet<float> net({BackboneKind::tiny_residual, 4, 3, 3}, 1);
  EXPECT_EQ(net.stride(), 8);
  Rng rng(1);
  const auto maps = net.forward(random_tensor<float>(2, 3, 32, 48, rng), nullptr);
  EXPECT_EQ(maps.c(), 3);
  EXPECT_EQ(maps.h(), 4);
  EXPECT_EQ(maps.w(), 6);
}

TEST(Models, SeedDeterminesInitialization) {
  ClassMapNet<float> a({BackboneKind::tiny_residual, 4, 3, 2}, 7), b({BackboneKind::tiny_residual, 4, 3, 2}, 7),
      c({BackboneKind::tiny_residual, 4, 3, 2}, 8);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value.storage(), pb[i]->value.storage());
    differs |= pa[i]->value.storage() != pc[i]->value.storage();
  }
  EXPECT_TRUE(differs);
}

TEST(Serialize, RoundTripAndMismatch) {
  test::TempDir dir("serialize");
  ClassMapNet<float> a({BackboneKind::tiny_residual, 4, 3, 2}, 7);
  io::KeyValueFile header;
  header.set("note", "x");
  const char magic[8] = {'T', 'E', 'S', 'T', 'M', 'A', 'G', '1'};
  write_model_file(dir / "m.bin", magic, 3, header, a.parameters());

  ClassMapNet<float> b({BackboneKind::tiny_residual, 4, 3, 2}, 99);
  std::ifstream in(dir / "m.bin", std::ios::binary);
  EXPECT_EQ(read_model_header(in, dir / "m.bin", magic, 3).get("note", ""), "x");
  read_model_tensors(in, dir / "m.bin", b.parameters());
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value.storage(), pb[i]->value.storage());

  ClassMapNet<float> wide({BackboneKind::tiny_residual, 6, 3, 2}, 7);
  std::ifstream again(dir / "m.bin", std::ios::binary);
  read_model_header(again, dir / "m.bin", magic, 3);
  EXPECT_THROW(read_model_tensors(again, dir / "m.bin", wide.parameters()), Error);

  std::ifstream wrong(dir / "m.bin", std::ios::binary);
  const char other[8] = {'O', 'T', 'H', 'E', 'R', 'M', 'A', 'G'};
  EXPECT_THROW(read_model_header(wrong, dir / "m.bin", other, 3), Error);
}
