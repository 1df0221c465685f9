#include "basup/segtrain.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "basup/error.hpp"
#include "basup/nn/losses.hpp"
#include "basup/nn/optim.hpp"
#include "basup/nn/serialize.hpp"
#include "basup/rng.hpp"

namespace basup::seg {

void SegConfig::validate() const {
  if (architecture != kTinyEncoderDecoder) {
    throw ConfigError("segmenter architecture '" + architecture + "' is not available; use " + kTinyEncoderDecoder);
  }
  if (base_width < 1) throw ConfigError("segtrain base_width must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("segtrain learning_rate must be > 0");
  if (max_epochs < 1) throw ConfigError("segtrain max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("segtrain patience must be >= 1");
  if (batch_size < 1) throw ConfigError("segtrain batch_size must be >= 1");
  if (input_size < SegNet::kDivisor || input_size % SegNet::kDivisor) {
    throw ConfigError("segtrain input_size must be a positive multiple of " + std::to_string(SegNet::kDivisor));
  }
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("segtrain train_ratio must be in (0,1)");
  if (!(positive_weight > 0.0)) throw ConfigError("segtrain positive_weight must be > 0");
}

io::KeyValueFile SegConfig::to_kv(const std::string& prefix) const {
  io::KeyValueFile kv;
  const std::string p = prefix.empty() ? "" : prefix + ".";
  kv.set(p + "architecture", architecture);
  kv.set(p + "base_width", base_width);
  kv.set(p + "learning_rate", learning_rate);
  kv.set(p + "max_epochs", max_epochs);
  kv.set(p + "patience", patience);
  kv.set(p + "batch_size", batch_size);
  kv.set(p + "input_size", input_size);
  kv.set(p + "train_ratio", train_ratio);
  kv.set(p + "positive_weight", positive_weight);
  kv.set(p + "seed", static_cast<std::int64_t>(seed));
  return kv;
}

SegConfig SegConfig::from_kv(const io::KeyValueFile& kv, const std::string& prefix) {
  const io::KeyValueFile s = prefix.empty() ? kv : kv.section(prefix);
  SegConfig c;
  c.architecture = s.get("architecture", c.architecture);
  c.base_width = static_cast<int>(s.get_int("base_width", c.base_width));
  c.learning_rate = s.get_double("learning_rate", c.learning_rate);
  c.max_epochs = static_cast<int>(s.get_int("max_epochs", c.max_epochs));
  c.patience = static_cast<int>(s.get_int("patience", c.patience));
  c.batch_size = static_cast<int>(s.get_int("batch_size", c.batch_size));
  c.input_size = static_cast<int>(s.get_int("input_size", c.input_size));
  c.train_ratio = s.get_double("train_ratio", c.train_ratio);
  c.positive_weight = s.get_double("positive_weight", c.positive_weight);
  c.seed = static_cast<std::uint64_t>(s.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.validate();
  return c;
}

std::string SegCheckpoint::curves_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,val_iou,seconds\n";
  for (const auto& r : curves) {
    out << r.epoch << ',' << io::format_double(r.train_loss) << ',' << io::format_double(r.val_loss) << ','
        << io::format_double(r.val_iou) << ',' << io::format_double(r.seconds) << '\n';
  }
  return out.str();
}

void save_checkpoint(const SegCheckpoint& ckpt, const std::filesystem::path& path) {
  if (!ckpt.model) throw Error("save_checkpoint: segmenter checkpoint has no model");
  io::KeyValueFile header = ckpt.config.to_kv("segtrain");
  header.set("classes", "background,unwanted");
  header.set("best_epoch", ckpt.best_epoch);
  header.set("stopped_early", ckpt.stopped_early);
  header.set("curves.count", static_cast<int>(ckpt.curves.size()));
  for (std::size_t i = 0; i < ckpt.curves.size(); ++i) {
    const auto& r = ckpt.curves[i];
    header.set("curves." + std::to_string(i), std::to_string(r.epoch) + "," + io::format_double(r.train_loss) + "," +
                                                  io::format_double(r.val_loss) + "," + io::format_double(r.val_iou) +
                                                  "," + io::format_double(r.seconds));
  }
  nn::write_model_file(path, kSegMagic, kSegVersion, header, ckpt.model->parameters());
}

SegCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open segmenter checkpoint: " + path.string());
  const io::KeyValueFile header = nn::read_model_header(in, path, kSegMagic, kSegVersion);
  SegCheckpoint ckpt;
  ckpt.config = SegConfig::from_kv(header, "segtrain");
  ckpt.best_epoch = static_cast<int>(header.get_int("best_epoch", -1));
  ckpt.stopped_early = header.get_bool("stopped_early", false);
  const auto n = header.get_int("curves.count", 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::stringstream ss(header.require("curves." + std::to_string(i)));
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 5) throw IoError("malformed training curve row in " + path.string());
    ckpt.curves.push_back({static_cast<int>(v[0]), v[1], v[2], v[3], v[4]});
  }
  ckpt.model = std::make_shared<SegNet>(ckpt.config.base_width, derive_seed(ckpt.config.seed, "init"));
  nn::read_model_tensors(in, path, ckpt.model->parameters());
  return ckpt;
}

namespace {

struct Prepared {
  nn::Tensor<float> image;   // (1, 3, s, s)
  nn::Tensor<float> target;  // (1, 1, s, s)
};

std::vector<Prepared> prepare(const std::vector<SegSample>& samples, int size) {
  std::vector<Prepared> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.image.same_extent(s.mask)) throw DataError("pseudo-mask size does not match its image");
    Prepared p;
    p.image = data::to_tensor(resize_bilinear(s.image, size, size));
    const Mask m = resize_nearest(s.mask, size, size);
    p.target = nn::Tensor<float>(1, 1, size, size);
    for (std::size_t i = 0; i < m.pixel_count(); ++i) p.target[i] = m[i] ? 1.0f : 0.0f;
    out.push_back(std::move(p));
  }
  return out;
}

void gather(const std::vector<Prepared>& items, const std::vector<std::size_t>& order, std::size_t first,
            std::size_t count, nn::Tensor<float>& x, nn::Tensor<float>& y) {
  const auto& proto = items.front();
  x = nn::Tensor<float>(static_cast<int>(count), 3, proto.image.h(), proto.image.w());
  y = nn::Tensor<float>(static_cast<int>(count), 1, proto.image.h(), proto.image.w());
  for (std::size_t k = 0; k < count; ++k) {
    const auto& p = items[order[first + k]];
    std::copy(p.image.storage().begin(), p.image.storage().end(), x.sample(static_cast<int>(k)));
    std::copy(p.target.storage().begin(), p.target.storage().end(), y.sample(static_cast<int>(k)));
  }
}

struct ValResult {
  double loss = 0.0;
  double iou = 0.0;
};

ValResult validate_model(const SegNet& net, const std::vector<Prepared>& val, const SegConfig& config) {
  std::vector<std::size_t> order(val.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double loss = 0.0;
  std::uint64_t inter = 0, uni = 0;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (std::size_t first = 0; first < val.size(); first += bs) {
    const std::size_t count = std::min(bs, val.size() - first);
    nn::Tensor<float> x, y;
    gather(val, order, first, count, x, y);
    const nn::Tensor<float> logits = net.forward(x, nullptr);
    loss += nn::pixel_cross_entropy(logits, y, static_cast<float>(config.positive_weight)).value *
            static_cast<double>(count);
    for (int n = 0; n < logits.n(); ++n) {
      const float* l0 = logits.channel(n, 0);
      const float* l1 = logits.channel(n, 1);
      const float* t = y.channel(n, 0);
      for (std::size_t i = 0; i < logits.plane(); ++i) {
        const bool p = l1[i] > l0[i];
        const bool g = t[i] > 0.5f;
        inter += p && g;
        uni += p || g;
      }
    }
  }
  ValResult r;
  r.loss = loss / static_cast<double>(val.size());
  r.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  return r;
}

}  // namespace

SegCheckpoint train_segmenter(const std::vector<SegSample>& train, const std::vector<SegSample>& val,
                              const SegConfig& config, const SegObserver& observer) {
  config.validate();
  if (train.empty()) throw DataError("segmenter: no training samples");
  if (val.empty()) throw DataError("segmenter: no validation samples");
  const auto train_items = prepare(train, config.input_size);
  const auto val_items = prepare(val, config.input_size);

  SegCheckpoint ckpt;
  ckpt.config = config;
  ckpt.model = std::make_shared<SegNet>(config.base_width, derive_seed(config.seed, "init"));
  const auto params = ckpt.model->parameters();
  nn::AdamOptions opts;
  opts.lr = config.learning_rate;
  nn::Adam optimizer(params, opts);

  std::vector<nn::Tensor<float>> best;
  for (const auto* p : params) best.push_back(p->value);
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(derive_seed(derive_seed(config.seed, "order"), static_cast<std::uint64_t>(epoch)));
    const auto order = rng.permutation(train_items.size());
    double total = 0.0;
    for (std::size_t first = 0; first < order.size(); first += bs) {
      const std::size_t count = std::min(bs, order.size() - first);
      nn::Tensor<float> x, y;
      gather(train_items, order, first, count, x, y);
      optimizer.zero_grad();
      nn::Cache<float> cache;
      const nn::Tensor<float> logits = ckpt.model->forward(x, &cache);
      const auto lg = nn::pixel_cross_entropy(logits, y, static_cast<float>(config.positive_weight));
      if (!std::isfinite(lg.value)) {
        throw DivergenceError("segmenter: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                              std::to_string(first) + "; lower the learning rate (" +
                              io::format_double(config.learning_rate) + ")");
      }
      ckpt.model->backward(lg.grad, cache);
      optimizer.step();
      total += static_cast<double>(lg.value) * static_cast<double>(count);
    }
    SegEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(train_items.size());
    const ValResult v = validate_model(*ckpt.model, val_items, config);
    if (!std::isfinite(v.loss)) throw DivergenceError("segmenter: non-finite validation loss at epoch " + std::to_string(epoch));
    rec.val_loss = v.loss;
    rec.val_iou = v.iou;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ckpt.curves.push_back(rec);
    if (observer.on_epoch) observer.on_epoch(rec);
    if (v.loss < best_val) {
      best_val = v.loss;
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i]->value;
      ckpt.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      ckpt.stopped_early = true;
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return ckpt;
}

SegCheckpoint train_segmenter(const data::RecordList& records, const std::filesystem::path& mask_root,
                              const SegConfig& config, const SegObserver& observer) {
  config.validate();
  auto [train_records, val_records] = data::split_train_val(records, config.train_ratio, derive_seed(config.seed, "split"));
  auto load = [&](const data::RecordList& rs) {
    std::vector<SegSample> out;
    out.reserve(rs.size());
    for (const auto& r : rs) {
      auto mask_path = mask_root / r.relative_key();
      mask_path += ".png";
      if (!std::filesystem::exists(mask_path)) throw DataError("missing pseudo-mask: " + mask_path.string());
      out.push_back({io::read_image(r.path), io::read_mask(mask_path), r.sequence_id});
    }
    return out;
  };
  return train_segmenter(load(train_records), load(val_records), config, observer);
}

Mask decide(const FloatMap& p_background, const FloatMap& p_unwanted) {
  if (!p_background.same_shape(p_unwanted)) throw ShapeError("decide: probability maps differ in shape");
  Mask out = make_mask(p_background.width(), p_background.height());
  for (std::size_t i = 0; i < out.pixel_count(); ++i) out[i] = p_unwanted[i] > p_background[i] ? 1 : 0;
  return out;
}

namespace {

/// Logit margin (unwanted minus background) at image resolution.
FloatMap margin(const SegNet& net, int input_size, const Image& image) {
  const nn::Tensor<float> logits = net.forward(data::to_tensor(resize_bilinear(image, input_size, input_size)), nullptr);
  FloatMap d(input_size, input_size, 1);
  for (std::size_t i = 0; i < d.pixel_count(); ++i) d[i] = logits.channel(0, 1)[i] - logits.channel(0, 0)[i];
  return resize_bilinear(d, image.width(), image.height());
}

}  // namespace

FloatMap probability(const SegNet& net, int input_size, const Image& image) {
  FloatMap p = margin(net, input_size, image);
  for (auto& v : p.storage()) v = 1.0f / (1.0f + std::exp(-v));
  return p;
}

Mask segment(const SegNet& net, int input_size, const Image& image) {
  const FloatMap d = margin(net, input_size, image);
  Mask out = make_mask(image.width(), image.height());
  for (std::size_t i = 0; i < out.pixel_count(); ++i) out[i] = d[i] > 0.0f ? 1 : 0;
  return out;
}

Mask segment(const SegCheckpoint& ckpt, const Image& image) {
  if (!ckpt.model) throw Error("segment: checkpoint has no model");
  if (ckpt.model->base_width() != ckpt.config.base_width) {
    throw Error("checkpoint/config mismatch: segmenter width differs from its config");
  }
  return segment(*ckpt.model, ckpt.config.input_size, image);
}

SegmentSummary batch_segment(const SegCheckpoint& ckpt, const data::RecordList& records,
                             const std::filesystem::path& out_root, bool resume) {
  SegmentSummary summary;
  for (const auto& r : records) {
    auto path = out_root / r.relative_key();
    path += ".png";
    if (resume && std::filesystem::exists(path)) {
      ++summary.skipped;
      continue;
    }
    io::write_mask(path, segment(ckpt, io::read_image(r.path)));
    ++summary.written;
  }
  return summary;
}

}  // namespace basup::seg
