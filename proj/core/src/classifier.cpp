#include "basup/classifier.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "basup/error.hpp"
#include "basup/nn/losses.hpp"
#include "basup/nn/optim.hpp"
#include "basup/nn/serialize.hpp"
#include "basup/rng.hpp"

namespace basup::cls {

std::string to_string(ClassLoss loss) {
  return loss == ClassLoss::categorical_cross_entropy ? "categorical_cross_entropy" : "multi_label_soft_margin";
}

ClassLoss parse_class_loss(const std::string& name) {
  if (name == "categorical_cross_entropy" || name == "ce") return ClassLoss::categorical_cross_entropy;
  if (name == "multi_label_soft_margin" || name == "mlsm") return ClassLoss::multi_label_soft_margin;
  throw ConfigError("unknown classification loss '" + name + "'");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adaptive_moment ? "adaptive_moment" : "momentum_sgd";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adaptive_moment" || name == "adam") return OptimizerKind::adaptive_moment;
  if (name == "momentum_sgd" || name == "sgd") return OptimizerKind::momentum_sgd;
  throw ConfigError("unknown optimizer '" + name + "'");
}

// Config ------------------------------------------------------------------------

double ClassifierConfig::effective_learning_rate() const {
  if (learning_rate) return *learning_rate;
  return optimizer == OptimizerKind::adaptive_moment ? 5e-4 : 0.05;
}

void ClassifierConfig::validate() const {
  if (num_classes != 2 && num_classes != 3) throw ConfigError("num_classes must be 2 or 3");
  if (width < 1) throw ConfigError("width must be >= 1");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("alpha and beta must be >= 0");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (input_size < 16) throw ConfigError("input_size must be >= 16");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("train_ratio must be in (0,1)");
  if (tile_grid < 1) throw ConfigError("tile_grid must be >= 1");
  if (temporal_pairs < 1) throw ConfigError("temporal_pairs must be >= 1");
  if (!(effective_learning_rate() > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (pretrained && init_checkpoint.empty()) {
    throw ConfigError("pretrained = true needs init_checkpoint; no built-in pretrained weights are shipped");
  }
}

io::KeyValueFile ClassifierConfig::to_kv(const std::string& prefix) const {
  io::KeyValueFile kv;
  const std::string p = prefix.empty() ? "" : prefix + ".";
  kv.set(p + "num_classes", num_classes);
  kv.set(p + "backbone", nn::to_string(backbone));
  kv.set(p + "width", width);
  kv.set(p + "loss", to_string(loss));
  kv.set(p + "optimizer", to_string(optimizer));
  if (learning_rate) kv.set(p + "learning_rate", *learning_rate);
  kv.set(p + "momentum", momentum);
  kv.set(p + "weight_decay", weight_decay);
  kv.set(p + "max_epochs", max_epochs);
  kv.set(p + "patience", patience);
  kv.set(p + "batch_size", batch_size);
  kv.set(p + "input_size", input_size);
  kv.set(p + "augment", augmentation.enabled);
  kv.set(p + "jitter_brightness", augmentation.brightness);
  kv.set(p + "jitter_contrast", augmentation.contrast);
  kv.set(p + "jitter_saturation", augmentation.saturation);
  kv.set(p + "train_ratio", train_ratio);
  kv.set(p + "puzzle", puzzle_enabled);
  kv.set(p + "temporal", temporal_enabled);
  kv.set(p + "alpha", alpha);
  kv.set(p + "beta", beta);
  kv.set(p + "tile_grid", tile_grid);
  kv.set(p + "temporal_pairs", temporal_pairs);
  kv.set(p + "pretrained", pretrained);
  if (!init_checkpoint.empty()) kv.set(p + "init_checkpoint", init_checkpoint.string());
  kv.set(p + "seed", static_cast<std::int64_t>(seed));
  return kv;
}

ClassifierConfig ClassifierConfig::from_kv(const io::KeyValueFile& kv, const std::string& prefix) {
  const io::KeyValueFile s = prefix.empty() ? kv : kv.section(prefix);
  ClassifierConfig c;
  c.num_classes = static_cast<int>(s.get_int("num_classes", c.num_classes));
  c.backbone = nn::parse_backbone(s.get("backbone", nn::to_string(c.backbone)));
  c.width = static_cast<int>(s.get_int("width", c.width));
  c.loss = parse_class_loss(s.get("loss", to_string(c.loss)));
  c.optimizer = parse_optimizer(s.get("optimizer", to_string(c.optimizer)));
  if (s.contains("learning_rate")) c.learning_rate = s.get_double("learning_rate", 0.0);
  c.momentum = s.get_double("momentum", c.momentum);
  c.weight_decay = s.get_double("weight_decay", c.weight_decay);
  c.max_epochs = static_cast<int>(s.get_int("max_epochs", c.max_epochs));
  c.patience = static_cast<int>(s.get_int("patience", c.patience));
  c.batch_size = static_cast<int>(s.get_int("batch_size", c.batch_size));
  c.input_size = static_cast<int>(s.get_int("input_size", c.input_size));
  c.augmentation.enabled = s.get_bool("augment", c.augmentation.enabled);
  c.augmentation.brightness = s.get_double("jitter_brightness", c.augmentation.brightness);
  c.augmentation.contrast = s.get_double("jitter_contrast", c.augmentation.contrast);
  c.augmentation.saturation = s.get_double("jitter_saturation", c.augmentation.saturation);
  c.train_ratio = s.get_double("train_ratio", c.train_ratio);
  c.puzzle_enabled = s.get_bool("puzzle", c.puzzle_enabled);
  c.temporal_enabled = s.get_bool("temporal", c.temporal_enabled);
  c.alpha = s.get_double("alpha", c.alpha);
  c.beta = s.get_double("beta", c.beta);
  c.tile_grid = static_cast<int>(s.get_int("tile_grid", c.tile_grid));
  c.temporal_pairs = static_cast<int>(s.get_int("temporal_pairs", c.temporal_pairs));
  c.pretrained = s.get_bool("pretrained", c.pretrained);
  c.init_checkpoint = s.get("init_checkpoint", "");
  c.seed = static_cast<std::uint64_t>(s.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.validate();
  return c;
}

// Checkpoints -------------------------------------------------------------------

int ClassifierCheckpoint::label_index(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return static_cast<int>(i);
  }
  throw ConfigError("label '" + label + "' is not in the checkpoint's label map");
}

std::string ClassifierCheckpoint::curves_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,train_classification,train_puzzle,train_temporal,train_accuracy,val_loss,val_accuracy,"
         "seconds\n";
  for (const auto& r : curves) {
    out << r.epoch << ',' << io::format_double(r.train_loss) << ',' << io::format_double(r.train_classification)
        << ',' << io::format_double(r.train_puzzle) << ',' << io::format_double(r.train_temporal) << ','
        << io::format_double(r.train_accuracy) << ',' << io::format_double(r.val_loss) << ','
        << io::format_double(r.val_accuracy) << ',' << io::format_double(r.seconds) << '\n';
  }
  return out.str();
}

std::shared_ptr<Net> make_network(const ClassifierConfig& config) {
  nn::BackboneSpec spec;
  spec.kind = config.backbone;
  spec.width = config.width;
  spec.num_classes = config.num_classes;
  return std::make_shared<Net>(spec, derive_seed(config.seed, "init"));
}

namespace {

std::vector<double> parse_csv_numbers(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

}  // namespace

void save_checkpoint(const ClassifierCheckpoint& ckpt, const std::filesystem::path& path) {
  if (!ckpt.model) throw Error("save_checkpoint: checkpoint has no model");
  io::KeyValueFile header = ckpt.config.to_kv("classifier");
  header.set("labels.count", static_cast<int>(ckpt.labels.size()));
  for (std::size_t i = 0; i < ckpt.labels.size(); ++i) header.set("labels." + std::to_string(i), ckpt.labels[i]);
  header.set("best_epoch", ckpt.best_epoch);
  header.set("stopped_early", ckpt.stopped_early);
  header.set("curves.count", static_cast<int>(ckpt.curves.size()));
  std::istringstream csv(ckpt.curves_csv());
  std::string line;
  std::getline(csv, line);  // column names
  for (int i = 0; std::getline(csv, line); ++i) header.set("curves." + std::to_string(i), line);
  nn::write_model_file(path, kCheckpointMagic, kCheckpointVersion, header, ckpt.model->parameters());
}

ClassifierCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  const io::KeyValueFile header = nn::read_model_header(in, path, kCheckpointMagic, kCheckpointVersion);

  ClassifierCheckpoint ckpt;
  ckpt.config = ClassifierConfig::from_kv(header, "classifier");
  const auto n_labels = header.get_int("labels.count", 0);
  for (std::int64_t i = 0; i < n_labels; ++i) ckpt.labels.push_back(header.require("labels." + std::to_string(i)));
  if (static_cast<int>(ckpt.labels.size()) != ckpt.config.num_classes) {
    throw Error("checkpoint/config mismatch: " + std::to_string(ckpt.labels.size()) + " labels for " +
                std::to_string(ckpt.config.num_classes) + " classes in " + path.string());
  }
  ckpt.best_epoch = static_cast<int>(header.get_int("best_epoch", -1));
  ckpt.stopped_early = header.get_bool("stopped_early", false);
  const auto n_curves = header.get_int("curves.count", 0);
  for (std::int64_t i = 0; i < n_curves; ++i) {
    const auto v = parse_csv_numbers(header.require("curves." + std::to_string(i)));
    if (v.size() != 9) throw IoError("malformed training curve row in " + path.string());
    ckpt.curves.push_back({static_cast<int>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]});
  }

  ckpt.model = make_network(ckpt.config);
  nn::read_model_tensors(in, path, ckpt.model->parameters());
  return ckpt;
}

// Auxiliary losses --------------------------------------------------------------

template <typename T>
nn::Tensor<T> tile_batch(const nn::Tensor<T>& x, int grid) {
  if (grid < 1 || x.h() % grid || x.w() % grid) {
    throw ShapeError("tile_batch: " + x.shape_string() + " is not divisible into a " + std::to_string(grid) + "x" +
                     std::to_string(grid) + " grid");
  }
  const int th = x.h() / grid;
  const int tw = x.w() / grid;
  nn::Tensor<T> out(x.n() * grid * grid, x.c(), th, tw);
  for (int n = 0; n < x.n(); ++n) {
    for (int ty = 0; ty < grid; ++ty) {
      for (int tx = 0; tx < grid; ++tx) {
        const int t = (n * grid + ty) * grid + tx;
        for (int c = 0; c < x.c(); ++c) {
          for (int y = 0; y < th; ++y) {
            const T* src = x.channel(n, c) + static_cast<std::size_t>(ty * th + y) * x.w() + tx * tw;
            std::copy(src, src + tw, out.channel(t, c) + static_cast<std::size_t>(y) * tw);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
nn::Tensor<T> merge_tiles(const nn::Tensor<T>& tiles, int grid) {
  if (grid < 1 || tiles.n() % (grid * grid)) {
    throw ShapeError("merge_tiles: " + std::to_string(tiles.n()) + " tiles do not form " + std::to_string(grid) + "x" +
                     std::to_string(grid) + " grids");
  }
  const int n_img = tiles.n() / (grid * grid);
  const int th = tiles.h();
  const int tw = tiles.w();
  nn::Tensor<T> out(n_img, tiles.c(), th * grid, tw * grid);
  for (int n = 0; n < n_img; ++n) {
    for (int ty = 0; ty < grid; ++ty) {
      for (int tx = 0; tx < grid; ++tx) {
        const int t = (n * grid + ty) * grid + tx;
        for (int c = 0; c < tiles.c(); ++c) {
          for (int y = 0; y < th; ++y) {
            const T* src = tiles.channel(t, c) + static_cast<std::size_t>(y) * tw;
            std::copy(src, src + tw, out.channel(n, c) + static_cast<std::size_t>(ty * th + y) * out.w() + tx * tw);
          }
        }
      }
    }
  }
  return out;
}

namespace {

template <typename T>
T sign(T v) {
  return static_cast<T>((v > T{0}) - (v < T{0}));
}

template <typename T>
void check_labels(std::span<const int> labels, int n, int classes) {
  if (static_cast<int>(labels.size()) != n) throw ShapeError("label count does not match batch size");
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ShapeError("label " + std::to_string(l) + " out of range");
  }
}

}  // namespace

template <typename T>
T puzzle_term(const nn::Tensor<T>& full, const nn::Tensor<T>& merged, std::span<const int> labels,
              nn::Tensor<T>* dfull, nn::Tensor<T>* dmerged) {
  if (!full.same_shape(merged)) {
    throw ShapeError("puzzle: merged tile maps " + merged.shape_string() + " do not match full maps " +
                     full.shape_string() + "; the input side must be divisible by tile_grid x network stride");
  }
  check_labels<T>(labels, full.n(), full.c());
  const std::size_t plane = full.plane();
  const T inv = T{1} / static_cast<T>(plane * static_cast<std::size_t>(full.n()));
  if (dfull) *dfull = nn::Tensor<T>(full.n(), full.c(), full.h(), full.w());
  if (dmerged) *dmerged = nn::Tensor<T>(full.n(), full.c(), full.h(), full.w());
  T sum{0};
  for (int n = 0; n < full.n(); ++n) {
    const int c = labels[static_cast<std::size_t>(n)];
    const T* a = full.channel(n, c);
    const T* b = merged.channel(n, c);
    for (std::size_t i = 0; i < plane; ++i) {
      const T d = a[i] - b[i];
      sum += std::abs(d);
      if (dfull) dfull->channel(n, c)[i] = sign(d) * inv;
      if (dmerged) dmerged->channel(n, c)[i] = -sign(d) * inv;
    }
  }
  return sum * inv;
}

template <typename T>
T temporal_term(const nn::Tensor<T>& maps, std::span<const MapPair> pairs, nn::Tensor<T>* dmaps,
                std::size_t* valid_count) {
  const int w = maps.w();
  const int h = maps.h();
  T sum{0};
  std::size_t count = 0;
  for (const auto& pr : pairs) {
    if (!pr.flow || pr.flow->width() != w || pr.flow->height() != h || pr.flow->channels() != 2) {
      throw ShapeError("temporal: flow does not match class-map size " + std::to_string(w) + "x" + std::to_string(h));
    }
    const T* a = maps.channel(pr.first, pr.channel);
    const T* b = maps.channel(pr.second, pr.channel);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        T bv{};
        const double tx = x + static_cast<double>(pr.flow->at(x, y, 0));
        const double ty = y + static_cast<double>(pr.flow->at(x, y, 1));
        if (!flow::sample_bilinear(b, w, h, tx, ty, bv)) continue;
        sum += std::abs(a[y * w + x] - bv);
        ++count;
      }
    }
  }
  if (valid_count) *valid_count = count;
  if (count == 0) return T{0};
  const T inv = T{1} / static_cast<T>(count);
  if (dmaps) {
    for (const auto& pr : pairs) {
      const T* a = maps.channel(pr.first, pr.channel);
      const T* b = maps.channel(pr.second, pr.channel);
      T* da = dmaps->channel(pr.first, pr.channel);
      T* db = dmaps->channel(pr.second, pr.channel);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double tx = x + static_cast<double>(pr.flow->at(x, y, 0));
          const double ty = y + static_cast<double>(pr.flow->at(x, y, 1));
          T bv{};
          if (!flow::sample_bilinear(b, w, h, tx, ty, bv)) continue;
          const T g = sign(a[y * w + x] - bv) * inv;
          da[y * w + x] += g;
          flow::scatter_bilinear(db, w, h, tx, ty, -g);
        }
      }
    }
  }
  return sum * inv;
}

template <typename T>
LossTerms compute_loss(nn::ClassMapNet<T>& net, const nn::Tensor<T>& x, std::span<const int> labels,
                       const TemporalBatch<T>* pairs, const LossSetup& setup, bool backward) {
  const int n = x.n();
  check_labels<T>(labels, n, net.spec().num_classes);
  const bool use_pairs = setup.temporal && pairs && !pairs->partner.empty();
  const nn::Tensor<T> input = use_pairs ? nn::concat_batch(x, pairs->frames) : x;

  nn::Cache<T> cache;
  const nn::Tensor<T> maps = net.forward(input, backward ? &cache : nullptr);
  const nn::Tensor<T> main_maps = use_pairs ? nn::slice_batch(maps, 0, n) : maps;
  const nn::Tensor<T> logits = nn::global_avg_pool(main_maps);
  const nn::LossGrad<T> cls = setup.loss == ClassLoss::categorical_cross_entropy
                                  ? nn::softmax_cross_entropy(logits, labels)
                                  : nn::multilabel_soft_margin(logits, labels);
  LossTerms terms;
  terms.classification = static_cast<double>(cls.value);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < logits.c(); ++c) {
      if (logits.at(i, c, 0, 0) > logits.at(i, best, 0, 0)) best = c;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++terms.correct;
  }

  nn::Tensor<T> dmaps;
  if (backward) {
    dmaps = nn::Tensor<T>(maps.n(), maps.c(), maps.h(), maps.w());
    const nn::Tensor<T> g = nn::global_avg_pool_backward(cls.grad, maps.h(), maps.w());
    std::copy(g.storage().begin(), g.storage().end(), dmaps.storage().begin());
  }

  if (setup.puzzle) {
    const nn::Tensor<T> tiles = tile_batch(x, setup.grid);
    nn::Cache<T> tile_cache;
    const bool grad = backward && setup.alpha > 0.0;
    const nn::Tensor<T> merged = merge_tiles(net.forward(tiles, grad ? &tile_cache : nullptr), setup.grid);
    nn::Tensor<T> dfull, dmerged;
    terms.puzzle = static_cast<double>(
        puzzle_term(main_maps, merged, labels, grad ? &dfull : nullptr, grad ? &dmerged : nullptr));
    if (grad) {
      const T a = static_cast<T>(setup.alpha);
      for (std::size_t i = 0; i < dfull.size(); ++i) dmaps[i] += a * dfull[i];
      for (auto& v : dmerged.storage()) v *= a;
      net.backward(tile_batch(dmerged, setup.grid), tile_cache);
    }
  }

  if (use_pairs) {
    std::vector<MapPair> map_pairs;
    for (std::size_t k = 0; k < pairs->partner.size(); ++k) {
      const int first = pairs->partner[k];
      map_pairs.push_back({first, n + static_cast<int>(k), labels[static_cast<std::size_t>(first)], &pairs->flows[k]});
    }
    const bool grad = backward && setup.beta > 0.0;
    nn::Tensor<T> dtemp;
    if (grad) dtemp = nn::Tensor<T>(maps.n(), maps.c(), maps.h(), maps.w());
    terms.temporal = static_cast<double>(temporal_term<T>(maps, map_pairs, grad ? &dtemp : nullptr));
    if (grad) {
      const T b = static_cast<T>(setup.beta);
      for (std::size_t i = 0; i < dtemp.size(); ++i) dmaps[i] += b * dtemp[i];
    }
  }

  terms.total = terms.classification;
  if (setup.puzzle) terms.total += setup.alpha * terms.puzzle;
  if (use_pairs) terms.total += setup.beta * terms.temporal;
  if (backward) net.backward(dmaps, cache);
  return terms;
}

template <typename T>
T puzzle_loss(const nn::ClassMapNet<T>& net, const nn::Tensor<T>& x, std::span<const int> labels, int grid) {
  const nn::Tensor<T> full = net.forward(x, nullptr);
  const nn::Tensor<T> merged = merge_tiles(net.forward(tile_batch(x, grid), nullptr), grid);
  return puzzle_term<T>(full, merged, labels, nullptr, nullptr);
}

template <typename T>
T temporal_consistency_loss(const nn::ClassMapNet<T>& net, const nn::Tensor<T>& frames_t,
                            const nn::Tensor<T>& frames_t1, std::span<const FlowField> flows,
                            std::span<const int> labels) {
  if (!frames_t.same_shape(frames_t1)) {
    throw ShapeError("temporal: frame batches differ " + frames_t.shape_string() + " vs " + frames_t1.shape_string());
  }
  if (static_cast<int>(flows.size()) != frames_t.n()) throw ShapeError("temporal: one flow per frame pair expected");
  check_labels<T>(labels, frames_t.n(), net.spec().num_classes);
  const nn::Tensor<T> maps = net.forward(nn::concat_batch(frames_t, frames_t1), nullptr);
  std::vector<FlowField> small;
  small.reserve(flows.size());
  for (const auto& f : flows) {
    if (f.width() != frames_t.w() || f.height() != frames_t.h() || f.channels() != 2) {
      throw ShapeError("temporal: flow " + std::to_string(f.width()) + "x" + std::to_string(f.height()) +
                       " does not match frames " + frames_t.shape_string());
    }
    small.push_back(flow::resample_flow(f, maps.w(), maps.h()));
  }
  std::vector<MapPair> pairs;
  for (int k = 0; k < frames_t.n(); ++k) {
    pairs.push_back({k, frames_t.n() + k, labels[static_cast<std::size_t>(k)], &small[static_cast<std::size_t>(k)]});
  }
  return temporal_term<T>(maps, pairs, nullptr);
}

#define BASUP_INSTANTIATE(T)                                                                                   \
  template nn::Tensor<T> tile_batch(const nn::Tensor<T>&, int);                                                \
  template nn::Tensor<T> merge_tiles(const nn::Tensor<T>&, int);                                               \
  template T puzzle_term(const nn::Tensor<T>&, const nn::Tensor<T>&, std::span<const int>, nn::Tensor<T>*,     \
                         nn::Tensor<T>*);                                                                      \
  template T temporal_term(const nn::Tensor<T>&, std::span<const MapPair>, nn::Tensor<T>*, std::size_t*);      \
  template LossTerms compute_loss(nn::ClassMapNet<T>&, const nn::Tensor<T>&, std::span<const int>,             \
                                  const TemporalBatch<T>*, const LossSetup&, bool);                            \
  template T puzzle_loss(const nn::ClassMapNet<T>&, const nn::Tensor<T>&, std::span<const int>, int);          \
  template T temporal_consistency_loss(const nn::ClassMapNet<T>&, const nn::Tensor<T>&, const nn::Tensor<T>&, \
                                       std::span<const FlowField>, std::span<const int>);

BASUP_INSTANTIATE(float)
BASUP_INSTANTIATE(double)

#undef BASUP_INSTANTIATE

// Training ----------------------------------------------------------------------

TrainingData load_training_data(const data::DatasetSplit& split, const std::vector<std::string>& classes,
                                bool with_flow, const flow::BlockMatchParams& matcher) {
  TrainingData out;
  out.classes = classes;
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index[classes[i]] = static_cast<int>(i);
  for (const auto& cls : classes) {
    auto tr = split.train.find(cls);
    if (tr == split.train.end()) throw DataError("training data has no class '" + cls + "'");
    const std::size_t base = out.train.size();
    auto samples = data::load_samples(tr->second, index);
    out.train.insert(out.train.end(), std::make_move_iterator(samples.begin()), std::make_move_iterator(samples.end()));
    out.next.resize(out.train.size());
    out.flow_to_next.resize(out.train.size());
    if (with_flow) {
      const auto& records = tr->second;
      for (std::size_t i = 0; i + 1 < records.size(); ++i) {
        const auto& r = records[i];
        const auto& s = records[i + 1];
        if (r.sequence_id != s.sequence_id) continue;
        FlowField f;
        if (r.gt_flow) {
          if (s.frame_index != r.frame_index + 1) continue;
          f = io::read_flow(*r.gt_flow);
        } else {
          f = flow::estimate_flow(out.train[base + i].image, out.train[base + i + 1].image, matcher);
        }
        if (!out.train[base + i].image.same_extent(f)) throw DataError("flow size does not match frame: " + r.path.string());
        out.next[base + i] = base + i + 1;
        out.flow_to_next[base + i] = std::move(f);
      }
    }
    auto va = split.val.find(cls);
    if (va != split.val.end()) {
      auto vs = data::load_samples(va->second, index);
      out.val.insert(out.val.end(), std::make_move_iterator(vs.begin()), std::make_move_iterator(vs.end()));
    }
  }
  return out;
}

namespace {

std::unique_ptr<nn::Optimizer> make_optimizer(const ClassifierConfig& config, std::vector<nn::Parameter<float>*> params) {
  if (config.optimizer == OptimizerKind::adaptive_moment) {
    nn::AdamOptions o;
    o.lr = config.effective_learning_rate();
    o.weight_decay = config.weight_decay;
    return std::make_unique<nn::Adam>(std::move(params), o);
  }
  nn::SgdOptions o;
  o.lr = config.effective_learning_rate();
  o.momentum = config.momentum;
  o.weight_decay = config.weight_decay;
  return std::make_unique<nn::MomentumSgd>(std::move(params), o);
}

void load_initial_parameters(Net& net, const std::filesystem::path& path) {
  const ClassifierCheckpoint init = load_checkpoint(path);
  std::map<std::string, nn::Parameter<float>*> src;
  for (auto* p : init.model->parameters()) src[p->name] = p;
  int copied = 0;
  for (auto* p : net.parameters()) {
    auto it = src.find(p->name);
    if (it != src.end() && it->second->value.same_shape(p->value)) {
      p->value = it->second->value;
      ++copied;
    }
  }
  if (copied == 0) throw ConfigError("init_checkpoint shares no parameters with this network: " + path.string());
}

std::vector<nn::Tensor<float>> snapshot(const std::vector<nn::Parameter<float>*>& params) {
  std::vector<nn::Tensor<float>> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

void restore(const std::vector<nn::Parameter<float>*>& params, const std::vector<nn::Tensor<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(Net& net, const std::vector<data::Sample>& samples, const ClassifierConfig& config) {
  data::BatchIterator it(samples, config.batch_size, config.input_size, {}, 0, false);
  LossSetup setup;
  setup.loss = config.loss;
  data::Batch batch;
  double loss = 0.0;
  std::size_t correct = 0;
  while (it.next(batch)) {
    const LossTerms t = compute_loss<float>(net, batch.images, batch.labels, nullptr, setup, false);
    loss += t.classification * static_cast<double>(batch.labels.size());
    correct += t.correct;
  }
  const auto n = static_cast<double>(samples.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

ClassifierCheckpoint train_classifier(const TrainingData& data, const ClassifierConfig& config,
                                      const TrainObserver& observer) {
  config.validate();
  if (static_cast<int>(data.classes.size()) != config.num_classes) {
    throw ConfigError("class-count mismatch: dataset has " + std::to_string(data.classes.size()) +
                      " classes, config expects " + std::to_string(config.num_classes));
  }
  if (data.train.empty()) throw DataError("no training samples");
  if (data.val.empty()) throw DataError("no validation samples");
  for (const auto* part : {&data.train, &data.val}) {
    for (const auto& s : *part) {
      if (s.label < 0 || s.label >= config.num_classes) throw DataError("sample label out of range");
    }
  }

  ClassifierCheckpoint ckpt;
  ckpt.config = config;
  ckpt.labels = data.classes;
  ckpt.model = make_network(config);
  Net& net = *ckpt.model;
  if (config.pretrained) load_initial_parameters(net, config.init_checkpoint);
  const auto params = net.parameters();
  auto optimizer = make_optimizer(config, params);

  const nn::Tensor<float> probe = net.forward(nn::Tensor<float>(1, 3, config.input_size, config.input_size), nullptr);
  const int map_w = probe.w();
  const int map_h = probe.h();

  std::vector<FlowField> small_flows;
  bool any_pairs = false;
  if (config.temporal_enabled) {
    if (data.next.size() != data.train.size() || data.flow_to_next.size() != data.train.size()) {
      throw ConfigError("temporal loss needs sequence links; load the data with flow");
    }
    small_flows.resize(data.train.size());
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      if (!data.next[i]) continue;
      small_flows[i] = flow::resample_flow(data.flow_to_next[i], map_w, map_h);
      any_pairs = true;
    }
    if (!any_pairs) throw ConfigError("temporal loss enabled but no consecutive frame pairs with flow were found");
  }

  LossSetup setup;
  setup.loss = config.loss;
  setup.puzzle = config.puzzle_enabled;
  setup.temporal = config.temporal_enabled;
  setup.alpha = config.alpha;
  setup.beta = config.beta;
  setup.grid = config.tile_grid;

  data::BatchIterator it(data.train, config.batch_size, config.input_size, config.augmentation,
                         derive_seed(config.seed, "batches"));
  std::vector<nn::Tensor<float>> best = snapshot(params);
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    it.start_epoch(epoch - 1);
    data::Batch batch;
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t seen = 0;
    std::size_t correct = 0;
    int batch_no = 0;
    while (it.next(batch)) {
      ++batch_no;
      TemporalBatch<float> tb;
      if (setup.temporal) {
        std::vector<std::size_t> succ;
        for (std::size_t k = 0; k < batch.indices.size(); ++k) {
          const auto idx = batch.indices[k];
          if (!data.next[idx] || static_cast<int>(succ.size()) >= config.temporal_pairs) continue;
          tb.partner.push_back(static_cast<int>(k));
          tb.flows.push_back(small_flows[idx]);
          succ.push_back(idx);
        }
        tb.frames = nn::Tensor<float>(static_cast<int>(succ.size()), 3, config.input_size, config.input_size);
        for (std::size_t k = 0; k < succ.size(); ++k) {
          const auto& s = data.train[*data.next[succ[k]]];
          data::write_tensor_sample(resize_bilinear(s.image, config.input_size, config.input_size), tb.frames,
                                    static_cast<int>(k));
          if (config.augmentation.enabled) {
            Rng rng(it.jitter_seed(succ[k]));
            data::color_jitter(tb.frames.sample(static_cast<int>(k)), tb.frames.plane(), config.augmentation, rng);
          }
        }
      }
      optimizer->zero_grad();
      const LossTerms t = compute_loss<float>(net, batch.images, batch.labels, setup.temporal ? &tb : nullptr, setup, true);
      if (!std::isfinite(t.total)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_no) + ": classification=" + io::format_double(t.classification) +
                              " puzzle=" + io::format_double(t.puzzle) + " temporal=" + io::format_double(t.temporal) +
                              " lr=" + io::format_double(config.effective_learning_rate()) +
                              "; lower the learning rate or the auxiliary weights");
      }
      optimizer->step();
      const auto bn = static_cast<double>(batch.labels.size());
      rec.train_loss += t.total * bn;
      rec.train_classification += t.classification * bn;
      rec.train_puzzle += t.puzzle * bn;
      rec.train_temporal += t.temporal * bn;
      seen += batch.labels.size();
      correct += t.correct;
    }
    const auto seen_d = static_cast<double>(seen);
    rec.train_loss /= seen_d;
    rec.train_classification /= seen_d;
    rec.train_puzzle /= seen_d;
    rec.train_temporal /= seen_d;
    rec.train_accuracy = static_cast<double>(correct) / seen_d;
    const Evaluation val = evaluate(net, data.val, config);
    if (!std::isfinite(val.loss)) {
      throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ckpt.curves.push_back(rec);
    if (observer.on_epoch) observer.on_epoch(rec);

    if (val.loss < best_val) {
      best_val = val.loss;
      best = snapshot(params);
      ckpt.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      ckpt.stopped_early = true;
      break;
    }
  }
  restore(params, best);
  return ckpt;
}

ClassifierCheckpoint train_classifier(const std::filesystem::path& root, const ClassifierConfig& config,
                                      const TrainObserver& observer) {
  data::IngestOptions opts;
  opts.require_test = false;
  opts.classes.clear();
  if (!std::filesystem::is_directory(root / "train")) throw DataError("missing folder: " + (root / "train").string());
  // Fixed class order: before, after, background, then anything else by name.
  std::vector<std::string> found;
  for (const auto& e : std::filesystem::directory_iterator(root / "train")) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && name != "gt" && name != "masks") found.push_back(name);
  }
  for (const std::string known : {"before", "after", "background"}) {
    if (std::find(found.begin(), found.end(), known) != found.end()) opts.classes.push_back(known);
  }
  std::sort(found.begin(), found.end());
  for (const auto& f : found) {
    if (std::find(opts.classes.begin(), opts.classes.end(), f) == opts.classes.end()) opts.classes.push_back(f);
  }
  auto ingested = data::ingest(root, opts);
  ingested.split.test.clear();
  data::assign_validation(ingested.split, config.train_ratio, derive_seed(config.seed, "split"));
  const TrainingData data = load_training_data(ingested.split, opts.classes, config.temporal_enabled);
  return train_classifier(data, config, observer);
}

std::vector<std::vector<double>> predict(const Net& net, int input_size, const std::vector<Image>& images) {
  std::vector<std::vector<double>> out;
  constexpr int kChunk = 32;
  for (std::size_t first = 0; first < images.size(); first += kChunk) {
    const auto count = static_cast<int>(std::min<std::size_t>(kChunk, images.size() - first));
    nn::Tensor<float> x(count, 3, input_size, input_size);
    for (int k = 0; k < count; ++k) {
      const Image& img = images[first + static_cast<std::size_t>(k)];
      if (img.channels() != 3) throw ShapeError("predict: expected RGB images");
      data::write_tensor_sample(resize_bilinear(img, input_size, input_size), x, k);
    }
    const nn::Tensor<float> probs = nn::softmax_channels(nn::global_avg_pool(net.forward(x, nullptr)));
    for (int k = 0; k < count; ++k) {
      std::vector<double> row(static_cast<std::size_t>(probs.c()));
      for (int c = 0; c < probs.c(); ++c) row[static_cast<std::size_t>(c)] = probs.at(k, c, 0, 0);
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::vector<std::vector<double>> predict(const ClassifierCheckpoint& ckpt, const std::vector<Image>& images) {
  if (!ckpt.model) throw Error("predict: checkpoint has no model");
  if (static_cast<int>(ckpt.labels.size()) != ckpt.model->spec().num_classes) {
    throw Error("checkpoint/config mismatch: label map size differs from the network's class count");
  }
  return predict(*ckpt.model, ckpt.config.input_size, images);
}

double accuracy(const Net& net, int input_size, const std::vector<data::Sample>& samples) {
  if (samples.empty()) return 0.0;
  std::vector<Image> images;
  images.reserve(samples.size());
  for (const auto& s : samples) images.push_back(s.image);
  const auto probs = predict(net, input_size, images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& row = probs[i];
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    if (best == samples[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace basup::cls
