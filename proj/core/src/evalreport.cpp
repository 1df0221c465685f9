#include "basup/evalreport.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "basup/error.hpp"
#include "basup/rng.hpp"

namespace basup::eval {

namespace fs = std::filesystem;

std::string to_string(IouMode mode) { return mode == IouMode::dataset_level ? "dataset" : "per_image"; }

IouMode parse_iou_mode(const std::string& name) {
  if (name == "dataset" || name == "dataset_level") return IouMode::dataset_level;
  if (name == "per_image" || name == "image") return IouMode::per_image;
  throw ConfigError("unknown IoU mode '" + name + "' (expected dataset or per_image)");
}

void IouAccumulator::add(const Mask& pred, const Mask& gt) {
  if (!pred.same_extent(gt)) {
    throw ShapeError("iou: prediction " + std::to_string(pred.width()) + "x" + std::to_string(pred.height()) +
                     " vs ground truth " + std::to_string(gt.width()) + "x" + std::to_string(gt.height()));
  }
  std::uint64_t i = 0, u = 0, p = 0, g = 0;
  for (std::size_t k = 0; k < pred.pixel_count(); ++k) {
    const bool a = pred[k] != 0;
    const bool b = gt[k] != 0;
    i += a && b;
    u += a || b;
    p += a;
    g += b;
  }
  intersection += i;
  union_ += u;
  pred_pixels += p;
  gt_pixels += g;
  total_pixels += pred.pixel_count();
  per_image_sum += u == 0 ? 1.0 : static_cast<double>(i) / static_cast<double>(u);
  ++frames;
}

void IouAccumulator::merge(const IouAccumulator& o) {
  intersection += o.intersection;
  union_ += o.union_;
  pred_pixels += o.pred_pixels;
  gt_pixels += o.gt_pixels;
  total_pixels += o.total_pixels;
  per_image_sum += o.per_image_sum;
  frames += o.frames;
}

double IouAccumulator::miou(IouMode mode) const {
  if (mode == IouMode::per_image) {
    return frames == 0 ? 100.0 : 100.0 * per_image_sum / static_cast<double>(frames);
  }
  return union_ == 0 ? 100.0 : 100.0 * static_cast<double>(intersection) / static_cast<double>(union_);
}

double iou(std::span<const Mask> pred, std::span<const Mask> gt, IouMode mode) {
  if (pred.size() != gt.size()) {
    throw ShapeError("iou: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                     " ground-truth masks");
  }
  IouAccumulator acc;
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], gt[i]);
  return acc.miou(mode);
}

double iou(const Mask& pred, const Mask& gt, IouMode mode) {
  return iou(std::span<const Mask>(&pred, 1), std::span<const Mask>(&gt, 1), mode);
}

std::string stage_letter(Stage stage) {
  switch (stage) {
    case Stage::coarse: return "C";
    case Stage::refined: return "R";
    case Stage::segmenter: return "S";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  if (name == "C" || name == "c" || name == "coarse") return Stage::coarse;
  if (name == "R" || name == "r" || name == "refined") return Stage::refined;
  if (name == "S" || name == "s" || name == "segmenter" || name == "seg") return Stage::segmenter;
  throw ConfigError("unknown stage '" + name + "' (expected c, r or s)");
}

namespace {

std::string cell_key(Stage stage, const std::string& split) { return stage_letter(stage) + "/" + split; }

std::string fixed2(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << v;
  return out.str();
}

const char* stage_title(Stage s) {
  switch (s) {
    case Stage::coarse: return "Coarse C";
    case Stage::refined: return "Refined R";
    case Stage::segmenter: return "Segmenter S";
  }
  return "?";
}

}  // namespace

const Cell* EvalReport::find(Stage stage, const std::string& split) const {
  for (const auto& c : cells) {
    if (c.stage == stage && c.split == split) return &c;
  }
  return nullptr;
}

std::optional<double> EvalReport::value(Stage stage, const std::string& split) const {
  const Cell* c = find(stage, split);
  if (!c || !c->present) return std::nullopt;
  return c->miou;
}

std::string EvalReport::csv() const {
  std::ostringstream out;
  out << "method,mode,stage,split,miou,intersection,union,frames\n";
  for (const auto& c : cells) {
    if (!c.present) continue;
    out << method << ',' << to_string(mode) << ',' << stage_letter(c.stage) << ',' << c.split << ','
        << fixed2(c.miou) << ',' << c.totals.intersection << ',' << c.totals.union_ << ',' << c.totals.frames << '\n';
  }
  return out.str();
}

std::string EvalReport::table() const {
  std::ostringstream out;
  out << "method: " << method << "   mode: " << to_string(mode) << '\n';
  out << std::left << std::setw(14) << "stage" << std::right << std::setw(10) << "Ts^B" << std::setw(10) << "Ts^A"
      << '\n';
  for (Stage s : kStages) {
    out << std::left << std::setw(14) << stage_title(s) << std::right;
    for (const char* split : kSplits) {
      const auto v = value(s, split);
      out << std::setw(10) << (v ? fixed2(*v) : std::string("absent"));
    }
    out << '\n';
  }
  for (const auto& w : warnings) out << "warning: " << w << '\n';
  return out.str();
}

io::KeyValueFile EvalReport::to_kv() const {
  io::KeyValueFile kv;
  kv.set("method", method);
  kv.set("mode", to_string(mode));
  for (const auto& c : cells) {
    const std::string p = "cell." + cell_key(c.stage, c.split) + ".";
    kv.set(p + "present", c.present);
    if (!c.present) continue;
    kv.set(p + "miou", c.miou);
    kv.set(p + "intersection", static_cast<std::int64_t>(c.totals.intersection));
    kv.set(p + "union", static_cast<std::int64_t>(c.totals.union_));
    kv.set(p + "pred_pixels", static_cast<std::int64_t>(c.totals.pred_pixels));
    kv.set(p + "gt_pixels", static_cast<std::int64_t>(c.totals.gt_pixels));
    kv.set(p + "total_pixels", static_cast<std::int64_t>(c.totals.total_pixels));
    kv.set(p + "per_image_sum", c.totals.per_image_sum);
    kv.set(p + "frames", static_cast<std::int64_t>(c.totals.frames));
  }
  for (const auto& [stage, hash] : config_hashes) kv.set("hash." + stage, hash);
  for (std::size_t i = 0; i < warnings.size(); ++i) kv.set("warning." + std::to_string(i), warnings[i]);
  return kv;
}

EvalReport EvalReport::from_kv(const io::KeyValueFile& kv) {
  EvalReport r;
  r.method = kv.require("method");
  r.mode = parse_iou_mode(kv.require("mode"));
  for (Stage s : kStages) {
    for (const char* split : kSplits) {
      const std::string p = "cell." + cell_key(s, split) + ".";
      if (!kv.contains(p + "present")) continue;
      Cell c;
      c.stage = s;
      c.split = split;
      c.present = kv.get_bool(p + "present", false);
      if (c.present) {
        c.miou = kv.get_double(p + "miou", 0.0);
        c.totals.intersection = static_cast<std::uint64_t>(kv.get_int(p + "intersection", 0));
        c.totals.union_ = static_cast<std::uint64_t>(kv.get_int(p + "union", 0));
        c.totals.pred_pixels = static_cast<std::uint64_t>(kv.get_int(p + "pred_pixels", 0));
        c.totals.gt_pixels = static_cast<std::uint64_t>(kv.get_int(p + "gt_pixels", 0));
        c.totals.total_pixels = static_cast<std::uint64_t>(kv.get_int(p + "total_pixels", 0));
        c.totals.per_image_sum = kv.get_double(p + "per_image_sum", 0.0);
        c.totals.frames = static_cast<std::size_t>(kv.get_int(p + "frames", 0));
      }
      r.cells.push_back(c);
    }
  }
  const auto hashes = kv.section("hash");
  for (const auto& [key, value] : hashes.entries()) r.config_hashes[key] = value;
  const auto warnings = kv.section("warning");
  for (const auto& [key, value] : warnings.entries()) r.warnings.push_back(value);
  return r;
}

EvalReport run_protocol(const ProtocolInputs& inputs) {
  EvalReport report;
  report.method = inputs.method;
  report.mode = inputs.mode;
  report.config_hashes = inputs.config_hashes;
  const auto start = std::chrono::steady_clock::now();

  // Ground truth is shared by all stages; load it once per split.
  std::map<std::string, std::vector<Mask>> gt;
  for (const char* split : kSplits) {
    auto it = inputs.test.find(split);
    if (it == inputs.test.end()) continue;
    auto& masks = gt[split];
    for (const auto& r : it->second) {
      if (!r.gt_mask) throw DataError("test frame without ground-truth mask: " + r.path.string());
      masks.push_back(io::read_mask(*r.gt_mask));
    }
  }

  for (Stage s : kStages) {
    const auto root_it = inputs.stage_roots.find(s);
    for (const char* split : kSplits) {
      Cell cell;
      cell.stage = s;
      cell.split = split;
      const auto test_it = inputs.test.find(split);
      if (test_it == inputs.test.end() || test_it->second.empty()) {
        report.warnings.push_back(cell_key(s, split) + ": no test frames");
        report.cells.push_back(cell);
        continue;
      }
      if (root_it == inputs.stage_roots.end() || !fs::is_directory(root_it->second)) {
        report.warnings.push_back(cell_key(s, split) + ": stage tree absent" +
                                  (root_it == inputs.stage_roots.end() ? "" : " (" + root_it->second.string() + ")"));
        report.cells.push_back(cell);
        continue;
      }
      const auto& records = test_it->second;
      std::size_t missing = 0;
      std::string first_missing;
      for (const auto& r : records) {
        auto p = root_it->second / r.relative_key();
        p += ".png";
        if (!fs::exists(p)) {
          if (missing++ == 0) first_missing = p.string();
        }
      }
      if (missing) {
        report.warnings.push_back(cell_key(s, split) + ": " + std::to_string(missing) + " of " +
                                  std::to_string(records.size()) + " masks missing, e.g. " + first_missing);
        report.cells.push_back(cell);
        continue;
      }
      const auto& gts = gt.at(split);
      for (std::size_t i = 0; i < records.size(); ++i) {
        auto p = root_it->second / records[i].relative_key();
        p += ".png";
        cell.totals.add(io::read_mask(p), gts[i]);
      }
      cell.present = true;
      cell.miou = cell.totals.miou(inputs.mode);
      report.cells.push_back(cell);
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

void blit(Image& canvas, const Image& tile, int x0) {
  for (int y = 0; y < tile.height(); ++y) {
    for (int x = 0; x < tile.width(); ++x) {
      for (int c = 0; c < 3; ++c) canvas.at(x0 + x, y, c) = tile.at(x, y, c);
    }
  }
}

Image mask_tile(const Mask& m, int w, int h) {
  const Mask r = m.same_extent(Mask(w, h, 1)) ? m : resize_nearest(m, w, h);
  Image out = make_image(w, h);
  for (std::size_t i = 0; i < r.pixel_count(); ++i) {
    const std::uint8_t v = r[i] ? 255 : 0;
    for (int c = 0; c < 3; ++c) out[i * 3 + c] = v;
  }
  return out;
}

Image map_tile(const FloatMap& m, int w, int h) {
  const FloatMap r = (m.width() == w && m.height() == h) ? m : resize_bilinear(m, w, h);
  Image out = make_image(w, h);
  for (std::size_t i = 0; i < r.pixel_count(); ++i) {
    // Warm ramp: black -> red -> yellow.
    const float v = std::clamp(r[i], 0.0f, 1.0f);
    out[i * 3 + 0] = static_cast<std::uint8_t>(std::lround(255.0f * std::min(1.0f, 2.0f * v)));
    out[i * 3 + 1] = static_cast<std::uint8_t>(std::lround(255.0f * std::max(0.0f, 2.0f * v - 1.0f)));
    out[i * 3 + 2] = 0;
  }
  return out;
}

}  // namespace

std::vector<fs::path> write_panels(const ProtocolInputs& inputs, const PanelOptions& options) {
  std::vector<fs::path> written;
  if (options.frames_per_split <= 0) return written;
  for (const char* split : kSplits) {
    auto it = inputs.test.find(split);
    if (it == inputs.test.end() || it->second.empty()) continue;
    const auto& records = it->second;
    Rng rng(derive_seed(options.seed, std::string("panels/") + split));
    auto order = rng.permutation(records.size());
    order.resize(std::min(order.size(), static_cast<std::size_t>(options.frames_per_split)));
    std::sort(order.begin(), order.end());
    for (std::size_t idx : order) {
      const auto& r = records[idx];
      const Image image = io::read_image(r.path);
      const int w = image.width(), h = image.height();
      // Six tiles separated by white 2-pixel gutters.
      const int pitch = w + 2;
      Image canvas(6 * pitch - 2, h, 3, 255);
      for (int t = 0; t < 6; ++t) blit(canvas, Image(w, h, 3, 128), t * pitch);
      blit(canvas, image, 0);
      if (options.saliency_root) {
        auto p = *options.saliency_root / r.relative_key();
        p += ".png";
        if (fs::exists(p)) blit(canvas, map_tile(io::read_gray(p), w, h), pitch);
      }
      int slot = 2;
      for (Stage s : kStages) {
        auto root = inputs.stage_roots.find(s);
        if (root != inputs.stage_roots.end()) {
          auto p = root->second / r.relative_key();
          p += ".png";
          if (fs::exists(p)) blit(canvas, mask_tile(io::read_mask(p), w, h), slot * pitch);
        }
        ++slot;
      }
      if (r.gt_mask && fs::exists(*r.gt_mask)) blit(canvas, mask_tile(io::read_mask(*r.gt_mask), w, h), 5 * pitch);
      const fs::path out = options.out_dir / split / (r.sequence_id + "_" + std::to_string(r.frame_index) + ".png");
      io::write_image(out, canvas);
      written.push_back(out);
    }
  }
  return written;
}

std::string Comparison::table() const {
  std::ostringstream out;
  out << "ranked by " << ranking_cell << '\n';
  out << std::left << std::setw(6) << "rank" << std::setw(16) << "method" << std::right;
  for (const auto& c : shared_cells) out << std::setw(12) << c;
  out << '\n';
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    out << std::left << std::setw(6) << (i + 1) << std::setw(16) << ranking[i].method << std::right;
    for (const auto& c : shared_cells) {
      const double d = ranking[i].deltas.at(c);
      out << std::setw(12) << ((d >= 0 ? "+" : "") + fixed2(d));
    }
    out << '\n';
  }
  out << "values are differences to the top-ranked method in mIoU points\n";
  return out.str();
}

Comparison compare_methods(std::span<const EvalReport> reports) {
  if (reports.size() < 2) throw ConfigError("compare_methods needs at least two reports");
  Comparison cmp;
  std::vector<std::pair<Stage, std::string>> shared;
  for (Stage s : {Stage::refined, Stage::coarse, Stage::segmenter}) {
    for (const char* split : kSplits) {
      const bool all = std::all_of(reports.begin(), reports.end(),
                                   [&](const EvalReport& r) { return r.value(s, split).has_value(); });
      if (all) shared.emplace_back(s, split);
    }
  }
  if (shared.empty()) throw DataError("compare_methods: the reports share no present cell");
  // Rank on the before split when any before cell is shared.
  auto key = std::find_if(shared.begin(), shared.end(), [](const auto& c) { return c.second == "before"; });
  if (key == shared.end()) key = shared.begin();
  cmp.ranking_cell = cell_key(key->first, key->second);
  for (const auto& [s, split] : shared) cmp.shared_cells.push_back(cell_key(s, split));

  std::vector<std::size_t> order(reports.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return *reports[a].value(key->first, key->second) > *reports[b].value(key->first, key->second);
  });
  const EvalReport& top = reports[order.front()];
  for (std::size_t i : order) {
    RankedMethod m;
    m.method = reports[i].method;
    m.key = *reports[i].value(key->first, key->second);
    for (const auto& [s, split] : shared) {
      m.deltas[cell_key(s, split)] = *reports[i].value(s, split) - *top.value(s, split);
    }
    cmp.ranking.push_back(std::move(m));
  }
  return cmp;
}

}  // namespace basup::eval
