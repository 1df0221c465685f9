#include "basup/bgremoval.hpp"

#include <algorithm>
#include <cmath>

#include "basup/error.hpp"
#include "basup/morphology.hpp"
#include "basup/rng.hpp"
#include "basup/scenegen.hpp"

namespace basup::br {

void ForegroundParams::validate() const {
  if (!(dev_thresh >= 0.0)) throw ConfigError("dev_thresh must be >= 0");
  if (!(sat_thresh >= 0.0 && sat_thresh <= 1.0)) throw ConfigError("sat_thresh must be in [0,1]");
  if (min_blob < 0) throw ConfigError("min_blob must be >= 0");
  if (!(scale_floor >= 0.0)) throw ConfigError("scale_floor must be >= 0");
  if (closing_iterations < 0) throw ConfigError("closing_iterations must be >= 0");
}

io::KeyValueFile ForegroundParams::to_kv(const std::string& prefix) const {
  io::KeyValueFile kv;
  const std::string p = prefix.empty() ? "" : prefix + ".";
  kv.set(p + "dev_thresh", dev_thresh);
  kv.set(p + "sat_thresh", sat_thresh);
  kv.set(p + "min_blob", min_blob);
  kv.set(p + "scale_floor", scale_floor);
  kv.set(p + "closing_iterations", closing_iterations);
  return kv;
}

ForegroundParams ForegroundParams::from_kv(const io::KeyValueFile& kv, const std::string& prefix) {
  const io::KeyValueFile s = prefix.empty() ? kv : kv.section(prefix);
  ForegroundParams p;
  p.dev_thresh = s.get_double("dev_thresh", p.dev_thresh);
  p.sat_thresh = s.get_double("sat_thresh", p.sat_thresh);
  p.min_blob = static_cast<int>(s.get_int("min_blob", p.min_blob));
  p.scale_floor = s.get_double("scale_floor", p.scale_floor);
  p.closing_iterations = static_cast<int>(s.get_int("closing_iterations", p.closing_iterations));
  p.validate();
  return p;
}

double median_inplace(std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  const std::size_t n = values.size();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double upper = *mid;
  if (n % 2) return upper;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

BackgroundModel fit_background(const std::vector<Image>& frames, const std::string& label) {
  if (frames.size() < 3) {
    throw DataError("fit_background('" + label + "'): need at least 3 frames, got " + std::to_string(frames.size()));
  }
  const Image& first = frames.front();
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (!frames[i].same_shape(first)) {
      throw DataError("fit_background('" + label + "'): frame " + std::to_string(i) + " has resolution " +
                      std::to_string(frames[i].width()) + "x" + std::to_string(frames[i].height()) +
                      ", expected " + std::to_string(first.width()) + "x" + std::to_string(first.height()));
    }
  }
  BackgroundModel model;
  model.label = label;
  model.median = FloatMap(first.width(), first.height(), 3);
  model.scale = FloatMap(first.width(), first.height(), 3);
  std::vector<double> values(frames.size());
  const std::size_t n = first.storage().size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < frames.size(); ++f) values[f] = frames[f][i];
    const double med = median_inplace(values);
    for (std::size_t f = 0; f < frames.size(); ++f) values[f] = std::abs(frames[f][i] - med);
    const double mad = median_inplace(values);
    model.median[i] = static_cast<float>(med);
    model.scale[i] = static_cast<float>(mad * 1.4826);
  }
  return model;
}

BackgroundModel fit_background(const data::RecordList& records, const std::string& label) {
  std::vector<Image> frames;
  frames.reserve(records.size());
  for (const auto& r : records) {
    frames.push_back(io::read_image(r.path));
    if (!frames.back().same_shape(frames.front())) {
      throw DataError("fit_background('" + label + "'): mixed resolutions at " + r.path.string());
    }
  }
  return fit_background(frames, label);
}

double saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int mx = std::max({r, g, b});
  const int mn = std::min({r, g, b});
  if (mx == 0) return 0.0;
  return static_cast<double>(mx - mn) / static_cast<double>(mx);
}

Mask raw_foreground(const Image& image, const BackgroundModel& model, const ForegroundParams& params) {
  if (image.width() != model.width() || image.height() != model.height() || image.channels() != 3) {
    throw ShapeError("foreground_mask: image " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                     " does not match background model " + std::to_string(model.width()) + "x" +
                     std::to_string(model.height()));
  }
  Mask out = make_mask(image.width(), image.height());
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    bool fg = false;
    for (std::size_t c = 0; c < 3 && !fg; ++c) {
      const std::size_t i = 3 * p + c;
      const double scale = std::max<double>(model.scale[i], params.scale_floor);
      fg = std::abs(image[i] - model.median[i]) > params.dev_thresh * scale;
    }
    if (!fg) fg = saturation(image[3 * p], image[3 * p + 1], image[3 * p + 2]) > params.sat_thresh;
    out[p] = fg ? 1 : 0;
  }
  return out;
}

Mask foreground_mask(const Image& image, const BackgroundModel& model, const ForegroundParams& params) {
  Mask m = raw_foreground(image, model, params);
  if (params.closing_iterations > 0) m = close3(m, params.closing_iterations);
  if (params.min_blob > 1) m = remove_small_components(m, params.min_blob, Connectivity::eight);
  return m;
}

Image foreground_variant(const Image& image, const Mask& foreground) {
  if (!image.same_extent(foreground)) throw ShapeError("foreground_variant: mask size mismatch");
  Image out = image;
  for (std::size_t p = 0; p < foreground.pixel_count(); ++p) {
    if (!foreground[p]) std::fill_n(&out[3 * p], 3, kNeutralGray);
  }
  return out;
}

Image background_variant(const Image& image, const Mask& foreground, const BackgroundModel& model) {
  if (!image.same_extent(foreground) || !image.same_extent(model.median)) {
    throw ShapeError("background_variant: size mismatch");
  }
  Image out = image;
  for (std::size_t p = 0; p < foreground.pixel_count(); ++p) {
    if (!foreground[p]) continue;
    for (std::size_t c = 0; c < 3; ++c) {
      out[3 * p + c] = static_cast<std::uint8_t>(std::clamp(std::lround(model.median[3 * p + c]), 0L, 255L));
    }
  }
  return out;
}

std::vector<std::size_t> select_half(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  auto perm = rng.permutation(n);
  perm.resize((n + 1) / 2);
  std::sort(perm.begin(), perm.end());
  return perm;
}

std::size_t ThreeClassSet::count(const std::string& label) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [&](const ThreeClassItem& i) { return i.label == label; }));
}

ThreeClassSet build_three_class_set(const data::RecordList& before, const data::RecordList& after,
                                    std::uint64_t seed) {
  ThreeClassSet set;
  for (const auto* records : {&before, &after}) {
    for (const auto& r : *records) set.items.push_back({r, r.label, Variant::foreground, r.sequence_id});
  }
  for (const auto* records : {&before, &after}) {
    if (records->empty()) continue;
    const std::string cls = records->front().label;
    for (std::size_t idx : select_half(records->size(), derive_seed(seed, "br/" + cls))) {
      const auto& r = (*records)[idx];
      set.items.push_back({r, "background", Variant::background, cls + "-" + r.sequence_id});
    }
  }
  return set;
}

Image render_item(const ThreeClassItem& item, const BackgroundModel& model, const ForegroundParams& params) {
  const Image image = io::read_image(item.source.path);
  const Mask fg = foreground_mask(image, model, params);
  return item.variant == Variant::foreground ? foreground_variant(image, fg) : background_variant(image, fg, model);
}

namespace {

Image median_image(const BackgroundModel& model) {
  Image out = make_image(model.width(), model.height());
  for (std::size_t i = 0; i < out.storage().size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(model.median[i]), 0L, 255L));
  }
  return out;
}

}  // namespace

BrSummary write_three_class_set(const data::RecordList& before, const data::RecordList& after,
                                const std::filesystem::path& out_root, const ForegroundParams& params,
                                std::uint64_t seed) {
  params.validate();
  if (before.empty() || after.empty()) throw DataError("bgremove: both before and after training frames are required");
  const BackgroundModel model_b = fit_background(before, before.front().label);
  const BackgroundModel model_a = fit_background(after, after.front().label);
  const ThreeClassSet set = build_three_class_set(before, after, seed);

  for (const auto& item : set.items) {
    const BackgroundModel& model = item.source.label == model_b.label ? model_b : model_a;
    const std::string stem = scene::frame_file_stem(item.source.frame_index);
    io::write_image(out_root / "train" / item.label / item.sequence_id / (stem + ".png"),
                    render_item(item, model, params));
    if (item.source.gt_flow) {
      const auto dst = scene::gt_paths(out_root, "train", item.label, item.sequence_id, item.source.frame_index).flow;
      io::ensure_parent(dst);
      std::filesystem::copy_file(*item.source.gt_flow, dst, std::filesystem::copy_options::overwrite_existing);
    }
  }
  io::write_image(out_root / "models" / (model_b.label + "_median.png"), median_image(model_b));
  io::write_image(out_root / "models" / (model_a.label + "_median.png"), median_image(model_a));

  BrSummary summary;
  summary.before = set.count(model_b.label);
  summary.after = set.count(model_a.label);
  summary.background = set.count("background");
  summary.out_root = out_root;

  io::KeyValueFile manifest = params.to_kv();
  manifest.set("format", "basup-br");
  manifest.set("seed", static_cast<std::int64_t>(seed));
  manifest.set("counts.before", static_cast<std::int64_t>(summary.before));
  manifest.set("counts.after", static_cast<std::int64_t>(summary.after));
  manifest.set("counts.background", static_cast<std::int64_t>(summary.background));
  manifest.save(out_root / "manifest.txt");
  return summary;
}

}  // namespace basup::br
