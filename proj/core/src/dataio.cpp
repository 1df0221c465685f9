#include "basup/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "basup/error.hpp"
#include "basup/rng.hpp"
#include "basup/scenegen.hpp"

namespace basup::data {

std::string to_string(Layout layout) { return layout == Layout::canonical ? "canonical" : "zenodo"; }

Layout parse_layout(const std::string& name) {
  if (name == "canonical") return Layout::canonical;
  if (name == "zenodo") return Layout::zenodo;
  throw ConfigError("unknown layout '" + name + "'");
}

fs::path FrameRecord::relative_key() const {
  return fs::path(label) / sequence_id / scene::frame_file_stem(frame_index);
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") return false;
  // Skip auxiliary artifacts such as "0001.inst.png".
  return p.stem().extension().empty();
}

std::optional<int> parse_index(const std::string& s) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 0) return std::nullopt;
  return v;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool want_dirs) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (want_dirs ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void sort_and_check(RecordList& seq_records) {
  std::stable_sort(seq_records.begin(), seq_records.end(),
                   [](const FrameRecord& a, const FrameRecord& b) { return a.frame_index < b.frame_index; });
  for (std::size_t i = 1; i < seq_records.size(); ++i) {
    if (seq_records[i].frame_index <= seq_records[i - 1].frame_index) {
      throw DataError("non-monotonic frame indices in sequence '" + seq_records[i].sequence_id +
                      "': " + seq_records[i].path.string() + " repeats index " +
                      std::to_string(seq_records[i].frame_index));
    }
  }
}

RecordList scan_canonical(const fs::path& root, const std::string& partition, const std::string& cls,
                          bool require_gt) {
  const fs::path class_dir = root / partition / cls;
  if (!fs::is_directory(class_dir)) throw DataError("missing class folder: " + class_dir.string());
  RecordList out;
  for (const auto& seq_dir : sorted_entries(class_dir, true)) {
    const std::string seq = seq_dir.filename().string();
    RecordList seq_records;
    for (const auto& file : sorted_entries(seq_dir, false)) {
      if (!is_image_file(file)) continue;
      auto idx = parse_index(file.stem().string());
      if (!idx) throw DataError("frame file name is not a frame index: " + file.string());
      FrameRecord r;
      r.path = file;
      r.label = cls;
      r.sequence_id = seq;
      r.frame_index = *idx;
      const auto gt = scene::gt_paths(root, partition, cls, seq, *idx);
      if (fs::exists(gt.mask)) r.gt_mask = gt.mask;
      if (fs::exists(gt.instances)) r.gt_instances = gt.instances;
      if (fs::exists(gt.flow)) r.gt_flow = gt.flow;
      if (require_gt && !r.gt_mask) {
        throw DataError("test frame without ground-truth mask: " + file.string() + " (expected " +
                        gt.mask.string() + ")");
      }
      seq_records.push_back(std::move(r));
    }
    sort_and_check(seq_records);
    out.insert(out.end(), seq_records.begin(), seq_records.end());
  }
  return out;
}

RecordList scan_zenodo(const fs::path& root, const std::string& partition, const std::string& cls,
                       bool require_gt) {
  const fs::path class_dir = root / partition / cls;
  if (!fs::is_directory(class_dir)) throw DataError("missing class folder: " + class_dir.string());
  std::map<std::string, RecordList> by_seq;
  for (const auto& file : sorted_entries(class_dir, false)) {
    if (!is_image_file(file)) continue;
    const std::string stem = file.stem().string();
    const auto us = stem.rfind('_');
    std::optional<int> idx;
    if (us != std::string::npos) idx = parse_index(stem.substr(us + 1));
    if (!idx || us == 0) throw DataError("expected <sequence>_<frame> file name: " + file.string());
    FrameRecord r;
    r.path = file;
    r.label = cls;
    r.sequence_id = stem.substr(0, us);
    r.frame_index = *idx;
    const fs::path mask = root / partition / "masks" / cls / (stem + ".png");
    if (fs::exists(mask)) r.gt_mask = mask;
    if (require_gt && !r.gt_mask) {
      throw DataError("test frame without ground-truth mask: " + file.string() + " (expected " + mask.string() + ")");
    }
    by_seq[r.sequence_id].push_back(std::move(r));
  }
  RecordList out;
  for (auto& [seq, records] : by_seq) {
    sort_and_check(records);
    out.insert(out.end(), records.begin(), records.end());
  }
  return out;
}

int count_sequences(const RecordList& records) {
  std::set<std::string> seqs;
  for (const auto& r : records) seqs.insert(r.sequence_id);
  return static_cast<int>(seqs.size());
}

}  // namespace

IngestResult ingest(const fs::path& root, const IngestOptions& options) {
  if (!fs::is_directory(root)) throw DataError("dataset root not found: " + root.string());
  IngestResult result;
  for (const std::string partition : {"train", "test"}) {
    const bool is_test = partition == "test";
    if (is_test && !options.require_test && !fs::is_directory(root / "test")) continue;
    if (!fs::is_directory(root / partition)) throw DataError("missing folder: " + (root / partition).string());
    auto& target = is_test ? result.split.test : result.split.train;
    for (const auto& cls : options.classes) {
      target[cls] = options.layout == Layout::canonical ? scan_canonical(root, partition, cls, is_test)
                                                        : scan_zenodo(root, partition, cls, is_test);
    }
  }
  result.stats = compute_stats(result.split);
  if (options.probe_resolution) {
    for (const auto& [cls, records] : result.split.train) {
      if (records.empty()) continue;
      const Image probe = io::read_image(records.front().path);
      result.stats.width = probe.width();
      result.stats.height = probe.height();
      break;
    }
  }
  return result;
}

DatasetStats compute_stats(const DatasetSplit& split) {
  DatasetStats stats;
  auto add = [&](const std::string& partition, const std::map<std::string, RecordList>& part) {
    for (const auto& [cls, records] : part) {
      stats.frames[partition + "/" + cls] = static_cast<int>(records.size());
      stats.sequences[partition + "/" + cls] = count_sequences(records);
      stats.total_frames += static_cast<int>(records.size());
    }
  };
  add("train", split.train);
  add("val", split.val);
  add("test", split.test);
  return stats;
}

io::KeyValueFile DatasetStats::to_kv() const {
  io::KeyValueFile kv;
  for (const auto& [k, v] : frames) kv.set("frames." + k, v);
  for (const auto& [k, v] : sequences) kv.set("sequences." + k, v);
  kv.set("total_frames", total_frames);
  kv.set("width", width);
  kv.set("height", height);
  return kv;
}

std::string DatasetStats::report() const {
  std::ostringstream out;
  out << "partition/class        frames  sequences\n";
  for (const auto& [k, v] : frames) {
    char line[96];
    std::snprintf(line, sizeof(line), "%-20s %8d %10d\n", k.c_str(), v, sequences.at(k));
    out << line;
  }
  out << "total frames: " << total_frames << "\n";
  if (width > 0) out << "resolution: " << width << "x" << height << "\n";
  return out.str();
}

std::pair<RecordList, RecordList> split_train_val(const RecordList& records, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must be in (0,1)");
  std::vector<std::string> seqs;
  for (const auto& r : records) {
    if (std::find(seqs.begin(), seqs.end(), r.sequence_id) == seqs.end()) seqs.push_back(r.sequence_id);
  }
  if (seqs.size() < 2) {
    const std::string label = records.empty() ? std::string("<empty>") : records.front().label;
    throw DataError("class '" + label + "' has fewer than 2 sequences; cannot split train/val");
  }
  const auto n = static_cast<double>(seqs.size());
  auto n_val = static_cast<std::size_t>(std::floor(n * (1.0 - ratio) + 1e-9));
  n_val = std::clamp<std::size_t>(n_val, 1, seqs.size() - 1);
  Rng rng(seed);
  const auto perm = rng.permutation(seqs.size());
  std::set<std::string> val_seqs;
  for (std::size_t i = 0; i < n_val; ++i) val_seqs.insert(seqs[perm[i]]);
  RecordList train, val;
  for (const auto& r : records) (val_seqs.count(r.sequence_id) ? val : train).push_back(r);
  return {std::move(train), std::move(val)};
}

void assign_validation(DatasetSplit& split, double ratio, std::uint64_t seed) {
  split.val.clear();
  for (auto& [cls, records] : split.train) {
    auto [tr, va] = split_train_val(records, ratio, derive_seed(seed, "split/" + cls));
    records = std::move(tr);
    split.val[cls] = std::move(va);
  }
}

// Batching ---------------------------------------------------------------------

std::vector<Sample> load_samples(const RecordList& records, const std::map<std::string, int>& label_index) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = label_index.find(r.label);
    if (it == label_index.end()) throw DataError("label '" + r.label + "' not in the class map: " + r.path.string());
    out.push_back({io::read_image(r.path), it->second, r.sequence_id, r.frame_index});
  }
  return out;
}

void write_tensor_sample(const Image& image, nn::Tensor<float>& out, int n) {
  if (image.width() != out.w() || image.height() != out.h() || out.c() != 3) {
    throw ShapeError("write_tensor_sample: image does not match tensor " + out.shape_string());
  }
  const std::size_t plane = out.plane();
  float* dst = out.sample(n);
  const auto& src = image.storage();
  for (std::size_t i = 0; i < plane; ++i) {
    dst[i] = src[3 * i] / 255.0f;
    dst[plane + i] = src[3 * i + 1] / 255.0f;
    dst[2 * plane + i] = src[3 * i + 2] / 255.0f;
  }
}

nn::Tensor<float> to_tensor(const Image& image) {
  nn::Tensor<float> t(1, 3, image.height(), image.width());
  write_tensor_sample(image, t, 0);
  return t;
}

void color_jitter(float* rgb, std::size_t plane, const AugmentationSpec& spec, Rng& rng) {
  float* r = rgb;
  float* g = rgb + plane;
  float* b = rgb + 2 * plane;
  auto factor = [&](double f) { return static_cast<float>(rng.uniform(1.0 - f, 1.0 + f)); };
  const float fb = factor(spec.brightness);
  const float fc = factor(spec.contrast);
  const float fs = factor(spec.saturation);
  auto clamp01 = [](float v) { return std::clamp(v, 0.0f, 1.0f); };
  // A unit factor skips its step so zero jitter reproduces the input exactly.
  if (fb != 1.0f) {
    for (std::size_t i = 0; i < 3 * plane; ++i) rgb[i] = clamp01(rgb[i] * fb);
  }
  if (fc != 1.0f) {
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    const auto m = static_cast<float>(mean / static_cast<double>(plane));
    for (std::size_t i = 0; i < 3 * plane; ++i) rgb[i] = clamp01(m + (rgb[i] - m) * fc);
  }
  if (fs == 1.0f) return;
  for (std::size_t i = 0; i < plane; ++i) {
    const float gray = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
    r[i] = clamp01(gray + (r[i] - gray) * fs);
    g[i] = clamp01(gray + (g[i] - gray) * fs);
    b[i] = clamp01(gray + (b[i] - gray) * fs);
  }
}

BatchIterator::BatchIterator(const std::vector<Sample>& samples, int batch_size, int resize_to,
                             AugmentationSpec augmentation, std::uint64_t seed, bool shuffle)
    : samples_(&samples), batch_size_(batch_size), resize_to_(resize_to), aug_(augmentation), seed_(seed),
      shuffle_(shuffle) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (resize_to < 1) throw ConfigError("resize_to must be >= 1");
  start_epoch(0);
}

void BatchIterator::start_epoch(int epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  if (shuffle_) {
    Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(epoch)));
    order_ = rng.permutation(samples_->size());
  } else {
    order_.resize(samples_->size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (samples_->size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
}

std::uint64_t BatchIterator::jitter_seed(std::size_t index) const {
  return derive_seed(derive_seed(seed_ ^ 0xa5a5a5a5ULL, static_cast<std::uint64_t>(epoch_)), index);
}

bool BatchIterator::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
  batch.images = nn::Tensor<float>(static_cast<int>(count), 3, resize_to_, resize_to_);
  batch.labels.resize(count);
  batch.indices.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t idx = order_[cursor_ + k];
    const Sample& s = (*samples_)[idx];
    write_tensor_sample(resize_bilinear(s.image, resize_to_, resize_to_), batch.images, static_cast<int>(k));
    if (aug_.enabled) {
      Rng rng(jitter_seed(idx));
      color_jitter(batch.images.sample(static_cast<int>(k)), batch.images.plane(), aug_, rng);
    }
    batch.labels[k] = s.label;
    batch.indices[k] = idx;
  }
  cursor_ += count;
  return true;
}

}  // namespace basup::data
