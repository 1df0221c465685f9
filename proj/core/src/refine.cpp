#include "basup/refine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <set>

#include <httplib.h>
#include <unistd.h>

#include "basup/error.hpp"
#include "basup/morphology.hpp"

namespace basup::refine {

// Classical regions ---------------------------------------------------------------

namespace {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), size_(n, 1), internal_(n, 0.0) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  /// Joins two roots; the larger becomes the root.
  std::size_t join(std::size_t a, std::size_t b, double weight) {
    if (size_[a] < size_[b] || (size_[a] == size_[b] && b < a)) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    internal_[a] = std::max({internal_[a], internal_[b], weight});
    return a;
  }
  std::size_t size(std::size_t root) const { return size_[root]; }
  double internal(std::size_t root) const { return internal_[root]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
  std::vector<double> internal_;
};

std::vector<float> smooth_channels(const Image& image, double sigma) {
  const int w = image.width();
  const int h = image.height();
  std::vector<float> src(image.storage().begin(), image.storage().end());
  if (sigma <= 0.0) return src;
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= total;
  std::vector<float> tmp(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, w - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * src[(static_cast<std::size_t>(y) * w + xx) * 3 + c];
        }
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<float>(acc);
      }
    }
  }
  std::vector<float> out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, h - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[(static_cast<std::size_t>(yy) * w + x) * 3 + c];
        }
        out[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

struct Edge {
  std::size_t a;
  std::size_t b;
  double w;
};

}  // namespace

LabelMap classical_regions(const Image& image, const RegionParams& params) {
  if (image.channels() != 3) throw ShapeError("classical_regions: expected an RGB image");
  if (params.k < 0.0 || params.sigma < 0.0 || params.min_size < 0) throw ConfigError("invalid region parameters");
  const int w = image.width();
  const int h = image.height();
  LabelMap labels(w, h, 1);
  if (w == 0 || h == 0) return labels;
  const std::vector<float> img = smooth_channels(image, params.sigma);
  auto diff = [&](std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = static_cast<double>(img[3 * p + c]) - img[3 * q + c];
      s += d * d;
    }
    return std::sqrt(s);
  };
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(w) * h * 4);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      if (x + 1 < w) edges.push_back({p, p + 1, diff(p, p + 1)});
      if (y + 1 < h) edges.push_back({p, p + static_cast<std::size_t>(w), diff(p, p + static_cast<std::size_t>(w))});
      if (x + 1 < w && y + 1 < h) {
        const std::size_t q = p + static_cast<std::size_t>(w) + 1;
        edges.push_back({p, q, diff(p, q)});
      }
      if (x + 1 < w && y > 0) {
        const std::size_t q = p - static_cast<std::size_t>(w) + 1;
        edges.push_back({p, q, diff(p, q)});
      }
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.w < b.w; });

  DisjointSet ds(static_cast<std::size_t>(w) * h);
  for (const auto& e : edges) {
    const std::size_t a = ds.find(e.a);
    const std::size_t b = ds.find(e.b);
    if (a == b) continue;
    const double ta = ds.internal(a) + params.k / static_cast<double>(ds.size(a));
    const double tb = ds.internal(b) + params.k / static_cast<double>(ds.size(b));
    if (e.w <= std::min(ta, tb)) ds.join(a, b, e.w);
  }

  // Fold every region below min_size into its largest neighbour until none
  // remain (or a single region is left).
  for (bool changed = true; changed;) {
    changed = false;
    std::map<std::size_t, std::set<std::size_t>> neighbours;
    for (const auto& e : edges) {
      const std::size_t a = ds.find(e.a);
      const std::size_t b = ds.find(e.b);
      if (a == b) continue;
      if (ds.size(a) < static_cast<std::size_t>(params.min_size)) neighbours[a].insert(b);
      if (ds.size(b) < static_cast<std::size_t>(params.min_size)) neighbours[b].insert(a);
    }
    std::vector<std::size_t> small;
    for (const auto& [root, nb] : neighbours) small.push_back(root);
    std::stable_sort(small.begin(), small.end(),
                     [&](std::size_t a, std::size_t b) { return ds.size(a) < ds.size(b); });
    for (std::size_t s : small) {
      const std::size_t root = ds.find(s);
      if (ds.size(root) >= static_cast<std::size_t>(params.min_size)) continue;
      std::size_t best = root;
      for (std::size_t n : neighbours[s]) {
        const std::size_t r = ds.find(n);
        if (r == root) continue;
        if (best == root || ds.size(r) > ds.size(best) || (ds.size(r) == ds.size(best) && r < best)) best = r;
      }
      if (best != root) {
        ds.join(root, best, 0.0);
        changed = true;
      }
    }
  }

  std::map<std::size_t, std::uint16_t> ids;
  for (std::size_t p = 0; p < labels.pixel_count(); ++p) {
    const std::size_t r = ds.find(p);
    auto it = ids.find(r);
    if (it == ids.end()) {
      if (ids.size() >= 65535) throw Error("classical_regions: more than 65535 regions");
      it = ids.emplace(r, static_cast<std::uint16_t>(ids.size() + 1)).first;
    }
    labels[p] = it->second;
  }
  return labels;
}

// Providers -----------------------------------------------------------------------

void ProviderConfig::validate() const {
  if (timeout_seconds < 1) throw ConfigError("provider timeout must be >= 1 second");
  if (regions.k < 0.0 || regions.sigma < 0.0 || regions.min_size < 0) throw ConfigError("invalid region parameters");
}

io::KeyValueFile ProviderConfig::to_kv(const std::string& prefix) const {
  io::KeyValueFile kv;
  const std::string p = prefix.empty() ? "" : prefix + ".";
  kv.set(p + "provider", to_string(provider));
  kv.set(p + "region_k", regions.k);
  kv.set(p + "region_sigma", regions.sigma);
  kv.set(p + "region_min_size", regions.min_size);
  if (!endpoint.empty()) kv.set(p + "endpoint", endpoint);
  if (!runner.empty()) kv.set(p + "runner", runner);
  kv.set(p + "timeout_seconds", timeout_seconds);
  return kv;
}

ProviderConfig ProviderConfig::from_kv(const io::KeyValueFile& kv, const std::string& prefix) {
  const io::KeyValueFile s = prefix.empty() ? kv : kv.section(prefix);
  ProviderConfig c;
  c.provider = parse_instance_provider(s.get("provider", to_string(c.provider)));
  c.regions.k = s.get_double("region_k", c.regions.k);
  c.regions.sigma = s.get_double("region_sigma", c.regions.sigma);
  c.regions.min_size = static_cast<int>(s.get_int("region_min_size", c.regions.min_size));
  c.endpoint = s.get("endpoint", "");
  c.runner = s.get("runner", "");
  c.timeout_seconds = static_cast<int>(s.get_int("timeout_seconds", c.timeout_seconds));
  c.validate();
  return c;
}

namespace {

LabelMap query_endpoint(const Image& image, const ProviderConfig& config) {
  const std::string& url = config.endpoint;
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) {
    throw ProviderError("external provider endpoint must start with http:// (got '" + url + "')");
  }
  const auto slash = url.find('/', scheme.size());
  const std::string host = url.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : url.substr(slash);
  httplib::Client client(host);
  client.set_connection_timeout(config.timeout_seconds, 0);
  client.set_read_timeout(config.timeout_seconds, 0);
  client.set_write_timeout(config.timeout_seconds, 0);
  auto res = client.Post(path, io::encode_png(image), "image/png");
  if (!res) {
    throw ProviderError("external provider unreachable at " + url + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw ProviderError("external provider at " + url + " answered HTTP " + std::to_string(res->status));
  }
  try {
    return io::decode_labels(res->body, url);
  } catch (const IoError& e) {
    throw ProviderError(std::string("external provider returned an invalid label map: ") + e.what());
  }
}

LabelMap run_command(const Image& image, const ProviderConfig& config) {
  static std::atomic<unsigned> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("basup-provider-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  const auto input = dir / "image.png";
  const auto output = dir / "labels.png";
  io::write_image(input, image);
  std::string cmd = config.runner;
  auto substitute = [&](const std::string& key, const std::string& value) {
    for (auto pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size())) {
      cmd.replace(pos, key.size(), value);
    }
  };
  substitute("{input}", "'" + input.string() + "'");
  substitute("{output}", "'" + output.string() + "'");
  const int status = std::system(cmd.c_str());
  LabelMap labels;
  std::string failure;
  if (status != 0) {
    failure = "external provider command failed (status " + std::to_string(status) + "): " + config.runner;
  } else if (!std::filesystem::exists(output)) {
    failure = "external provider command wrote no label map: " + config.runner;
  } else {
    try {
      labels = io::read_labels(output);
    } catch (const IoError& e) {
      failure = std::string("external provider returned an invalid label map: ") + e.what();
    }
  }
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  if (!failure.empty()) throw ProviderError(failure);
  return labels;
}

}  // namespace

InstanceMaskSet get_instances(const Image& image, const ProviderConfig& config,
                              const std::optional<std::filesystem::path>& gt_instances) {
  InstanceMaskSet out;
  out.provider = config.provider;
  switch (config.provider) {
    case InstanceProvider::oracle:
      if (!gt_instances) throw ProviderError("oracle instance provider needs ground-truth instance maps");
      out.labels = compact_labels(io::read_labels(*gt_instances));
      break;
    case InstanceProvider::classical_regions:
      out.labels = classical_regions(image, config.regions);
      break;
    case InstanceProvider::external_promptable:
      if (!config.endpoint.empty()) {
        out.labels = compact_labels(query_endpoint(image, config));
      } else if (!config.runner.empty()) {
        out.labels = compact_labels(run_command(image, config));
      } else {
        throw ProviderError("external_promptable provider is not configured: set refine.endpoint or refine.runner");
      }
      break;
  }
  if (!out.labels.same_extent(image)) {
    throw ProviderError("instance map is " + std::to_string(out.labels.width()) + "x" +
                        std::to_string(out.labels.height()) + ", image is " + std::to_string(image.width()) + "x" +
                        std::to_string(image.height()));
  }
  return out;
}

// Refinement ----------------------------------------------------------------------

std::string to_string(LeftoverPolicy p) { return p == LeftoverPolicy::drop ? "drop" : "keep"; }

LeftoverPolicy parse_leftover(const std::string& name) {
  if (name == "drop") return LeftoverPolicy::drop;
  if (name == "keep") return LeftoverPolicy::keep;
  throw ConfigError("unknown leftover policy '" + name + "'");
}

void RefineParams::validate() const {
  if (!(overlap_tau > 0.0 && overlap_tau <= 1.0)) throw ConfigError("overlap_tau must be in (0,1]");
}

io::KeyValueFile RefineParams::to_kv(const std::string& prefix) const {
  io::KeyValueFile kv;
  const std::string p = prefix.empty() ? "" : prefix + ".";
  kv.set(p + "overlap_tau", overlap_tau);
  kv.set(p + "leftover", to_string(leftover));
  kv.set(p + "fill_holes", fill_holes);
  return kv;
}

RefineParams RefineParams::from_kv(const io::KeyValueFile& kv, const std::string& prefix) {
  const io::KeyValueFile s = prefix.empty() ? kv : kv.section(prefix);
  RefineParams r;
  r.overlap_tau = s.get_double("overlap_tau", r.overlap_tau);
  r.leftover = parse_leftover(s.get("leftover", to_string(r.leftover)));
  r.fill_holes = s.get_bool("fill_holes", r.fill_holes);
  r.validate();
  return r;
}

RefinedMask refine_mask(const Mask& coarse, const InstanceMaskSet& instances, const RefineParams& params) {
  params.validate();
  if (!coarse.same_extent(instances.labels)) {
    throw ShapeError("refine_mask: coarse mask " + std::to_string(coarse.width()) + "x" +
                     std::to_string(coarse.height()) + " vs instances " + std::to_string(instances.labels.width()) +
                     "x" + std::to_string(instances.labels.height()));
  }
  std::size_t max_label = 0;
  for (auto l : instances.labels.data()) max_label = std::max<std::size_t>(max_label, l);
  std::vector<std::size_t> area(max_label + 1, 0), hit(max_label + 1, 0);
  RefinedMask out;
  out.leftover = params.leftover;
  for (std::size_t i = 0; i < coarse.pixel_count(); ++i) {
    const auto l = instances.labels[i];
    ++area[l];
    if (coarse[i]) {
      ++hit[l];
      if (l == 0) ++out.leftover_pixels;
    }
  }
  std::vector<bool> chosen(max_label + 1, false);
  for (std::size_t l = 1; l <= max_label; ++l) {
    if (area[l] == 0) continue;
    const double overlap = static_cast<double>(hit[l]) / static_cast<double>(area[l]);
    if (overlap >= params.overlap_tau) {
      chosen[l] = true;
      out.selected.push_back({static_cast<int>(l), overlap});
    }
  }
  out.mask = make_mask(coarse.width(), coarse.height());
  for (std::size_t i = 0; i < coarse.pixel_count(); ++i) {
    const auto l = instances.labels[i];
    const bool leftover = l == 0 && coarse[i] && params.leftover == LeftoverPolicy::keep;
    out.mask[i] = (chosen[l] && l != 0) || leftover ? 1 : 0;
  }
  if (params.fill_holes) out.mask = basup::fill_holes(out.mask);
  return out;
}

RefineSummary batch_refine(const data::RecordList& records, const std::filesystem::path& coarse_root,
                           const ProviderConfig& provider, const RefineParams& params,
                           const std::filesystem::path& out_root, bool resume) {
  params.validate();
  provider.validate();
  RefineSummary summary;
  for (const auto& r : records) {
    auto key = out_root / r.relative_key();
    auto mask_path = key;
    mask_path += ".png";
    auto sidecar = key;
    sidecar += ".txt";
    if (resume && std::filesystem::exists(mask_path) && std::filesystem::exists(sidecar)) {
      ++summary.skipped;
      continue;
    }
    auto coarse_path = coarse_root / r.relative_key();
    coarse_path += ".png";
    if (!std::filesystem::exists(coarse_path)) throw DataError("missing coarse mask: " + coarse_path.string());
    const Mask coarse = io::read_mask(coarse_path);
    const Image image = io::read_image(r.path);
    const InstanceMaskSet inst = get_instances(image, provider, r.gt_instances);
    const RefinedMask refined = refine_mask(coarse, inst, params);
    io::write_mask(mask_path, refined.mask);

    io::KeyValueFile side = params.to_kv("");
    side.set("source", r.path.string());
    side.set("coarse", coarse_path.string());
    side.set("provider", to_string(provider.provider));
    side.set("instances", inst.count());
    side.set("leftover_pixels", static_cast<std::int64_t>(refined.leftover_pixels));
    side.set("selected.count", static_cast<int>(refined.selected.size()));
    for (std::size_t i = 0; i < refined.selected.size(); ++i) {
      side.set("selected." + std::to_string(i) + ".instance", refined.selected[i].instance_id);
      side.set("selected." + std::to_string(i) + ".overlap", refined.selected[i].overlap);
    }
    side.save(sidecar);
    ++summary.written;
  }
  return summary;
}

}  // namespace basup::refine
