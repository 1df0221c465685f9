#include "basup/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "basup/error.hpp"
#include "basup/rng.hpp"

namespace basup::scene {

namespace fs = std::filesystem;

std::string to_string(Camera camera) { return camera == Camera::before ? "before" : "after"; }

Camera parse_camera(const std::string& name) {
  if (name == "before") return Camera::before;
  if (name == "after") return Camera::after;
  throw ConfigError("unknown camera '" + name + "'");
}

std::string sequence_dir_name(int sequence_id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", sequence_id);
  return buf;
}

std::string frame_file_stem(int frame_index) { return sequence_dir_name(frame_index); }

GtPaths gt_paths(const fs::path& root, const std::string& split, const std::string& camera,
                 const std::string& sequence, int frame_index) {
  const fs::path dir = root / split / "gt" / camera / sequence;
  const std::string stem = frame_file_stem(frame_index);
  return {dir / (stem + ".png"), dir / (stem + ".inst.png"), dir / (stem + ".flow")};
}

// ---------------------------------------------------------------------------
// SceneConfig

void SceneConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("SceneConfig: " + m); };
  if (image_size < 32) fail("image_size must be >= 32");
  if (belt_speed < 0 || belt_speed >= image_size) fail("belt_speed must be in [0, image_size)");
  if (frames_per_sequence < 1) fail("frames_per_sequence must be >= 1");
  if (num_sequences_before < 0 || num_sequences_after < 0 || test_sequences_before < 0 ||
      test_sequences_after < 0) {
    fail("sequence counts must be non-negative");
  }
  if (num_sequences_before + num_sequences_after + test_sequences_before + test_sequences_after == 0) {
    fail("zero sequences requested");
  }
  if (unwanted_fraction < 0.0 || unwanted_fraction > 1.0) fail("unwanted_fraction must be in [0,1]");
  if (operator_miss_rate < 0.0 || operator_miss_rate > 1.0) fail("operator_miss_rate must be in [0,1]");
  if (unwanted_hue[0] > unwanted_hue[1] || wanted_hue[0] > wanted_hue[1]) fail("hue ranges must satisfy min <= max");
  if (min_objects < 0 || max_objects < min_objects) fail("object count range must satisfy 0 <= min <= max");
  if (!(min_radius > 0.0) || max_radius < min_radius || max_radius >= 0.4) {
    fail("radius range must satisfy 0 < min <= max < 0.4");
  }
  if (!(min_opacity > 0.0) || max_opacity < min_opacity || max_opacity > 1.0) {
    fail("opacity range must satisfy 0 < min <= max <= 1");
  }
}

io::KeyValueFile SceneConfig::to_kv(const std::string& prefix) const {
  io::KeyValueFile kv;
  const std::string p = prefix.empty() ? "" : prefix + ".";
  kv.set(p + "image_size", image_size);
  kv.set(p + "frames_per_sequence", frames_per_sequence);
  kv.set(p + "num_sequences_before", num_sequences_before);
  kv.set(p + "num_sequences_after", num_sequences_after);
  kv.set(p + "test_sequences_before", test_sequences_before);
  kv.set(p + "test_sequences_after", test_sequences_after);
  kv.set(p + "belt_speed", belt_speed);
  kv.set(p + "min_objects", min_objects);
  kv.set(p + "max_objects", max_objects);
  kv.set(p + "unwanted_fraction", unwanted_fraction);
  kv.set(p + "operator_miss_rate", operator_miss_rate);
  auto put_light = [&](const std::string& name, const LightingBias& l) {
    kv.set(p + name + "_gain", l.gain);
    kv.set(p + name + "_luminance", l.luminance);
    kv.set(p + name + "_tint_r", l.tint[0]);
    kv.set(p + name + "_tint_g", l.tint[1]);
    kv.set(p + name + "_tint_b", l.tint[2]);
  };
  put_light("before_light", before_light);
  put_light("after_light", after_light);
  kv.set(p + "min_radius", min_radius);
  kv.set(p + "max_radius", max_radius);
  kv.set(p + "min_opacity", min_opacity);
  kv.set(p + "max_opacity", max_opacity);
  kv.set(p + "unwanted_hue_min", unwanted_hue[0]);
  kv.set(p + "unwanted_hue_max", unwanted_hue[1]);
  kv.set(p + "wanted_hue_min", wanted_hue[0]);
  kv.set(p + "wanted_hue_max", wanted_hue[1]);
  kv.set(p + "hard_mode", hard_mode);
  kv.set(p + "belt_gray", static_cast<int>(belt_gray));
  kv.set(p + "seed", std::to_string(seed));
  return kv;
}

SceneConfig SceneConfig::from_kv(const io::KeyValueFile& kv, const std::string& prefix) {
  const io::KeyValueFile s = prefix.empty() ? kv : kv.section(prefix);
  SceneConfig c;
  c.image_size = static_cast<int>(s.get_int("image_size", c.image_size));
  c.frames_per_sequence = static_cast<int>(s.get_int("frames_per_sequence", c.frames_per_sequence));
  c.num_sequences_before = static_cast<int>(s.get_int("num_sequences_before", c.num_sequences_before));
  c.num_sequences_after = static_cast<int>(s.get_int("num_sequences_after", c.num_sequences_after));
  c.test_sequences_before = static_cast<int>(s.get_int("test_sequences_before", c.test_sequences_before));
  c.test_sequences_after = static_cast<int>(s.get_int("test_sequences_after", c.test_sequences_after));
  c.belt_speed = static_cast<int>(s.get_int("belt_speed", c.belt_speed));
  c.min_objects = static_cast<int>(s.get_int("min_objects", c.min_objects));
  c.max_objects = static_cast<int>(s.get_int("max_objects", c.max_objects));
  c.unwanted_fraction = s.get_double("unwanted_fraction", c.unwanted_fraction);
  c.operator_miss_rate = s.get_double("operator_miss_rate", c.operator_miss_rate);
  auto get_light = [&](const std::string& name, LightingBias& l) {
    l.gain = s.get_double(name + "_gain", l.gain);
    l.luminance = s.get_double(name + "_luminance", l.luminance);
    l.tint[0] = s.get_double(name + "_tint_r", l.tint[0]);
    l.tint[1] = s.get_double(name + "_tint_g", l.tint[1]);
    l.tint[2] = s.get_double(name + "_tint_b", l.tint[2]);
  };
  get_light("before_light", c.before_light);
  get_light("after_light", c.after_light);
  c.min_radius = s.get_double("min_radius", c.min_radius);
  c.max_radius = s.get_double("max_radius", c.max_radius);
  c.min_opacity = s.get_double("min_opacity", c.min_opacity);
  c.max_opacity = s.get_double("max_opacity", c.max_opacity);
  c.unwanted_hue[0] = s.get_double("unwanted_hue_min", c.unwanted_hue[0]);
  c.unwanted_hue[1] = s.get_double("unwanted_hue_max", c.unwanted_hue[1]);
  c.wanted_hue[0] = s.get_double("wanted_hue_min", c.wanted_hue[0]);
  c.wanted_hue[1] = s.get_double("wanted_hue_max", c.wanted_hue[1]);
  c.hard_mode = s.get_bool("hard_mode", c.hard_mode);
  c.belt_gray = static_cast<std::uint8_t>(s.get_int("belt_gray", c.belt_gray));
  c.seed = std::stoull(s.get("seed", std::to_string(c.seed)));
  return c;
}

// ---------------------------------------------------------------------------
// Objects

double BeltObject::bounding_radius() const {
  if (shape == ObjectShape::ellipse) return std::max(rx, ry);
  double r = 0.0;
  for (const auto& v : vertices) r = std::max(r, std::hypot(v[0], v[1]));
  return r;
}

bool BeltObject::contains(double px, double py, double frame_cx) const {
  const double dx = px - frame_cx;
  const double dy = py - cy;
  if (shape == ObjectShape::ellipse) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = (dx * c + dy * s) / rx;
    const double w = (-dx * s + dy * c) / ry;
    return u * u + w * w <= 1.0;
  }
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = vertices[i];
    const auto& b = vertices[(i + 1) % n];
    const double cross = (b[0] - a[0]) * (dy - a[1]) - (b[1] - a[1]) * (dx - a[0]);
    if (cross < 0.0) return false;
  }
  return true;
}

namespace {

std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h / 60.0)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  auto to8 = [m](double t) {
    return static_cast<std::uint8_t>(std::clamp(std::lround((t + m) * 255.0), 0L, 255L));
  };
  return {to8(r), to8(g), to8(b)};
}

BeltObject sample_object(const SceneConfig& cfg, Rng& rng, bool unwanted) {
  BeltObject o;
  o.unwanted = unwanted;
  const double size = cfg.image_size;
  const double r_major = rng.uniform(cfg.min_radius, cfg.max_radius) * size;
  const double r_minor = r_major * rng.uniform(0.6, 1.0);
  o.rx = r_major;
  o.ry = r_minor;
  o.angle = rng.uniform(0.0, M_PI);
  if (cfg.hard_mode) {
    o.shape = unwanted ? ObjectShape::ellipse : ObjectShape::polygon;
  } else {
    o.shape = rng.bernoulli(0.5) ? ObjectShape::ellipse : ObjectShape::polygon;
  }
  if (o.shape == ObjectShape::polygon) {
    // Points on an ellipse at sorted angles form a convex polygon.
    const int n = static_cast<int>(rng.uniform_int(4, 7));
    std::vector<double> angles(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      angles[static_cast<std::size_t>(i)] = (i + rng.uniform(0.1, 0.9)) * 2.0 * M_PI / n;
    }
    const double c = std::cos(o.angle);
    const double s = std::sin(o.angle);
    for (double a : angles) {
      const double u = o.rx * std::cos(a);
      const double w = o.ry * std::sin(a);
      o.vertices.push_back({u * c - w * s, u * s + w * c});
    }
  }
  double hue = 0.0;
  if (cfg.hard_mode) {
    hue = rng.uniform(0.0, 360.0);
  } else if (unwanted) {
    hue = rng.uniform(cfg.unwanted_hue[0], cfg.unwanted_hue[1]);
  } else {
    hue = rng.uniform(cfg.wanted_hue[0], cfg.wanted_hue[1]);
  }
  o.color = hsv_to_rgb(hue, rng.uniform(0.55, 0.9), rng.uniform(0.55, 0.95));
  o.opacity = rng.uniform(cfg.min_opacity, cfg.max_opacity);
  return o;
}

struct PlacementResult {
  std::vector<BeltObject> objects;
  long violation = 0;
};

int visible_count(const std::vector<BeltObject>& objects, const SceneConfig& cfg, int frame) {
  int n = 0;
  const double shift = static_cast<double>(frame) * cfg.belt_speed;
  for (const auto& o : objects) {
    const double r = o.bounding_radius();
    const double x = o.cx + shift;
    if (x + r > 0.0 && x - r < cfg.image_size) ++n;
  }
  return n;
}

PlacementResult place_objects(const SceneConfig& cfg, Rng& rng) {
  const double w = cfg.image_size;
  const double travel = static_cast<double>(cfg.frames_per_sequence - 1) * cfg.belt_speed;
  const double rmax = cfg.max_radius * w;
  const double x_lo = -travel - rmax;
  const double x_hi = w + rmax;
  const double target = rng.uniform(cfg.min_objects, cfg.max_objects + 1e-9);
  const int total = static_cast<int>(std::lround(target * (x_hi - x_lo) / (w + 2.0 * rmax)));

  PlacementResult result;
  std::vector<BeltObject> placed;
  for (int k = 0; k < total; ++k) {
    const bool unwanted = rng.bernoulli(cfg.unwanted_fraction);
    BeltObject o = sample_object(cfg, rng, unwanted);
    const double r = o.bounding_radius();
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      o.cx = rng.uniform(x_lo, x_hi);
      o.cy = rng.uniform(r + 1.0, w - r - 1.0);
      ok = std::all_of(placed.begin(), placed.end(), [&](const BeltObject& p) {
        return std::hypot(p.cx - o.cx, p.cy - o.cy) > p.bounding_radius() + r + 2.0;
      });
    }
    if (ok) placed.push_back(std::move(o));
  }
  for (int t = 0; t < cfg.frames_per_sequence; ++t) {
    const int n = visible_count(placed, cfg, t);
    if (n < cfg.min_objects) result.violation += cfg.min_objects - n;
    if (n > cfg.max_objects) result.violation += n - cfg.max_objects;
  }
  result.objects = std::move(placed);
  return result;
}

std::uint8_t apply_light(double v, const LightingBias& l, int channel) {
  const double out = l.gain * v + l.luminance + l.tint[static_cast<std::size_t>(channel)];
  return static_cast<std::uint8_t>(std::clamp(std::lround(out), 0L, 255L));
}

SyntheticFrame render_frame(const SceneConfig& cfg, const std::vector<BeltObject>& objects,
                            Camera camera, int frame_index) {
  const int size = cfg.image_size;
  const int shift = frame_index * cfg.belt_speed;
  const LightingBias& light = camera == Camera::before ? cfg.before_light : cfg.after_light;

  SyntheticFrame f;
  f.camera = camera;
  f.frame_index = frame_index;
  f.gt_unwanted = make_mask(size, size);
  f.gt_instances = LabelMap(size, size, 1);
  std::vector<double> linear(static_cast<std::size_t>(size) * size * 3, cfg.belt_gray);

  for (const auto& o : objects) {
    const double r = o.bounding_radius();
    // Pixel x at frame t sits at belt coordinate x - shift; integer shifts keep
    // rasterization an exact translation between frames.
    const int x0 = std::max(0, static_cast<int>(std::floor(o.cx + shift - r)) - 1);
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(o.cx + shift + r)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - r)) - 1);
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(o.cy + r)) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double bx = static_cast<double>(x - shift) + 0.5;
        if (!o.contains(bx, y + 0.5, o.cx)) continue;
        f.gt_instances.at(x, y) = o.id;
        f.gt_unwanted.at(x, y) = o.unwanted ? 1 : 0;
        for (int c = 0; c < 3; ++c) {
          double& px = linear[(static_cast<std::size_t>(y) * size + x) * 3 + static_cast<std::size_t>(c)];
          px = o.opacity * o.color[static_cast<std::size_t>(c)] + (1.0 - o.opacity) * px;
        }
      }
    }
  }
  f.image = make_image(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        f.image.at(x, y, c) =
            apply_light(linear[(static_cast<std::size_t>(y) * size + x) * 3 + static_cast<std::size_t>(c)],
                        light, c);
      }
    }
  }
  return f;
}

}  // namespace

SyntheticSequence generate_sequence(const SceneConfig& config, const std::string& split,
                                    Camera camera, int sequence_id) {
  config.validate();
  Rng rng(derive_seed(config.seed, split + "/" + to_string(camera) + "/" + std::to_string(sequence_id)));

  PlacementResult best;
  best.violation = std::numeric_limits<long>::max();
  for (int attempt = 0; attempt < 200; ++attempt) {
    PlacementResult r = place_objects(config, rng);
    if (r.violation < best.violation) best = std::move(r);
    if (best.violation == 0) break;
  }

  SyntheticSequence seq;
  seq.camera = camera;
  seq.split = split;
  seq.sequence_id = sequence_id;
  std::uint16_t next_id = 1;
  for (auto& o : best.objects) {
    if (camera == Camera::after && o.unwanted) {
      ++seq.unwanted_total;
      if (!rng.bernoulli(config.operator_miss_rate)) continue;
      ++seq.unwanted_missed;
    }
    o.id = next_id++;
    seq.objects.push_back(o);
  }
  if (camera == Camera::before) {
    seq.unwanted_total = static_cast<int>(
        std::count_if(seq.objects.begin(), seq.objects.end(), [](const BeltObject& o) { return o.unwanted; }));
  }

  for (int t = 0; t < config.frames_per_sequence; ++t) {
    SyntheticFrame f = render_frame(config, seq.objects, camera, t);
    f.split = split;
    f.sequence_id = sequence_id;
    if (t + 1 < config.frames_per_sequence) {
      FlowField flow(config.image_size, config.image_size, 2);
      for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
        flow[2 * i] = static_cast<float>(config.belt_speed);
        flow[2 * i + 1] = 0.0f;
      }
      f.gt_flow_to_next = std::move(flow);
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

io::KeyValueFile SceneManifest::to_kv(const SceneConfig& config) const {
  io::KeyValueFile kv = config.to_kv("scene");
  kv.set("format", "basup-scene");
  kv.set("format_version", 1);
  kv.set("layout", "canonical");
  kv.set("counts.train_before_frames", train_before_frames);
  kv.set("counts.train_after_frames", train_after_frames);
  kv.set("counts.test_before_frames", test_before_frames);
  kv.set("counts.test_after_frames", test_after_frames);
  kv.set("counts.train_before_sequences", config.num_sequences_before);
  kv.set("counts.train_after_sequences", config.num_sequences_after);
  kv.set("counts.test_before_sequences", config.test_sequences_before);
  kv.set("counts.test_after_sequences", config.test_sequences_after);
  kv.set("counts.unwanted_instances_before", unwanted_instances_before);
  kv.set("counts.unwanted_instances_after", unwanted_instances_after);
  return kv;
}

SceneManifest generate_scene(const SceneConfig& config, const fs::path& root) {
  config.validate();
  {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec || !fs::is_directory(root)) throw IoError("cannot create output root " + root.string());
  }
  SceneManifest manifest;
  struct Job {
    std::string split;
    Camera camera;
    int count;
    int* frames;
  };
  const Job jobs[] = {
      {"train", Camera::before, config.num_sequences_before, &manifest.train_before_frames},
      {"train", Camera::after, config.num_sequences_after, &manifest.train_after_frames},
      {"test", Camera::before, config.test_sequences_before, &manifest.test_before_frames},
      {"test", Camera::after, config.test_sequences_after, &manifest.test_after_frames},
  };
  for (const Job& job : jobs) {
    const std::string cam = to_string(job.camera);
    for (int s = 0; s < job.count; ++s) {
      SyntheticSequence seq = generate_sequence(config, job.split, job.camera, s);
      if (job.camera == Camera::before) {
        manifest.unwanted_instances_before += seq.unwanted_total;
      } else {
        manifest.unwanted_instances_after += seq.unwanted_missed;
      }
      const std::string seq_name = sequence_dir_name(s);
      for (const auto& f : seq.frames) {
        const fs::path img = root / job.split / cam / seq_name / (frame_file_stem(f.frame_index) + ".png");
        io::write_image(img, f.image);
        const GtPaths gt = gt_paths(root, job.split, cam, seq_name, f.frame_index);
        io::write_mask(gt.mask, f.gt_unwanted);
        io::write_labels(gt.instances, f.gt_instances);
        if (f.gt_flow_to_next) io::write_flow(gt.flow, *f.gt_flow_to_next);
        ++*job.frames;
      }
    }
  }
  manifest.to_kv(config).save(root / "manifest.txt");
  return manifest;
}

InstanceMaskSet oracle_instances(const SyntheticFrame& frame) {
  return {compact_labels(frame.gt_instances), InstanceProvider::oracle};
}

}  // namespace basup::scene
