#include "basup/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "basup/error.hpp"
#include "basup/rng.hpp"

namespace basup::pipe {

std::string to_string(StageId stage) {
  switch (stage) {
    case StageId::data: return "data";
    case StageId::bgremove: return "bgremove";
    case StageId::train_classifier: return "train-classifier";
    case StageId::cam: return "cam";
    case StageId::refine: return "refine";
    case StageId::train_seg: return "train-seg";
    case StageId::segment: return "segment";
    case StageId::eval: return "eval";
  }
  return "?";
}

StageId parse_stage(const std::string& name) {
  if (name == "data" || name == "generate" || name == "ingest") return StageId::data;
  for (StageId s : kAllStages) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown stage '" + name +
                    "' (expected generate, ingest, bgremove, train-classifier, cam, refine, train-seg, segment, eval)");
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string threshold_name(sal::ThresholdMode m) { return m == sal::ThresholdMode::fixed ? "fixed" : "otsu"; }

sal::ThresholdMode parse_threshold(const std::string& s) {
  if (s == "fixed") return sal::ThresholdMode::fixed;
  if (s == "otsu") return sal::ThresholdMode::otsu;
  throw ConfigError("unknown saliency threshold mode '" + s + "' (expected fixed or otsu)");
}

void append(io::KeyValueFile& into, const io::KeyValueFile& from) {
  for (const auto& [k, v] : from.entries()) into.set(k, v);
}

}  // namespace

void SaliencySettings::validate() const {
  if (threshold == sal::ThresholdMode::fixed && !(tau > 0.0 && tau < 1.0)) {
    throw ConfigError("saliency tau must be in (0,1)");
  }
  if (method == sal::Method::raw_map && layer != sal::kLastConv && !layer.empty()) {
    throw ConfigError("saliency layer cannot be chosen for raw class maps");
  }
}

io::KeyValueFile SaliencySettings::to_kv(const std::string& prefix) const {
  io::KeyValueFile kv;
  const std::string p = prefix.empty() ? "" : prefix + ".";
  kv.set(p + "method", sal::to_string(method));
  kv.set(p + "threshold", threshold_name(threshold));
  kv.set(p + "tau", tau);
  kv.set(p + "layer", layer);
  return kv;
}

SaliencySettings SaliencySettings::from_kv(const io::KeyValueFile& kv, const std::string& prefix) {
  const io::KeyValueFile s = prefix.empty() ? kv : kv.section(prefix);
  SaliencySettings out;
  out.method = sal::parse_method(s.get("method", sal::to_string(out.method)));
  out.threshold = parse_threshold(s.get("threshold", threshold_name(out.threshold)));
  out.tau = s.get_double("tau", out.tau);
  out.layer = s.get("layer", out.layer);
  out.validate();
  return out;
}

void PipelineConfig::validate() const {
  if (dataset_root.empty()) scene.validate();
  foreground.validate();
  classifier.validate();
  saliency.validate();
  provider.validate();
  refine.validate();
  seg.validate();
  if (panels_per_split < 0) throw ConfigError("eval panels must be >= 0");
  if (output_root.empty()) throw ConfigError("global output_root must not be empty");
}

io::KeyValueFile PipelineConfig::to_kv() const {
  io::KeyValueFile kv;
  kv.set("global.seed", static_cast<std::int64_t>(seed));
  kv.set("global.output_root", output_root.string());
  kv.set("global.dataset_root", dataset_root.string());
  kv.set("global.layout", data::to_string(layout));
  kv.set("global.method_name", method_name);
  append(kv, scene.to_kv("scene"));
  kv.set("bgremoval.enabled", background_removal);
  append(kv, foreground.to_kv("bgremoval"));
  append(kv, classifier.to_kv("classifier"));
  append(kv, saliency.to_kv("saliency"));
  append(kv, provider.to_kv("refine"));
  append(kv, refine.to_kv("refine"));
  append(kv, seg.to_kv("segtrain"));
  kv.set("eval.mode", eval::to_string(iou_mode));
  kv.set("eval.panels", panels_per_split);
  return kv;
}

PipelineConfig PipelineConfig::from_kv(const io::KeyValueFile& kv) {
  // Misspelled keys would otherwise be silently ignored.
  PipelineConfig defaults;
  defaults.classifier.learning_rate = 0.0;
  const io::KeyValueFile reference = defaults.to_kv();
  std::set<std::string> known;
  for (const auto& [k, v] : reference.entries()) known.insert(k);
  known.insert("classifier.learning_rate");
  known.insert("classifier.init_checkpoint");
  for (const auto& [k, v] : kv.entries()) {
    if (!known.count(k)) throw ConfigError("unknown configuration key '" + k + "'");
  }

  PipelineConfig c;
  c.seed = static_cast<std::uint64_t>(kv.get_int("global.seed", 0));
  c.output_root = kv.get("global.output_root", c.output_root.string());
  c.dataset_root = kv.get("global.dataset_root", "");
  c.layout = data::parse_layout(kv.get("global.layout", data::to_string(c.layout)));
  c.method_name = kv.get("global.method_name", "");
  c.scene = scene::SceneConfig::from_kv(kv, "scene");
  c.background_removal = kv.get_bool("bgremoval.enabled", true);
  c.foreground = br::ForegroundParams::from_kv(kv, "bgremoval");
  c.classifier = cls::ClassifierConfig::from_kv(kv, "classifier");
  c.saliency = SaliencySettings::from_kv(kv, "saliency");
  c.provider = refine::ProviderConfig::from_kv(kv, "refine");
  c.refine = refine::RefineParams::from_kv(kv, "refine");
  c.seg = seg::SegConfig::from_kv(kv, "segtrain");
  c.iou_mode = eval::parse_iou_mode(kv.get("eval.mode", eval::to_string(c.iou_mode)));
  c.panels_per_split = static_cast<int>(kv.get_int("eval.panels", c.panels_per_split));
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) { return from_kv(io::KeyValueFile::load(path)); }

std::string PipelineConfig::method() const {
  if (!method_name.empty()) return method_name;
  std::string m = sal::to_string(saliency.method);
  if (classifier.puzzle_enabled) m += "+puzzle";
  if (classifier.temporal_enabled) m += "+temporal";
  if (!background_removal) m += "/two-class";
  return m;
}

PipelineConfig PipelineConfig::resolved() const {
  PipelineConfig r = *this;
  r.scene.seed = derive_seed(seed, "scene");
  r.classifier.seed = derive_seed(seed, "classifier");
  r.seg.seed = derive_seed(seed, "segtrain");
  r.classifier.num_classes = background_removal ? 3 : 2;
  r.validate();
  return r;
}

// ---------------------------------------------------------------------------
// Stage plan

namespace {

std::string stage_settings(const PipelineConfig& c, StageId s) {
  io::KeyValueFile kv;
  switch (s) {
    case StageId::data:
      if (c.dataset_root.empty()) {
        kv = c.scene.to_kv("scene");
      } else {
        kv.set("ingest.root", fs::absolute(c.dataset_root).lexically_normal().string());
        kv.set("ingest.layout", data::to_string(c.layout));
      }
      break;
    case StageId::bgremove:
      kv.set("bgremoval.enabled", c.background_removal);
      if (c.background_removal) {
        append(kv, c.foreground.to_kv("bgremoval"));
        kv.set("bgremoval.seed", static_cast<std::int64_t>(derive_seed(c.seed, "bgremoval")));
      }
      break;
    case StageId::train_classifier: kv = c.classifier.to_kv("classifier"); break;
    case StageId::cam: kv = c.saliency.to_kv("saliency"); break;
    case StageId::refine:
      kv = c.provider.to_kv("refine");
      append(kv, c.refine.to_kv("refine"));
      break;
    case StageId::train_seg: kv = c.seg.to_kv("segtrain"); break;
    case StageId::segment: kv.set("segment.rule", "argmax-ties-to-background"); break;
    case StageId::eval:
      kv.set("eval.mode", eval::to_string(c.iou_mode));
      kv.set("eval.panels", c.panels_per_split);
      kv.set("eval.method", c.method());
      break;
  }
  return kv.str();
}

}  // namespace

StagePlan plan_stages(const PipelineConfig& c) {
  StagePlan plan;
  std::string prev;
  for (StageId s : kAllStages) {
    const std::string settings = stage_settings(c, s);
    const std::string hash = io::hash_text(prev + "\n" + to_string(s) + "\n" + settings);
    std::string name = to_string(s);
    if (s == StageId::data) name = c.dataset_root.empty() ? "generate" : "ingest";
    plan.settings[s] = settings;
    plan.hashes[s] = hash;
    plan.dirs[s] = c.output_root / (name + "-" + hash.substr(0, 12));
    prev = hash;
  }
  return plan;
}

fs::path dataset_root(const PipelineConfig& c, const StagePlan& plan) {
  return c.dataset_root.empty() ? plan.dirs.at(StageId::data) / "dataset" : c.dataset_root;
}

RunRecords collect_records(const PipelineConfig& c, const fs::path& root) {
  data::IngestOptions opts;
  opts.layout = c.dataset_root.empty() ? data::Layout::canonical : c.layout;
  const auto ingested = data::ingest(root, opts);
  RunRecords out;
  out.train_before = ingested.split.train.at("before");
  out.test = ingested.split.test;
  return out;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

constexpr char kStamp[] = "stage.txt";

struct Context {
  const PipelineConfig& config;
  const RunOptions& options;
  StagePlan plan;
  bool resume_items = false;
  RunResult* result = nullptr;

  void log(const std::string& msg) const {
    if (options.log) options.log(msg);
  }
  fs::path dir(StageId s) const { return plan.dirs.at(s); }
  fs::path root() const { return dataset_root(config, plan); }
};

void run_data(Context& ctx) {
  const fs::path dir = ctx.dir(StageId::data);
  if (ctx.config.dataset_root.empty()) {
    const auto manifest = scene::generate_scene(ctx.config.scene, dir / "dataset");
    manifest.to_kv(ctx.config.scene).save(dir / "manifest.txt");
    ctx.log("generated " + std::to_string(manifest.train_before_frames + manifest.train_after_frames) +
            " train and " + std::to_string(manifest.test_before_frames + manifest.test_after_frames) +
            " test frames");
  } else {
    data::IngestOptions opts;
    opts.layout = ctx.config.layout;
    const auto ingested = data::ingest(ctx.config.dataset_root, opts);
    ingested.stats.to_kv().save(dir / "stats.txt");
    ctx.log(ingested.stats.report());
  }
}

void run_bgremove(Context& ctx) {
  if (!ctx.config.background_removal) {
    ctx.log("background removal disabled; classifier trains on before/after frames");
    return;
  }
  data::IngestOptions opts;
  opts.layout = ctx.config.dataset_root.empty() ? data::Layout::canonical : ctx.config.layout;
  opts.require_test = false;
  const auto ingested = data::ingest(ctx.root(), opts);
  const auto summary =
      br::write_three_class_set(ingested.split.train.at("before"), ingested.split.train.at("after"),
                                ctx.dir(StageId::bgremove) / "data", ctx.config.foreground,
                                derive_seed(ctx.config.seed, "bgremoval"));
  ctx.log("three-class set: " + std::to_string(summary.before) + " before, " + std::to_string(summary.after) +
          " after, " + std::to_string(summary.background) + " background");
}

cls::ClassifierCheckpoint train_stage_classifier(Context& ctx) {
  const auto& c = ctx.config;
  data::IngestOptions opts;
  opts.require_test = false;
  fs::path root;
  if (c.background_removal) {
    root = ctx.dir(StageId::bgremove) / "data";
    opts.classes = {"before", "after", "background"};
  } else {
    root = ctx.root();
    if (!c.dataset_root.empty()) opts.layout = c.layout;
  }
  auto ingested = data::ingest(root, opts);
  ingested.split.test.clear();
  data::assign_validation(ingested.split, c.classifier.train_ratio, derive_seed(c.classifier.seed, "split"));
  const auto training = cls::load_training_data(ingested.split, opts.classes, c.classifier.temporal_enabled);
  cls::TrainObserver obs;
  obs.on_epoch = [&](const cls::EpochRecord& r) {
    ctx.log("classifier epoch " + std::to_string(r.epoch) + " loss " + io::format_double(r.train_loss) + " val_loss " +
            io::format_double(r.val_loss) + " val_acc " + io::format_double(r.val_accuracy));
  };
  return cls::train_classifier(training, c.classifier, obs);
}

void run_train_classifier(Context& ctx) {
  const fs::path dir = ctx.dir(StageId::train_classifier);
  auto ckpt = train_stage_classifier(ctx);
  cls::save_checkpoint(ckpt, dir / "classifier.bin");
  io::write_text(dir / "curves.csv", ckpt.curves_csv());
  ctx.config.classifier.to_kv("classifier").save(dir / "config.txt");
  ctx.result->classifier = std::move(ckpt);
}

void run_cam(Context& ctx) {
  auto ckpt = cls::load_checkpoint(ctx.dir(StageId::train_classifier) / "classifier.bin");
  const auto records = collect_records(ctx.config, ctx.root());
  sal::SaliencyJob job;
  job.method = ctx.config.saliency.method;
  job.mode = ctx.config.saliency.threshold;
  job.tau = ctx.config.saliency.tau;
  job.layer = ctx.config.saliency.layer;
  job.resume = ctx.resume_items;
  const fs::path dir = ctx.dir(StageId::cam);
  auto s = sal::batch_saliency(ckpt, records.train_before, job, dir / "train");
  job.save_maps = true;
  for (const auto& [split, recs] : records.test) {
    const auto t = sal::batch_saliency(ckpt, recs, job, dir / "test");
    s.written += t.written;
    s.skipped += t.skipped;
  }
  ctx.log("coarse masks: " + std::to_string(s.written) + " written, " + std::to_string(s.skipped) + " reused");
}

void run_refine(Context& ctx) {
  const auto records = collect_records(ctx.config, ctx.root());
  const fs::path cam = ctx.dir(StageId::cam);
  const fs::path dir = ctx.dir(StageId::refine);
  auto s = refine::batch_refine(records.train_before, cam / "train", ctx.config.provider, ctx.config.refine,
                                dir / "train", ctx.resume_items);
  for (const auto& [split, recs] : records.test) {
    const auto t =
        refine::batch_refine(recs, cam / "test", ctx.config.provider, ctx.config.refine, dir / "test", ctx.resume_items);
    s.written += t.written;
    s.skipped += t.skipped;
  }
  ctx.log("refined masks: " + std::to_string(s.written) + " written, " + std::to_string(s.skipped) + " reused");
}

void run_train_seg(Context& ctx) {
  const auto records = collect_records(ctx.config, ctx.root());
  seg::SegObserver obs;
  obs.on_epoch = [&](const seg::SegEpoch& r) {
    ctx.log("segmenter epoch " + std::to_string(r.epoch) + " loss " + io::format_double(r.train_loss) + " val_loss " +
            io::format_double(r.val_loss) + " val_iou " + io::format_double(r.val_iou));
  };
  const auto ckpt =
      seg::train_segmenter(records.train_before, ctx.dir(StageId::refine) / "train", ctx.config.seg, obs);
  const fs::path dir = ctx.dir(StageId::train_seg);
  seg::save_checkpoint(ckpt, dir / "segmenter.bin");
  io::write_text(dir / "curves.csv", ckpt.curves_csv());
}

void run_segment(Context& ctx) {
  const auto ckpt = seg::load_checkpoint(ctx.dir(StageId::train_seg) / "segmenter.bin");
  const auto records = collect_records(ctx.config, ctx.root());
  seg::SegmentSummary s;
  for (const auto& [split, recs] : records.test) {
    const auto t = seg::batch_segment(ckpt, recs, ctx.dir(StageId::segment) / "test", ctx.resume_items);
    s.written += t.written;
    s.skipped += t.skipped;
  }
  ctx.log("segmenter masks: " + std::to_string(s.written) + " written, " + std::to_string(s.skipped) + " reused");
}

eval::ProtocolInputs protocol_inputs(const Context& ctx) {
  eval::ProtocolInputs in;
  in.method = ctx.config.method();
  in.mode = ctx.config.iou_mode;
  in.test = collect_records(ctx.config, ctx.root()).test;
  in.stage_roots[eval::Stage::coarse] = ctx.dir(StageId::cam) / "test";
  in.stage_roots[eval::Stage::refined] = ctx.dir(StageId::refine) / "test";
  in.stage_roots[eval::Stage::segmenter] = ctx.dir(StageId::segment) / "test";
  for (StageId s : kAllStages) {
    if (s != StageId::eval) in.config_hashes[to_string(s)] = ctx.plan.hashes.at(s);
  }
  return in;
}

void run_eval(Context& ctx) {
  const fs::path dir = ctx.dir(StageId::eval);
  const auto in = protocol_inputs(ctx);
  auto report = eval::run_protocol(in);
  report.to_kv().save(dir / "report.txt");
  io::write_text(dir / "report.csv", report.csv());
  io::write_text(dir / "table.txt", report.table());
  io::write_text(dir / "timing.txt", "seconds = " + io::format_double(report.seconds) + "\n");
  eval::PanelOptions panels;
  panels.out_dir = dir / "panels";
  panels.saliency_root = ctx.dir(StageId::cam) / "test" / "maps";
  panels.frames_per_split = ctx.config.panels_per_split;
  panels.seed = derive_seed(ctx.config.seed, "panels");
  eval::write_panels(in, panels);
  ctx.log(report.table());
  ctx.result->report = std::move(report);
}

}  // namespace

RunResult run_pipeline(const PipelineConfig& config, const RunOptions& options) {
  const PipelineConfig c = config.resolved();
  RunResult result;
  Context ctx{c, options, plan_stages(c)};
  ctx.result = &result;
  result.plan = ctx.plan;

  for (StageId s : kAllStages) {
    const fs::path dir = ctx.dir(s);
    const fs::path stamp = dir / kStamp;
    const bool done = fs::exists(stamp);
    if (done && options.resume) {
      ctx.log("[" + to_string(s) + "] reusing " + dir.string());
      result.reused.push_back(s);
      if (s == StageId::train_classifier) result.classifier = cls::load_checkpoint(dir / "classifier.bin");
      if (s == StageId::eval) result.report = eval::EvalReport::from_kv(io::KeyValueFile::load(dir / "report.txt"));
    } else {
      if (!options.resume && fs::exists(dir)) fs::remove_all(dir);
      fs::create_directories(dir);
      ctx.resume_items = options.resume;
      ctx.log("[" + to_string(s) + "] running in " + dir.string());
      const auto start = std::chrono::steady_clock::now();
      try {
        switch (s) {
          case StageId::data: run_data(ctx); break;
          case StageId::bgremove: run_bgremove(ctx); break;
          case StageId::train_classifier: run_train_classifier(ctx); break;
          case StageId::cam: run_cam(ctx); break;
          case StageId::refine: run_refine(ctx); break;
          case StageId::train_seg: run_train_seg(ctx); break;
          case StageId::segment: run_segment(ctx); break;
          case StageId::eval: run_eval(ctx); break;
        }
      } catch (const std::exception& e) {
        throw StageFailure(s, e.what());
      }
      io::write_text(stamp, "hash = " + ctx.plan.hashes.at(s) + "\n\n" + ctx.plan.settings.at(s));
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      ctx.log("[" + to_string(s) + "] done in " + io::format_double(std::round(secs * 10.0) / 10.0) + " s");
      result.completed.push_back(s);
    }
    if (options.until && *options.until == s) break;
  }
  return result;
}

}  // namespace basup::pipe
