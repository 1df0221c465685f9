// basup: command line front end for the before/after weak-supervision pipeline.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "basup/acceptance.hpp"
#include "basup/error.hpp"
#include "basup/pipeline.hpp"

namespace fs = std::filesystem;
using namespace basup;

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  std::string until;
  std::string output_root;
  bool quiet = false;
};

void say(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << (msg.empty() || msg.back() != '\n' ? "\n" : "");
}

/// Config file (if any), then --set overrides, then --seed and the output root.
pipe::PipelineConfig load_config(const Globals& g) {
  io::KeyValueFile kv;
  if (!g.config_path.empty()) kv = io::KeyValueFile::load(g.config_path);
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects section.key=value, got '" + o + "'");
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (g.seed) kv.set("global.seed", static_cast<std::int64_t>(*g.seed));
  if (!g.output_root.empty()) {
    kv.set("global.output_root", g.output_root);
  } else if (!kv.contains("global.output_root")) {
    if (const char* env = std::getenv("BASUP_OUTPUT_ROOT"); env && *env) kv.set("global.output_root", env);
  }
  return pipe::PipelineConfig::from_kv(kv);
}

data::RecordList select(const fs::path& root, data::Layout layout, const std::string& split,
                        const std::vector<std::string>& classes) {
  data::IngestOptions opts;
  opts.layout = layout;
  opts.classes = classes;
  opts.require_test = split == "test";
  const auto in = data::ingest(root, opts);
  const auto& part = split == "test" ? in.split.test : in.split.train;
  data::RecordList out;
  for (const auto& c : classes) {
    auto it = part.find(c);
    if (it != part.end()) out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"basup: weakly supervised segmentation from before/after image streams"};
  app.require_subcommand(1);
  // Global flags may follow the subcommand.
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_path, "Pipeline configuration file (INI sections)")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a configuration value, e.g. --set classifier.max_epochs=10");
  app.add_option("--seed", g.seed, "Global seed; every stage seed is derived from it");
  app.add_flag("--resume", g.resume, "Reuse completed stages and skip existing per-frame outputs");
  app.add_option("--until", g.until, "Stop after this pipeline stage");
  app.add_option("--output-root", g.output_root, "Artifact root (default: $BASUP_OUTPUT_ROOT, then ./runs)");
  app.add_flag("-q,--quiet", g.quiet, "Only print results");

  std::string layout_name = "canonical";
  std::string root, out, checkpoint, masks, coarse, split = "train";
  std::string classes = "before,after";

  auto* generate = app.add_subcommand("generate", "Render a synthetic before/after dataset");
  generate->add_option("--out", out, "Dataset root to write")->required();

  auto* ingest = app.add_subcommand("ingest", "Validate a dataset tree and print its statistics");
  ingest->add_option("--root", root)->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--layout", layout_name, "canonical or zenodo");
  ingest->add_option("--out", out, "Write the statistics to this file");

  auto* bgremove = app.add_subcommand("bgremove", "Build the three-class background-removal training set");
  bgremove->add_option("--root", root)->required()->check(CLI::ExistingDirectory);
  bgremove->add_option("--layout", layout_name);
  bgremove->add_option("--out", out)->required();

  auto* train_cls = app.add_subcommand("train-classifier", "Train the auxiliary classifier");
  train_cls->add_option("--root", root, "Dataset or three-class tree")->required()->check(CLI::ExistingDirectory);
  train_cls->add_option("--out", out, "Checkpoint file")->required();

  auto* cam = app.add_subcommand("cam", "Compute saliency maps and coarse masks");
  cam->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  cam->add_option("--root", root)->required()->check(CLI::ExistingDirectory);
  cam->add_option("--layout", layout_name);
  cam->add_option("--split", split, "train or test");
  cam->add_option("--classes", classes, "Comma-separated class folders to process");
  cam->add_option("--out", out)->required();
  bool save_maps = false;
  cam->add_flag("--save-maps", save_maps, "Also write grayscale maps under <out>/maps");

  auto* refine_cmd = app.add_subcommand("refine", "Refine coarse masks with instance masks");
  refine_cmd->add_option("--root", root)->required()->check(CLI::ExistingDirectory);
  refine_cmd->add_option("--layout", layout_name);
  refine_cmd->add_option("--split", split);
  refine_cmd->add_option("--classes", classes);
  refine_cmd->add_option("--coarse", coarse, "Coarse mask tree")->required()->check(CLI::ExistingDirectory);
  refine_cmd->add_option("--out", out)->required();

  auto* train_seg = app.add_subcommand("train-seg", "Train the segmenter on refined pseudo-masks");
  train_seg->add_option("--root", root)->required()->check(CLI::ExistingDirectory);
  train_seg->add_option("--layout", layout_name);
  train_seg->add_option("--masks", masks, "Pseudo-mask tree")->required()->check(CLI::ExistingDirectory);
  train_seg->add_option("--out", out, "Checkpoint file")->required();

  auto* segment_cmd = app.add_subcommand("segment", "Run the segmenter");
  segment_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  segment_cmd->add_option("--root", root)->required()->check(CLI::ExistingDirectory);
  segment_cmd->add_option("--layout", layout_name);
  segment_cmd->add_option("--split", split);
  segment_cmd->add_option("--classes", classes);
  segment_cmd->add_option("--out", out)->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score mask trees against ground truth");
  std::string stages = "c,r,s", splits = "before,after", mode = "dataset", method;
  std::string c_root, r_root, s_root, maps_root;
  std::vector<std::string> compare;
  eval_cmd->add_option("--root", root, "Dataset with annotated test frames")->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--layout", layout_name);
  eval_cmd->add_option("--stages", stages, "Subset of c,r,s");
  eval_cmd->add_option("--splits", splits, "Subset of before,after");
  eval_cmd->add_option("--mode", mode, "dataset or per_image");
  eval_cmd->add_option("--method", method, "Method name for the report");
  eval_cmd->add_option("--coarse", c_root, "C(Ts) tree");
  eval_cmd->add_option("--refined", r_root, "R(Ts) tree");
  eval_cmd->add_option("--segmented", s_root, "S(Ts) tree");
  eval_cmd->add_option("--maps", maps_root, "Saliency maps for panels");
  eval_cmd->add_option("--out", out, "Report directory");
  eval_cmd->add_option("--compare", compare, "Rank existing report.txt files instead of scoring");

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage from one configuration");
  bool print_config = false;
  pipeline->add_flag("--print-config", print_config, "Print the effective configuration and exit");

  auto* acceptance = app.add_subcommand("acceptance", "Run the acceptance suites on synthetic data");
  std::string profile = "fast", work;
  acceptance->add_option("--profile", profile, "fast or full_synthetic");
  acceptance->add_option("--work", work, "Scratch directory (default: <output root>/acceptance)");

  CLI11_PARSE(app, argc, argv);

  try {
    const pipe::PipelineConfig cfg = load_config(g).resolved();
    const data::Layout layout = data::parse_layout(layout_name);
    auto log = [&](const std::string& m) { say(g, m); };

    if (*generate) {
      const auto m = scene::generate_scene(cfg.scene, out);
      std::cout << m.to_kv(cfg.scene).str();
    } else if (*ingest) {
      data::IngestOptions opts;
      opts.layout = layout;
      const auto in = data::ingest(root, opts);
      std::cout << in.stats.report();
      if (!out.empty()) in.stats.to_kv().save(out);
    } else if (*bgremove) {
      data::IngestOptions opts;
      opts.layout = layout;
      opts.require_test = false;
      const auto in = data::ingest(root, opts);
      const auto s = br::write_three_class_set(in.split.train.at("before"), in.split.train.at("after"), out,
                                               cfg.foreground, derive_seed(cfg.seed, "bgremoval"));
      std::cout << "before " << s.before << "\nafter " << s.after << "\nbackground " << s.background << '\n';
    } else if (*train_cls) {
      cls::ClassifierConfig c = cfg.classifier;
      if (!fs::exists(fs::path(root) / "train" / "background")) c.num_classes = 2;
      cls::TrainObserver obs;
      obs.on_epoch = [&](const cls::EpochRecord& r) {
        say(g, "epoch " + std::to_string(r.epoch) + " loss " + io::format_double(r.train_loss) + " val_acc " +
                   io::format_double(r.val_accuracy));
      };
      const auto ckpt = cls::train_classifier(root, c, obs);
      cls::save_checkpoint(ckpt, out);
      std::cout << ckpt.curves_csv();
    } else if (*cam) {
      auto ckpt = cls::load_checkpoint(checkpoint);
      sal::SaliencyJob job;
      job.method = cfg.saliency.method;
      job.mode = cfg.saliency.threshold;
      job.tau = cfg.saliency.tau;
      job.layer = cfg.saliency.layer;
      job.save_maps = save_maps;
      job.resume = g.resume;
      const auto s = sal::batch_saliency(ckpt, select(root, layout, split, split_list(classes)), job, out);
      std::cout << "written " << s.written << "\nskipped " << s.skipped << '\n';
    } else if (*refine_cmd) {
      const auto s = refine::batch_refine(select(root, layout, split, split_list(classes)), coarse, cfg.provider,
                                          cfg.refine, out, g.resume);
      std::cout << "written " << s.written << "\nskipped " << s.skipped << '\n';
    } else if (*train_seg) {
      seg::SegObserver obs;
      obs.on_epoch = [&](const seg::SegEpoch& r) {
        say(g, "epoch " + std::to_string(r.epoch) + " loss " + io::format_double(r.train_loss) + " val_iou " +
                   io::format_double(r.val_iou));
      };
      const auto ckpt = seg::train_segmenter(select(root, layout, "train", {"before"}), masks, cfg.seg, obs);
      seg::save_checkpoint(ckpt, out);
      std::cout << ckpt.curves_csv();
    } else if (*segment_cmd) {
      const auto ckpt = seg::load_checkpoint(checkpoint);
      const auto s = seg::batch_segment(ckpt, select(root, layout, split, split_list(classes)), out, g.resume);
      std::cout << "written " << s.written << "\nskipped " << s.skipped << '\n';
    } else if (*eval_cmd) {
      if (!compare.empty()) {
        std::vector<eval::EvalReport> reports;
        for (const auto& p : compare) reports.push_back(eval::EvalReport::from_kv(io::KeyValueFile::load(p)));
        std::cout << eval::compare_methods(reports).table();
        return 0;
      }
      if (root.empty()) throw ConfigError("eval needs --root (or --compare)");
      eval::ProtocolInputs in;
      in.method = method.empty() ? cfg.method() : method;
      in.mode = eval::parse_iou_mode(mode);
      data::IngestOptions opts;
      opts.layout = layout;
      const auto ingested = data::ingest(root, opts);
      for (const auto& s : split_list(splits)) {
        auto it = ingested.split.test.find(s);
        if (it == ingested.split.test.end()) throw ConfigError("no test split '" + s + "' under " + root);
        in.test[s] = it->second;
      }
      const std::map<eval::Stage, std::string> given{
          {eval::Stage::coarse, c_root}, {eval::Stage::refined, r_root}, {eval::Stage::segmenter, s_root}};
      for (const auto& s : split_list(stages)) {
        const auto st = eval::parse_stage(s);
        in.stage_roots[st] = given.at(st);  // empty path reads as an absent tree
      }
      const auto report = eval::run_protocol(in);
      std::cout << report.table();
      if (!out.empty()) {
        report.to_kv().save(fs::path(out) / "report.txt");
        io::write_text(fs::path(out) / "report.csv", report.csv());
        io::write_text(fs::path(out) / "table.txt", report.table());
        eval::PanelOptions p;
        p.out_dir = fs::path(out) / "panels";
        if (!maps_root.empty()) p.saliency_root = maps_root;
        p.frames_per_split = cfg.panels_per_split;
        p.seed = derive_seed(cfg.seed, "panels");
        eval::write_panels(in, p);
      }
    } else if (*pipeline) {
      if (print_config) {
        std::cout << load_config(g).to_kv().str();
        return 0;
      }
      pipe::RunOptions opts;
      opts.resume = g.resume;
      if (!g.until.empty()) opts.until = pipe::parse_stage(g.until);
      opts.log = log;
      const auto result = pipe::run_pipeline(load_config(g), opts);
      if (result.report) std::cout << result.report->table();
      std::cout << "artifacts: " << result.plan.dirs.begin()->second.parent_path().string() << '\n';
    } else if (*acceptance) {
      acc::AcceptanceOptions opts;
      opts.profile = acc::parse_profile(profile);
      opts.work_dir = work.empty() ? cfg.output_root / "acceptance" : fs::path(work);
      opts.log = log;
      const auto results = acc::run_acceptance(opts);
      std::cout << acc::summary(results);
      return acc::all_passed(results) ? 0 : 1;
    }
  } catch (const pipe::StageFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
