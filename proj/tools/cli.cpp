#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "rtknet/augmentation.hpp"
#include "rtknet/config.hpp"
#include "rtknet/evaluation.hpp"
#include "rtknet/gradcheck.hpp"
#include "rtknet/synthetic.hpp"
#include "rtknet/tensor_io.hpp"
#include "rtknet/weights_io.hpp"

namespace rtknet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config_path;
  std::size_t threads = 1;
};

struct Size2 {
  std::size_t h = 0;
  std::size_t w = 0;
};

// "256x512" -> {256, 512}
Size2 parse_size(const std::string& text) {
  const auto x = text.find('x');
  std::size_t h = 0, w = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    h = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(text);
    w = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ConfigError("expected HxW, got '" + text + "'");
  }
  if (h == 0 || w == 0) throw ConfigError("sizes must be positive, got '" + text + "'");
  return {h, w};
}

// Header files of label maps or tensors in a directory, by name.
std::vector<fs::path> json_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void emit_json(const json& doc, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << doc.dump(2) << '\n';
  } else {
    write_json(path, doc);
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// --- gen -------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::size_t count = 1;
  SyntheticSceneSpec spec;
};

void run_gen(const GenArgs& args, const Globals& g, const AppConfig& cfg) {
  const fs::path root(args.out);
  fs::create_directories(root);
  for (std::size_t i = 0; i < args.count; ++i) {
    SyntheticSceneSpec spec = args.spec;
    spec.seed = g.seed + i;
    spec.num_classes = cfg.pipeline.num_classes;
    spec.thing_class_count = cfg.pipeline.thing_class_count;
    const SyntheticScene synthetic = generate_synthetic_scene(spec);
    const WeightBundle oracle = oracle_weight_bundle(synthetic, spec, cfg.pipeline);

    std::ostringstream name;
    name << "scene_" << std::setw(3) << std::setfill('0') << i;
    const fs::path dir = root / name.str();
    fs::create_directories(dir / "features");
    fs::create_directories(dir / "gt");
    write_json(dir / "spec.json", synthetic_spec_to_json(spec));
    save_scene(dir / "scene", synthetic.scene);
    save_tensor(dir / "features" / "image.json", synthetic.features);
    PostprocConfig pp = cfg.postproc;
    pp.thing_classes = PostprocConfig::with_classes(spec.num_classes, spec.thing_class_count).thing_classes;
    save_label_map(dir / "gt" / "image.json", scene_to_label_map(synthetic.scene, pp));
    save_weight_bundle(dir / "oracle_weights", oracle);
  }
}

// --- infer -----------------------------------------------------------------

struct InferArgs {
  std::string weights;
  std::string features;
  std::string out;
  std::string precision = "f32";
  std::string group = "normalized";
};

void infer_one(const fs::path& features_path, const fs::path& out_path, const WeightBundle& bundle,
               const PostprocConfig& pp, const RunOptions& options, const Globals& g, std::ostream& err) {
  const Tensor features = load_tensor(features_path);
  const PipelineOutput result = run_pipeline(features, bundle.weights, bundle.config, options);
  if (!result.overflow.empty()) {
    err << features_path.string() << ": " << result.overflow.size() << " group-feature channels overflowed binary16\n";
  }
  const HeadOutput& last = result.stages.back();
  const std::size_t batch = last.masks.dim(0), n = last.masks.dim(1), h = last.masks.dim(2), w = last.masks.dim(3);
  const std::size_t nc = last.class_probs.dim(2);
  for (std::size_t b = 0; b < batch; ++b) {
    auto m = last.masks.slice(b);
    auto p = last.class_probs.slice(b);
    const Tensor masks({n, h, w}, std::vector<float>(m.begin(), m.end()));
    const Tensor probs({n, nc}, std::vector<float>(p.begin(), p.end()));
    fs::path target = out_path;
    if (batch > 1) target.replace_filename(out_path.stem().string() + "_" + std::to_string(b) + ".json");
    save_label_map(target, optimized_postprocess(masks, probs, pp, g.threads));
  }
}

void run_infer(const InferArgs& args, const Globals& g, const AppConfig& cfg, std::ostream& err) {
  const WeightBundle bundle = load_weight_bundle(args.weights);
  PostprocConfig pp = cfg.postproc;
  pp.thing_classes =
      PostprocConfig::with_classes(bundle.config.num_classes, bundle.config.thing_class_count).thing_classes;
  pp.validate(bundle.config.num_kernels);

  RunOptions options;
  if (args.precision == "f16sim") options.precision = Precision::f16sim;
  if (args.group == "baseline") options.mode = GroupMode::baseline;

  const fs::path features(args.features), out(args.out);
  if (fs::is_directory(features)) {
    fs::create_directories(out);
    for (const auto& file : json_files(features)) infer_one(file, out / file.filename(), bundle, pp, options, g, err);
  } else {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    infer_one(features, out, bundle, pp, options, g, err);
  }
}

// --- eval-pq ---------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string out;
};

void run_eval(const EvalArgs& args, const AppConfig& cfg, std::ostream& out) {
  PQAccumulator acc(cfg.postproc);
  const fs::path pred(args.pred), gt(args.gt);
  if (fs::is_directory(gt)) {
    const auto files = json_files(gt);
    if (files.empty()) throw InputError("no label maps in " + gt.string());
    for (const auto& file : files) {
      const fs::path mine = pred / file.filename();
      if (!fs::exists(mine)) throw InputError("missing prediction " + mine.string());
      acc.add(match_segments_iou(load_label_map(mine), load_label_map(file), cfg.postproc));
    }
  } else {
    acc.add(match_segments_iou(load_label_map(pred), load_label_map(gt), cfg.postproc));
  }
  emit_json(acc.result().to_json(), args.out, out);
}

// --- bench-postproc --------------------------------------------------------

struct BenchArgs {
  std::size_t n = 100;
  std::string hw = "256x512";
  std::size_t runs = 20;
  std::size_t warmup = 2;
  std::size_t classes = 19;
  std::string out;
};

void run_bench(const BenchArgs& args, const Globals& g, const AppConfig& cfg, std::ostream& out,
               std::ostream& err) {
  const Size2 size = parse_size(args.hw);
  if (args.runs == 0) throw ConfigError("--runs must be at least 1");
  const BenchInputs inputs = make_bench_inputs(args.n, size.h, size.w, args.classes, g.seed);
  PostprocConfig pp = cfg.postproc;
  pp.thing_classes = PostprocConfig::with_classes(args.classes, std::min(args.classes, cfg.pipeline.thing_class_count))
                         .thing_classes;
  pp.validate(args.n);

  std::ostringstream csv;
  csv << "method,n_masks,height,width,threads,run_index,millis\n";
  std::vector<double> base_ms, opt_ms;
  for (std::size_t r = 0; r < args.warmup + args.runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const PanopticLabelMap a = baseline_postprocess(inputs.masks, inputs.probs, pp);
    const auto t1 = std::chrono::steady_clock::now();
    const PanopticLabelMap b = optimized_postprocess(inputs.masks, inputs.probs, pp, g.threads);
    const auto t2 = std::chrono::steady_clock::now();
    if (a != b) throw InputError("optimized post-processing disagrees with the baseline");
    if (r < args.warmup) continue;
    const std::size_t run = r - args.warmup;
    base_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    opt_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
    csv << "baseline," << args.n << ',' << size.h << ',' << size.w << ",1," << run << ',' << base_ms.back() << '\n';
    csv << "optimized," << args.n << ',' << size.h << ',' << size.w << ',' << g.threads << ',' << run << ','
        << opt_ms.back() << '\n';
  }
  if (args.out.empty()) {
    out << csv.str();
  } else {
    std::ofstream file(args.out);
    if (!file) throw InputError("cannot write " + args.out);
    file << csv.str();
  }
  const double mb = median(base_ms), mo = median(opt_ms);
  err << "median baseline " << mb << " ms, optimized " << mo << " ms, ratio " << mo / mb << '\n';
}

// --- gradcheck -------------------------------------------------------------

bool run_gradcheck(std::size_t instances, const Globals& g, std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_gradient_suites(instances, g.seed)) {
    out << (r.passed() ? "PASS " : "FAIL ") << r.loss << " instances=" << r.instances
        << " max_rel_error=" << r.worst_rel_error << " tolerance=" << r.tolerance << '\n';
    ok = ok && r.passed();
  }
  return ok;
}

// --- augment-stats ---------------------------------------------------------

struct AugmentArgs {
  std::size_t trials = 10000;
  std::string hw = "128x256";
  std::string crop = "64x128";
  std::string out;
};

// One small thing near the top-left corner over a stuff background.
GroundTruthScene off_center_scene(std::size_t h, std::size_t w) {
  const std::size_t side = std::max<std::size_t>(1, std::min(h, w) / 16);
  Segment thing{0, true, BinaryMask(h, w)};
  Segment background{1, false, BinaryMask(h, w)};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const bool inside = r >= side && r < 2 * side && c >= side && c < 2 * side;
      (inside ? thing : background).mask.at(r, c) = 1;
    }
  }
  return make_scene(h, w, {thing, background});
}

void run_augment_stats(const AugmentArgs& args, const Globals& g, const AppConfig& cfg, std::ostream& out) {
  const Size2 size = parse_size(args.hw), crop = parse_size(args.crop);
  AugConfig aug = cfg.augmentation;
  aug.crop_h = crop.h;
  aug.crop_w = crop.w;
  const CropStats stats = crop_acceptance_stats(off_center_scene(size.h, size.w), aug, args.trials, g.seed);
  json doc = stats.to_json();
  doc["height"] = size.h;
  doc["width"] = size.w;
  doc["crop_h"] = crop.h;
  doc["crop_w"] = crop.w;
  doc["max_attempts"] = aug.max_attempts;
  emit_json(doc, args.out, out);
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"RT-K-Net panoptic segmentation core: synthetic data, inference, evaluation and checks", "rtk"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw");
  app.add_option("--config", g.config_path, "JSON config with pipeline/postproc/augmentation/loss sections");
  app.add_option("--threads", g.threads, "Worker threads for optimized post-processing")->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Write synthetic scenes, features, ground truth and oracle weights");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of scenes (seeds seed, seed+1, ...)");
  gen_cmd->add_option("--height", gen.spec.height);
  gen_cmd->add_option("--width", gen.spec.width);
  gen_cmd->add_option("--things", gen.spec.num_things);
  gen_cmd->add_option("--stuff", gen.spec.num_stuff);
  gen_cmd->add_option("--channels", gen.spec.channels);
  gen_cmd->add_option("--noise", gen.spec.noise, "Gaussian feature noise std");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Run the pipeline and post-processing, write label maps");
  infer_cmd->add_option("--weights", infer.weights, "Weight bundle directory")->required();
  infer_cmd->add_option("--features", infer.features, "Feature tensor header or directory of them")->required();
  infer_cmd->add_option("--out", infer.out, "Label map header, or directory when --features is one")->required();
  infer_cmd->add_option("--precision", infer.precision)->check(CLI::IsMember({"f32", "f16sim"}));
  infer_cmd->add_option("--group", infer.group)->check(CLI::IsMember({"normalized", "baseline"}));

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval-pq", "Panoptic Quality of predicted against ground-truth label maps");
  eval_cmd->add_option("--pred", eval.pred, "Predicted label map header or directory")->required();
  eval_cmd->add_option("--gt", eval.gt, "Ground-truth label map header or directory")->required();
  eval_cmd->add_option("--out", eval.out, "JSON output file (default stdout)");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench-postproc", "Time baseline against optimized post-processing");
  bench_cmd->add_option("--n", bench.n, "Number of masks")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--hw", bench.hw, "Mask size HxW");
  bench_cmd->add_option("--runs", bench.runs, "Timed runs");
  bench_cmd->add_option("--warmup", bench.warmup, "Discarded runs");
  bench_cmd->add_option("--classes", bench.classes)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--out", bench.out, "CSV output file (default stdout)");

  std::size_t grad_instances = 50;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every loss gradient");
  grad_cmd->add_option("--instances", grad_instances, "Random instances per loss")->check(CLI::PositiveNumber);

  AugmentArgs augment;
  auto* aug_cmd = app.add_subcommand("augment-stats", "Crop acceptance rates, instance-aware against plain");
  aug_cmd->add_option("--trials", augment.trials)->check(CLI::PositiveNumber);
  aug_cmd->add_option("--hw", augment.hw, "Scene size HxW");
  aug_cmd->add_option("--crop", augment.crop, "Crop size HxW");
  aug_cmd->add_option("--out", augment.out, "JSON output file (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "rtk: " << e.what() << '\n';
    return kExitUsage;
  }

  AppConfig cfg;
  try {
    if (!g.config_path.empty()) cfg = load_app_config(g.config_path);
    if (*bench_cmd) parse_size(bench.hw);
    if (*aug_cmd) {
      parse_size(augment.hw);
      parse_size(augment.crop);
    }
  } catch (const ConfigError& e) {
    err << "rtk: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*gen_cmd) run_gen(gen, g, cfg);
    if (*infer_cmd) run_infer(infer, g, cfg, err);
    if (*eval_cmd) run_eval(eval, cfg, out);
    if (*bench_cmd) run_bench(bench, g, cfg, out, err);
    if (*grad_cmd && !run_gradcheck(grad_instances, g, out)) {
      err << "rtk: gradient check failed\n";
      return kExitFailure;
    }
    if (*aug_cmd) run_augment_stats(augment, g, cfg, out);
  } catch (const std::exception& e) {
    err << "rtk: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace rtknet
