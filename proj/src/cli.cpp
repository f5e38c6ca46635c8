#include "binsplat/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

#include "binsplat/binary_codec.hpp"
#include "binsplat/errors.hpp"
#include "binsplat/io.hpp"
#include "binsplat/parallel.hpp"
#include "binsplat/rasterizer.hpp"
#include "binsplat/synth.hpp"
#include "binsplat/trainer.hpp"

namespace fs = std::filesystem;

namespace binsplat {
namespace {

// Thrown for argument combinations CLI11 cannot check on its own.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A single directory expands to its *.bgm files in name order.
std::vector<std::string> expand_mask_paths(const std::vector<std::string>& args) {
  if (args.size() == 1 && fs::is_directory(args[0])) {
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(args[0]))
      if (entry.is_regular_file() && entry.path().extension() == ".bgm") out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw FormatError("no .bgm files in '" + args[0] + "'");
    return out;
  }
  return args;
}

MaskPyramid load_truth(const std::vector<std::string>& paths) {
  std::vector<MaskImage> views;
  for (const auto& p : paths) views.push_back(read_mask_image(p));
  if (views.empty()) throw FormatError("no mask files given");
  const int levels = views.front().level_count();
  for (std::size_t v = 0; v < views.size(); ++v)
    if (views[v].level_count() != levels)
      throw FormatError("'" + paths[v] + "' has " + std::to_string(views[v].level_count()) + " levels, expected " +
                        std::to_string(levels));
  return MaskPyramid::build(std::move(views), levels);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

void check_level(int level, int levels) {
  if (level < 1 || level > levels)
    throw UsageError("--level must be between 1 and " + std::to_string(levels) + " (levels are 1-based), got " +
                     std::to_string(level));
}

std::string view_name(std::size_t v) {
  std::ostringstream name;
  name << "view_" << std::setw(3) << std::setfill('0') << v << ".bgm";
  return name.str();
}

// --- commands ---------------------------------------------------------------

struct SynthArgs {
  std::string spec, out;
  std::optional<uint64_t> seed;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthSpec spec = a.spec.empty() ? SynthSpec{} : load_synth_spec(a.spec);
  if (a.seed) spec.seed = *a.seed;
  const SynthScene s = generate(spec);

  const fs::path dir(a.out);
  fs::create_directories(dir / "masks");
  write_scene((dir / "scene.bgs").string(), s.scene);
  write_cameras((dir / "cameras.txt").string(), s.cameras);
  for (std::size_t v = 0; v < s.masks.size(); ++v) write_mask_image((dir / "masks" / view_name(v)).string(), s.masks[v]);
  write_text(dir / "tree.txt", format_tree_file(s.tree, spec.seed));
  out << "synth: " << s.scene.size() << " gaussians, " << s.cameras.size() << " views, " << s.tree.size()
      << " mask nodes, seed " << spec.seed << " -> " << dir.string() << "\n";
  return kExitOk;
}

struct ImportArgs {
  std::string ply, out, level_dims = "8,12,12";
};

int cmd_import(const ImportArgs& a, std::ostream& out) {
  LevelLayout layout;
  try {
    layout = LevelLayout::parse(a.level_dims);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--level-dims: ") + e.what());
  }
  const GaussianScene scene = import_ply(a.ply, layout);
  write_scene(a.out, scene);
  out << "import-ply: " << scene.size() << " gaussians, layout " << layout.to_string() << " -> " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string scene, cameras, config, out, resume;
  std::vector<std::string> masks;
  std::optional<uint64_t> seed;
  std::optional<int> iterations;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : load_config(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.iterations) config.iterations = *a.iterations;
  const fs::path dir(a.out);
  if (config.checkpoint_every > 0 && config.checkpoint_prefix.empty())
    config.checkpoint_prefix = (dir / "checkpoint").string();

  std::optional<Checkpoint> ckpt;
  GaussianScene scene;
  if (!a.resume.empty()) {
    ckpt = read_checkpoint(a.resume);
  } else {
    scene = read_scene(a.scene);
  }
  const LevelLayout layout = ckpt ? ckpt->scene.layout() : scene.layout();
  const std::vector<Camera> cameras = read_cameras(a.cameras);
  const MaskPyramid pyramid = load_masks(expand_mask_paths(a.masks), layout);

  // Constructing the trainer validates every input before anything is written.
  Trainer trainer = ckpt ? Trainer::resume(*ckpt, cameras, pyramid, config)
                         : Trainer(std::move(scene), cameras, pyramid, config);
  for (const auto& w : trainer.warnings()) err << "warning: " << w << "\n";
  fs::create_directories(dir);
  write_text(dir / "config.txt", format_config(config));

  const auto t0 = std::chrono::steady_clock::now();
  trainer.run();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const TrainResult result = trainer.result();
  write_scene((dir / "scene.bgs").string(), result.scene);
  write_codes((dir / "codes.bgc").string(), result.codes);
  write_text(dir / "train_log.csv", format_log_csv(result.log, layout, config.seed));
  write_checkpoint((dir / "state").string(), result.state);
  out << "train: " << trainer.iteration() << " iterations";
  if (result.skipped_iterations) out << " (" << result.skipped_iterations << " skipped)";
  if (!result.log.empty()) out << ", final loss " << result.log.back().loss.total;
  out << ", seed " << config.seed << ", " << std::fixed << std::setprecision(1) << seconds << " s -> "
      << dir.string() << "\n";
  return kExitOk;
}

struct RenderArgs {
  std::string scene, codes, cameras, out;
  int camera = 0, level = 1;
};

int cmd_render_class(const RenderArgs& a, std::ostream& out) {
  const GaussianScene scene = read_scene(a.scene);
  const CodeTable codes = read_codes(a.codes);
  const std::vector<Camera> cameras = read_cameras(a.cameras);
  check_level(a.level, scene.layout().levels());
  if (a.camera < 0 || static_cast<std::size_t>(a.camera) >= cameras.size())
    throw UsageError("--camera must be between 0 and " + std::to_string(cameras.size() - 1));
  if (codes.codes.size() != scene.size() || codes.layout != scene.layout())
    throw ValidationError("code table does not match the scene (size or layout)");
  const MaskImage labels = render_class_map(scene, cameras[a.camera], codes, a.level);
  write_mask_image(a.out, labels);
  std::set<uint32_t> classes(labels.levels[0].begin(), labels.levels[0].end());
  classes.erase(0);
  out << "render-class: camera " << a.camera << ", level " << a.level << ", " << classes.size() << " classes -> "
      << a.out << "\n";
  return kExitOk;
}

struct ExtractArgs {
  std::string scene, codes, out;
  int level = 1;
  uint32_t class_value = 0;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
  const GaussianScene scene = read_scene(a.scene);
  const CodeTable codes = read_codes(a.codes);
  check_level(a.level, codes.layout.levels());
  if (codes.codes.size() != scene.size() || codes.layout != scene.layout())
    throw ValidationError("code table does not match the scene (size or layout)");
  if ((a.class_value & ~codes.layout.prefix_mask(a.level)) != 0)
    throw UsageError("--class has bits above level " + std::to_string(a.level));
  const std::vector<uint32_t> picked = select_gaussians(codes, a.level, a.class_value);
  GaussianScene subset(scene.layout());
  for (uint32_t i : picked) subset.add(scene[i], scene.features(i));
  write_scene(a.out, subset);
  out << "extract-object: " << picked.size() << " of " << scene.size() << " gaussians -> " << a.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::vector<std::string> pred, truth;
  std::string codes, csv;
  int level = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const MaskPyramid truth = load_truth(expand_mask_paths(a.truth));
  const std::vector<std::string> pred_paths = expand_mask_paths(a.pred);
  if (a.level != 0) check_level(a.level, truth.levels());
  if (pred_paths.size() != truth.view_count())
    throw ValidationError(std::to_string(pred_paths.size()) + " predicted images for " +
                          std::to_string(truth.view_count()) + " truth views");
  std::vector<MaskImage> pred;
  for (const auto& p : pred_paths) {
    pred.push_back(read_mask_image(p));
    const MaskImage& m = pred.back();
    const MaskImage& t = truth.view(pred.size() - 1).labels;
    if (m.width != t.width || m.height != t.height) throw ValidationError("'" + p + "' size differs from its truth view");
    if (m.level_count() != 1 && m.level_count() < truth.levels())
      throw ValidationError("'" + p + "' must hold one level or all truth levels");
  }
  EvalReport report;
  const int first = a.level ? a.level : 1;
  const int last = a.level ? a.level : truth.levels();
  if (a.level == 0 && pred.front().level_count() == 1 && truth.levels() > 1)
    throw UsageError("single-level predictions need --level");
  for (int l = first; l <= last; ++l) report.levels.push_back(eval_miou(pred, truth, l));
  if (!a.codes.empty()) {
    const CodeTable codes = read_codes(a.codes);
    report.code_bytes = codes_header_bytes(codes.layout) + 4 * codes.codes.size();
  }
  out << report.to_table();
  if (!a.csv.empty()) write_text(a.csv, report.to_csv());
  return kExitOk;
}

struct BenchArgs {
  std::string scene, cameras, codes;
  int views = 1, level = 0;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const GaussianScene scene = read_scene(a.scene);
  const std::vector<Camera> cameras = read_cameras(a.cameras);
  const CodeTable codes = a.codes.empty() ? extract_codes(scene) : read_codes(a.codes);
  if (codes.codes.size() != scene.size() || codes.layout != scene.layout())
    throw ValidationError("code table does not match the scene (size or layout)");
  const int level = a.level ? a.level : scene.layout().levels();
  check_level(level, scene.layout().levels());
  if (a.views < 1 || static_cast<std::size_t>(a.views) > cameras.size())
    throw UsageError("--views must be between 1 and " + std::to_string(cameras.size()));
  const RenderTiming t = time_renders(scene, cameras, codes, a.views, level);
  out << std::fixed << std::setprecision(4);
  out << "bench: " << scene.size() << " gaussians, " << t.views << " views, " << num_threads() << " threads\n";
  out << "feature render:   " << t.feature_seconds / t.views << " s/view\n";
  out << "class-map render: " << t.class_map_seconds / t.views << " s/view\n";
  out << "ratio: " << std::setprecision(3) << t.class_map_seconds / t.feature_seconds << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const std::string magic = read_magic(path);
  if (magic == "BGS1") {
    const GaussianScene s = read_scene(path);
    out << "BGS1 scene: " << s.size() << " gaussians, layout " << s.layout().to_string() << " (" << s.dims()
        << " feature bits)\n";
  } else if (magic == "BGM1") {
    const MaskImage m = read_mask_image(path);
    out << "BGM1 masks: " << m.width << "x" << m.height << ", " << m.level_count() << " levels\n";
    for (int l = 1; l <= m.level_count(); ++l) {
      std::set<uint32_t> ids(m.levels[l - 1].begin(), m.levels[l - 1].end());
      const auto labeled = std::count_if(m.levels[l - 1].begin(), m.levels[l - 1].end(), [](uint32_t v) { return v; });
      ids.erase(0);
      out << "  level " << l << ": " << ids.size() << " masks, " << labeled << " labeled pixels\n";
    }
  } else if (magic == "BGC1") {
    const CodeTable c = read_codes(path);
    out << "BGC1 layout " << c.layout.to_string() << ", header: " << codes_header_bytes(c.layout) << " bytes\n";
    out << "codes: " << c.codes.size() << ", payload: " << 4 * c.codes.size() << " bytes\n";
  } else if (magic == "BGO1") {
    const std::string prefix = path.size() > 4 ? path.substr(0, path.size() - 4) : path;
    const Checkpoint ck = read_checkpoint(prefix);
    out << "BGO1 optimizer state: iteration " << ck.iteration << ", " << ck.scene.size() << " gaussians, layout "
        << ck.scene.layout().to_string() << ", " << ck.history.size() << " log rows\n";
  } else {
    throw FormatError("'" + path + "': unknown file type (magic '" + magic + "')");
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coarse-to-fine binary segmentation for 3D Gaussian scenes"};
  app.require_subcommand(1);
  std::optional<int> threads;
  app.add_option("--threads", threads, "Worker cap (default: BINSPLAT_THREADS, else all cores)")
      ->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic scene with ground-truth masks");
  c_synth->add_option("--spec", synth.spec, "Synth spec file (key = value)")->check(CLI::ExistingFile);
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed, "Overrides the seed in the spec file");

  ImportArgs import;
  auto* c_import = app.add_subcommand("import-ply", "Convert a 3D-GS PLY checkpoint to BGS1");
  c_import->add_option("--ply", import.ply)->required()->check(CLI::ExistingFile);
  c_import->add_option("--out", import.out)->required();
  c_import->add_option("--level-dims", import.level_dims, "Bits per level, e.g. 8,12,12");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train binary codes against hierarchical masks");
  auto* o_scene = c_train->add_option("--scene", train.scene)->check(CLI::ExistingFile);
  c_train->add_option("--masks", train.masks, "BGM1 files, one per camera, or a directory")->required();
  c_train->add_option("--cameras", train.cameras)->required()->check(CLI::ExistingFile);
  c_train->add_option("--config", train.config)->check(CLI::ExistingFile);
  c_train->add_option("--out", train.out, "Output directory")->required();
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--iterations", train.iterations)->check(CLI::NonNegativeNumber);
  auto* o_resume = c_train->add_option("--resume", train.resume, "Checkpoint prefix (<prefix>.bgs + <prefix>.bgo)");
  o_scene->excludes(o_resume);

  RenderArgs render;
  auto* c_render = app.add_subcommand("render-class", "Render a level-l class label image");
  c_render->add_option("--scene", render.scene)->required()->check(CLI::ExistingFile);
  c_render->add_option("--codes", render.codes)->required()->check(CLI::ExistingFile);
  c_render->add_option("--cameras", render.cameras)->required()->check(CLI::ExistingFile);
  c_render->add_option("--camera", render.camera, "Camera index (0-based)")->required();
  c_render->add_option("--level", render.level, "Granularity level (1-based)")->required();
  c_render->add_option("--out", render.out)->required();

  ExtractArgs extract;
  auto* c_extract = app.add_subcommand("extract-object", "Write the Gaussians of one class as BGS1");
  c_extract->add_option("--scene", extract.scene)->required()->check(CLI::ExistingFile);
  c_extract->add_option("--codes", extract.codes)->required()->check(CLI::ExistingFile);
  c_extract->add_option("--level", extract.level)->required();
  c_extract->add_option("--class", extract.class_value, "Class id at that level")->required();
  c_extract->add_option("--out", extract.out)->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score predicted label images against truth masks");
  c_eval->add_option("--pred", eval.pred, "Predicted BGM1 files or a directory")->required();
  c_eval->add_option("--truth", eval.truth, "Truth BGM1 files or a directory")->required();
  c_eval->add_option("--level", eval.level, "Level to score (default: all)");
  c_eval->add_option("--codes", eval.codes, "Code table, for the size report")->check(CLI::ExistingFile);
  c_eval->add_option("--csv", eval.csv, "Also write the per-mask table as CSV");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Time feature rendering against class-map rendering");
  c_bench->add_option("--scene", bench.scene)->required()->check(CLI::ExistingFile);
  c_bench->add_option("--cameras", bench.cameras)->required()->check(CLI::ExistingFile);
  c_bench->add_option("--codes", bench.codes)->check(CLI::ExistingFile);
  c_bench->add_option("--views", bench.views)->default_val(1);
  c_bench->add_option("--level", bench.level, "Class level (default: finest)");

  std::string inspect_path;
  auto* c_inspect = app.add_subcommand("inspect", "Print the header and layout of a BGS1/BGM1/BGC1/BGO1 file");
  c_inspect->add_option("file", inspect_path)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (threads) set_num_threads(*threads);
  try {
    if (c_synth->parsed()) return cmd_synth(synth, out);
    if (c_import->parsed()) return cmd_import(import, out);
    if (c_train->parsed()) {
      if (train.scene.empty() == train.resume.empty()) throw UsageError("train needs exactly one of --scene, --resume");
      return cmd_train(train, out, err);
    }
    if (c_render->parsed()) return cmd_render_class(render, out);
    if (c_extract->parsed()) return cmd_extract(extract, out);
    if (c_eval->parsed()) return cmd_eval(eval, out);
    if (c_bench->parsed()) return cmd_bench(bench, out);
    if (c_inspect->parsed()) return cmd_inspect(inspect_path, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const SamplingError& e) {
    err << "sampling error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}

}  // namespace binsplat
