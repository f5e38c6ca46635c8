#include "binsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "binsplat/binary_codec.hpp"
#include "binsplat/errors.hpp"
#include "binsplat/io.hpp"
#include "binsplat/rasterizer.hpp"
#include "byte_io.hpp"

namespace binsplat {

TrainConfig TrainConfig::full_profile() {
  TrainConfig c;
  c.sampler = SamplerConfig::full_profile();
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw FormatError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || used == 0) throw FormatError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  uint64_t out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || used == 0)
    throw FormatError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (key == "profile") {
      if (v == "full") {
        const TrainConfig keep = c;
        c = TrainConfig::full_profile();
        c.seed = keep.seed;
      } else if (v != "desk") {
        throw FormatError("config key 'profile': expected desk or full, got '" + v + "'");
      }
    } else if (key == "iterations") {
      c.iterations = static_cast<int>(parse_uint(key, v));
    } else if (key == "lr_features") {
      c.lr_features = parse_double(key, v);
    } else if (key == "lr_opacity") {
      c.lr_opacity = parse_double(key, v);
    } else if (key == "opacity_finetune") {
      c.opacity_finetune = parse_bool(key, v);
    } else if (key == "virtual_negative") {
      c.virtual_negative = parse_bool(key, v);
    } else if (key == "mask_balanced") {
      c.sampler.mask_balanced = parse_bool(key, v);
    } else if (key == "lambda_reg") {
      c.weights.reg = parse_double(key, v);
    } else if (key == "lambda_guiding") {
      c.weights.guiding = parse_double(key, v);
    } else if (key == "lambda_con") {
      c.weights.con = parse_double(key, v);
    } else if (key == "adam_beta1") {
      c.adam_beta1 = parse_double(key, v);
    } else if (key == "adam_beta2") {
      c.adam_beta2 = parse_double(key, v);
    } else if (key == "adam_eps") {
      c.adam_eps = parse_double(key, v);
    } else if (key == "checkpoint_every") {
      c.checkpoint_every = static_cast<int>(parse_uint(key, v));
    } else if (key == "checkpoint_prefix") {
      c.checkpoint_prefix = v;
    } else if (key == "seed") {
      c.seed = parse_uint(key, v);
    } else if (key == "random_pixels") {
      c.sampler.random_pixels = static_cast<uint32_t>(parse_uint(key, v));
    } else if (key == "balanced_pixels") {
      c.sampler.balanced_pixels = static_cast<uint32_t>(parse_uint(key, v));
    } else if (key == "masks_per_iter") {
      c.sampler.masks_per_iter = static_cast<uint32_t>(parse_uint(key, v));
    } else if (key == "pair_cap") {
      c.sampler.pair_cap = parse_uint(key, v);
    } else if (key == "level_dims") {
      try {
        c.layout = LevelLayout::parse(v);
      } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("config key 'level_dims': ") + e.what());
      }
    } else if (key == "feature_init_std") {
      c.feature_init_std = parse_double(key, v);
    } else {
      throw FormatError("unknown config key '" + key + "' on line " + std::to_string(lineno));
    }
  }
  if (c.lr_features < 0.0 || c.lr_opacity < 0.0) throw FormatError("learning rates must be non-negative");
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "iterations = " << c.iterations << "\n";
  out << "lr_features = " << fmt_double(c.lr_features) << "\n";
  out << "lr_opacity = " << fmt_double(c.lr_opacity) << "\n";
  out << "opacity_finetune = " << (c.opacity_finetune ? "true" : "false") << "\n";
  out << "virtual_negative = " << (c.virtual_negative ? "true" : "false") << "\n";
  out << "mask_balanced = " << (c.sampler.mask_balanced ? "true" : "false") << "\n";
  out << "lambda_reg = " << fmt_double(c.weights.reg) << "\n";
  out << "lambda_guiding = " << fmt_double(c.weights.guiding) << "\n";
  out << "lambda_con = " << fmt_double(c.weights.con) << "\n";
  out << "adam_beta1 = " << fmt_double(c.adam_beta1) << "\n";
  out << "adam_beta2 = " << fmt_double(c.adam_beta2) << "\n";
  out << "adam_eps = " << fmt_double(c.adam_eps) << "\n";
  out << "checkpoint_every = " << c.checkpoint_every << "\n";
  if (!c.checkpoint_prefix.empty()) out << "checkpoint_prefix = " << c.checkpoint_prefix << "\n";
  out << "seed = " << c.seed << "\n";
  out << "random_pixels = " << c.sampler.random_pixels << "\n";
  out << "balanced_pixels = " << c.sampler.balanced_pixels << "\n";
  out << "masks_per_iter = " << c.sampler.masks_per_iter << "\n";
  out << "pair_cap = " << c.sampler.pair_cap << "\n";
  if (c.layout) out << "level_dims = " << c.layout->to_string() << "\n";
  out << "feature_init_std = " << fmt_double(c.feature_init_std) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------

Trainer::Trainer(GaussianScene scene, const std::vector<Camera>& cameras, const MaskPyramid& pyramid,
                 TrainConfig config)
    : scene_(std::move(scene)), cameras_(&cameras), pyramid_(&pyramid), config_(std::move(config)) {
  if (scene_.empty()) throw ValidationError("cannot train an empty scene");
  if (cameras.size() != pyramid.view_count())
    throw ValidationError("camera count (" + std::to_string(cameras.size()) + ") != mask view count (" +
                          std::to_string(pyramid.view_count()) + ")");
  if (pyramid.levels() != scene_.layout().levels())
    throw ValidationError("masks have " + std::to_string(pyramid.levels()) + " levels, scene layout has " +
                          std::to_string(scene_.layout().levels()));
  if (config_.layout && *config_.layout != scene_.layout())
    throw ValidationError("config layout " + config_.layout->to_string() + " != scene layout " +
                          scene_.layout().to_string());
  if (config_.lr_features < 0.0 || config_.lr_opacity < 0.0)
    throw ValidationError("learning rates must be non-negative");
  for (std::size_t v = 0; v < cameras.size(); ++v) {
    cameras[v].validate();
    const MaskImage& m = pyramid.view(v).labels;
    if (static_cast<uint32_t>(cameras[v].width) != m.width || static_cast<uint32_t>(cameras[v].height) != m.height)
      throw ValidationError("view " + std::to_string(v) + ": camera image size != mask size");
  }
  view_empty_.resize(cameras.size());
  std::size_t empty = 0;
  for (std::size_t v = 0; v < cameras.size(); ++v) {
    view_empty_[v] = pyramid.view(v).labeled_pixels.empty();
    if (view_empty_[v]) {
      ++empty;
      warnings_.push_back("view " + std::to_string(v) + " has no labeled pixels and will be skipped");
    }
  }
  if (empty == cameras.size()) throw ValidationError("no view has labeled pixels");

  indivisible_ = detect_indivisible(pyramid);
  const std::size_t n = scene_.size();
  adam_.m_features.assign(n * scene_.dims(), 0.0);
  adam_.v_features.assign(n * scene_.dims(), 0.0);
  adam_.m_opacity.assign(n, 0.0);
  adam_.v_opacity.assign(n, 0.0);
}

namespace {

void adam_update(std::span<double> params, std::span<const double> grads, std::vector<double>& m,
                 std::vector<double>& v, double lr, const TrainConfig& c, uint64_t step) {
  const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = c.adam_beta1 * m[i] + (1.0 - c.adam_beta1) * g;
    v[i] = c.adam_beta2 * v[i] + (1.0 - c.adam_beta2) * g * g;
    params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.adam_eps);
  }
}

std::string describe(const LossBreakdown& loss) {
  std::ostringstream out;
  out << "total=" << loss.total << " reg=" << loss.regularizer;
  for (std::size_t l = 0; l < loss.levels.size(); ++l)
    out << " L" << l + 1 << "(pos=" << loss.levels[l].positive << " neg=" << loss.levels[l].negative
        << " vn=" << loss.levels[l].virtual_negative << ")";
  return out.str();
}

}  // namespace

void Trainer::step() {
  const int it = iteration_;
  if (it == 0) {
    // An all-zero start is a symmetric fixed point of the contrastive terms.
    const auto logits = scene_.feature_logits();
    if (config_.feature_init_std > 0.0 && std::all_of(logits.begin(), logits.end(), [](double v) { return v == 0.0; }))
      init_feature_logits(scene_, config_.feature_init_std, config_.seed);
  }
  CounterRng rng(config_.seed, static_cast<uint64_t>(it) + 1);
  const std::size_t view = rng.uniform_below(static_cast<uint32_t>(cameras_->size()));
  IterationLog entry;
  entry.iteration = it;
  if (view_empty_[view]) {
    ++skipped_;
    history_.push_back(entry);
    ++iteration_;
    rng_counter_ = static_cast<uint64_t>(iteration_);
    return;
  }

  const std::vector<PixelCoord> pixels = sample_batch(*pyramid_, view, config_.sampler, rng);
  const SplatList splats = project(scene_, (*cameras_)[view]);
  RenderedFeatureMap map = composite_forward(splats, pixels);
  std::vector<std::size_t> kept;
  const PixelBatch batch = make_batch(map, *pyramid_, view, scene_.layout(), &kept);
  std::vector<double> grad(batch.size() * batch.dims(), 0.0);
  entry.loss = total_loss(batch, indivisible_, config_.weights, grad, config_.virtual_negative);
  entry.view = static_cast<int>(view);
  entry.batch = batch.size();
  if (!std::isfinite(entry.loss.total))
    throw NumericError("non-finite loss at iteration " + std::to_string(it) + ": " + describe(entry.loss));

  const int d = batch.dims();
  for (std::size_t k = 0; k < kept.size(); ++k)
    std::copy(grad.begin() + k * d, grad.begin() + (k + 1) * d, map.grad.begin() + kept[k] * d);
  const SplatGradients grads = composite_backward(splats, map);

  ++adam_.step;
  adam_update(scene_.feature_logits(), grads.d_feature_logits, adam_.m_features, adam_.v_features,
              config_.lr_features, config_, adam_.step);
  if (config_.opacity_finetune && config_.lr_opacity > 0.0) {
    std::vector<double> opacity(scene_.size());
    for (std::size_t i = 0; i < scene_.size(); ++i) opacity[i] = scene_[i].opacity_logit;
    adam_update(opacity, grads.d_opacity_logit, adam_.m_opacity, adam_.v_opacity, config_.lr_opacity, config_,
                adam_.step);
    for (std::size_t i = 0; i < scene_.size(); ++i) scene_[i].opacity_logit = opacity[i];
  }
  for (double v : scene_.feature_logits())
    if (!std::isfinite(v)) throw NumericError("non-finite feature logit after iteration " + std::to_string(it));

  history_.push_back(std::move(entry));
  ++iteration_;
  rng_counter_ = static_cast<uint64_t>(iteration_);
  if (config_.checkpoint_every > 0 && !config_.checkpoint_prefix.empty() &&
      iteration_ % config_.checkpoint_every == 0)
    write_checkpoint(config_.checkpoint_prefix, checkpoint());
}

void Trainer::run() {
  std::vector<Gaussian> before = scene_.gaussians();
  while (iteration_ < config_.iterations) step();
  for (std::size_t i = 0; i < scene_.size(); ++i) {
    const Gaussian& a = before[i];
    const Gaussian& b = scene_[i];
    const bool same = std::memcmp(a.position.data(), b.position.data(), sizeof(double) * 3) == 0 &&
                      std::memcmp(a.log_scale.data(), b.log_scale.data(), sizeof(double) * 3) == 0 &&
                      std::memcmp(a.rotation.coeffs().data(), b.rotation.coeffs().data(), sizeof(double) * 4) == 0 &&
                      std::memcmp(a.color.data(), b.color.data(), sizeof(double) * 3) == 0;
    if (!same) throw std::logic_error("training modified frozen geometry of Gaussian " + std::to_string(i));
  }
}

Checkpoint Trainer::checkpoint() const {
  return Checkpoint{iteration_, scene_, adam_, rng_counter_, history_, format_config(config_)};
}

TrainResult Trainer::result() const {
  TrainResult r;
  r.scene = scene_;
  r.codes = extract_codes(scene_);
  r.log = history_;
  r.skipped_iterations = skipped_;
  r.warnings = warnings_;
  r.state = checkpoint();
  return r;
}

Trainer Trainer::resume(const Checkpoint& checkpoint, const std::vector<Camera>& cameras, const MaskPyramid& pyramid,
                        TrainConfig config) {
  std::vector<std::string> warnings;
  std::vector<std::string> blocking;
  const std::size_t n = checkpoint.scene.size();
  const std::size_t nd = n * static_cast<std::size_t>(checkpoint.scene.dims());
  if (checkpoint.adam.m_features.size() != nd || checkpoint.adam.v_features.size() != nd ||
      checkpoint.adam.m_opacity.size() != n || checkpoint.adam.v_opacity.size() != n)
    blocking.push_back("optimizer state shape does not match the checkpoint scene");
  if (config.layout && *config.layout != checkpoint.scene.layout())
    blocking.push_back("layout: checkpoint " + checkpoint.scene.layout().to_string() + " vs config " +
                       config.layout->to_string());
  if (pyramid.levels() != checkpoint.scene.layout().levels())
    blocking.push_back("levels: checkpoint layout " + checkpoint.scene.layout().to_string() + " vs masks with " +
                       std::to_string(pyramid.levels()) + " levels");

  if (!checkpoint.config_text.empty()) {
    auto to_map = [](const std::string& text) {
      std::map<std::string, std::string> kv;
      std::istringstream in(text);
      std::string line;
      while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
      }
      return kv;
    };
    const auto before = to_map(checkpoint.config_text);
    const auto after = to_map(format_config(config));
    std::set<std::string> keys;
    for (const auto& [k, v] : before) keys.insert(k);
    for (const auto& [k, v] : after) keys.insert(k);
    for (const std::string& k : keys) {
      if (k == "iterations" || k == "checkpoint_every" || k == "checkpoint_prefix") continue;
      const auto b = before.find(k);
      const auto a = after.find(k);
      const std::string old_v = b == before.end() ? "<unset>" : b->second;
      const std::string new_v = a == after.end() ? "<unset>" : a->second;
      if (old_v == new_v) continue;
      const std::string line = k + ": " + old_v + " -> " + new_v;
      if (k == "level_dims")
        blocking.push_back(line);
      else
        warnings.push_back("resume: config changed, trajectory will diverge (" + line + ")");
    }
  }
  if (!blocking.empty()) {
    std::string report = "checkpoint is incompatible with this run:";
    for (const auto& b : blocking) report += "\n  " + b;
    throw ValidationError(report);
  }

  Trainer t(checkpoint.scene, cameras, pyramid, std::move(config));
  t.adam_ = checkpoint.adam;
  t.iteration_ = checkpoint.iteration;
  t.rng_counter_ = checkpoint.rng_counter;
  t.history_ = checkpoint.history;
  for (const auto& entry : t.history_)
    if (entry.view < 0) ++t.skipped_;
  t.warnings_.insert(t.warnings_.end(), warnings.begin(), warnings.end());
  return t;
}

TrainResult train(GaussianScene scene, const std::vector<Camera>& cameras, const MaskPyramid& pyramid,
                  const TrainConfig& config) {
  Trainer t(std::move(scene), cameras, pyramid, config);
  t.run();
  return t.result();
}

TrainResult resume(const Checkpoint& checkpoint, const std::vector<Camera>& cameras, const MaskPyramid& pyramid,
                   const TrainConfig& config) {
  Trainer t = Trainer::resume(checkpoint, cameras, pyramid, config);
  t.run();
  return t.result();
}

// ---------------------------------------------------------------------------

void write_checkpoint(const std::string& prefix, const Checkpoint& ck) {
  write_scene(prefix + ".bgs", ck.scene);
  detail::Writer w;
  w.bytes("BGO1", 4);
  const std::size_t n = ck.scene.size();
  const int d = ck.scene.dims();
  w.u32(static_cast<uint32_t>(ck.iteration));
  w.u64(ck.adam.step);
  w.u64(ck.rng_counter);
  w.u32(static_cast<uint32_t>(n));
  w.u32(static_cast<uint32_t>(d));
  for (double v : ck.scene.feature_logits()) w.f64(v);
  for (std::size_t i = 0; i < n; ++i) w.f64(ck.scene[i].opacity_logit);
  for (const auto* arr : {&ck.adam.m_features, &ck.adam.v_features, &ck.adam.m_opacity, &ck.adam.v_opacity}) {
    w.u32(static_cast<uint32_t>(arr->size()));
    for (double v : *arr) w.f64(v);
  }
  w.u32(static_cast<uint32_t>(ck.history.size()));
  for (const IterationLog& e : ck.history) {
    w.u32(static_cast<uint32_t>(e.iteration));
    w.u32(static_cast<uint32_t>(e.view));
    w.u64(e.batch);
    w.f64(e.loss.total);
    w.f64(e.loss.regularizer);
    w.u32(static_cast<uint32_t>(e.loss.levels.size()));
    for (const LevelTerms& t : e.loss.levels) {
      w.f64(t.positive);
      w.f64(t.negative);
      w.f64(t.virtual_negative);
      w.u64(t.positive_pairs);
      w.u64(t.negative_pairs);
      w.u64(t.skipped_pairs);
      w.u64(t.excluded_pairs);
      w.u64(t.virtual_negative_pixels);
    }
  }
  w.u32(static_cast<uint32_t>(ck.config_text.size()));
  w.bytes(ck.config_text.data(), ck.config_text.size());
  w.save(prefix + ".bgo");
}

Checkpoint read_checkpoint(const std::string& prefix) {
  Checkpoint ck;
  ck.scene = read_scene(prefix + ".bgs");
  const std::string path = prefix + ".bgo";
  detail::Reader r(detail::slurp(path), path);
  r.expect_magic("BGO1");
  ck.iteration = static_cast<int>(r.u32());
  ck.adam.step = r.u64();
  ck.rng_counter = r.u64();
  const uint32_t n = r.u32();
  const uint32_t d = r.u32();
  if (n != ck.scene.size() || static_cast<int>(d) != ck.scene.dims())
    throw FormatError("'" + path + "': optimizer state does not match '" + prefix + ".bgs'");
  for (double& v : ck.scene.feature_logits()) v = r.f64();
  for (std::size_t i = 0; i < n; ++i) ck.scene[i].opacity_logit = r.f64();
  for (auto* arr : {&ck.adam.m_features, &ck.adam.v_features, &ck.adam.m_opacity, &ck.adam.v_opacity}) {
    arr->resize(r.u32());
    for (double& v : *arr) v = r.f64();
  }
  ck.history.resize(r.u32());
  for (IterationLog& e : ck.history) {
    e.iteration = static_cast<int>(r.u32());
    e.view = static_cast<int>(r.u32());
    e.batch = r.u64();
    e.loss.total = r.f64();
    e.loss.regularizer = r.f64();
    e.loss.levels.resize(r.u32());
    for (LevelTerms& t : e.loss.levels) {
      t.positive = r.f64();
      t.negative = r.f64();
      t.virtual_negative = r.f64();
      t.positive_pairs = r.u64();
      t.negative_pairs = r.u64();
      t.skipped_pairs = r.u64();
      t.excluded_pairs = r.u64();
      t.virtual_negative_pixels = r.u64();
    }
  }
  const uint32_t len = r.u32();
  r.need(len);
  for (uint32_t i = 0; i < len; ++i) ck.config_text.push_back(static_cast<char>(r.u8()));
  r.expect_end();
  return ck;
}

std::string format_log_csv(const std::vector<IterationLog>& log, const LevelLayout& layout, uint64_t seed) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "# seed=" << seed << " layout=" << layout.to_string() << "\n";
  out << "iteration,view,batch,total,regularizer";
  for (int l = 1; l <= layout.levels(); ++l)
    out << ",l" << l << "_positive,l" << l << "_negative,l" << l << "_virtual_negative,l" << l << "_skipped_pairs";
  out << "\n";
  for (const IterationLog& e : log) {
    out << e.iteration << "," << e.view << "," << e.batch << "," << e.loss.total << "," << e.loss.regularizer;
    for (int l = 0; l < layout.levels(); ++l) {
      if (static_cast<std::size_t>(l) < e.loss.levels.size()) {
        const LevelTerms& t = e.loss.levels[l];
        out << "," << t.positive << "," << t.negative << "," << t.virtual_negative << "," << t.skipped_pairs;
      } else {
        out << ",0,0,0,0";
      }
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace binsplat
