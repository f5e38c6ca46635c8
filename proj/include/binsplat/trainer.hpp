#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "binsplat/contrastive.hpp"
#include "binsplat/masks.hpp"
#include "binsplat/rng.hpp"
#include "binsplat/sampler.hpp"
#include "binsplat/scene.hpp"

namespace binsplat {

struct TrainConfig {
  int iterations = 2000;
  double lr_features = 0.005;
  double lr_opacity = 0.001;
  bool opacity_finetune = true;
  bool virtual_negative = true;
  LossWeights weights;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;  // 0 = never
  std::string checkpoint_prefix;
  uint64_t seed = 0;
  SamplerConfig sampler;
  // Layout for scenes created from PLY; when set, must match the scene.
  std::optional<LevelLayout> layout;
  // Stddev of the seeded N(0, s^2) feature-logit initialization applied when
  // training starts from an all-zero feature table.
  double feature_init_std = 1.0;

  /// 2k random + 8k mask-balanced pixels per iteration.
  static TrainConfig full_profile();
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys throw
/// FormatError. `profile = full` switches the base values before later keys.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string format_config(const TrainConfig& config);

struct AdamState {
  uint64_t step = 0;
  std::vector<double> m_features, v_features;
  std::vector<double> m_opacity, v_opacity;
};

struct IterationLog {
  int iteration = 0;
  int view = -1;  // -1 when the iteration was skipped
  std::size_t batch = 0;
  LossBreakdown loss;
};

struct Checkpoint {
  int iteration = 0;  // iterations completed
  GaussianScene scene;
  AdamState adam;
  uint64_t rng_counter = 0;
  std::vector<IterationLog> history;
  std::string config_text;  // format_config of the run that wrote it
};

/// Writes `<prefix>.bgs` (BGS1 scene) and `<prefix>.bgo` (optimizer state,
/// full-precision trainable parameters, history).
void write_checkpoint(const std::string& prefix, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::string& prefix);

struct TrainResult {
  GaussianScene scene;
  CodeTable codes;
  std::vector<IterationLog> log;
  std::size_t skipped_iterations = 0;
  std::vector<std::string> warnings;
  Checkpoint state;
};

/// Owns one optimization run. Geometry and color are never modified.
class Trainer {
 public:
  Trainer(GaussianScene scene, const std::vector<Camera>& cameras, const MaskPyramid& pyramid, TrainConfig config);

  /// Continues from a checkpoint. Throws ValidationError with a diff report when
  /// the layout or parameter shapes differ; other config differences only add
  /// warnings.
  static Trainer resume(const Checkpoint& checkpoint, const std::vector<Camera>& cameras, const MaskPyramid& pyramid,
                        TrainConfig config);

  void step();
  // Runs until `config.iterations` iterations are done.
  void run();

  int iteration() const { return iteration_; }
  const GaussianScene& scene() const { return scene_; }
  const std::vector<IterationLog>& log() const { return history_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::size_t skipped_iterations() const { return skipped_; }
  Checkpoint checkpoint() const;
  TrainResult result() const;

 private:
  GaussianScene scene_;
  const std::vector<Camera>* cameras_;
  const MaskPyramid* pyramid_;
  TrainConfig config_;
  IndivisibleSet indivisible_;
  AdamState adam_;
  int iteration_ = 0;
  uint64_t rng_counter_ = 0;
  std::vector<IterationLog> history_;
  std::vector<std::string> warnings_;
  std::size_t skipped_ = 0;
  std::vector<bool> view_empty_;
};

TrainResult train(GaussianScene scene, const std::vector<Camera>& cameras, const MaskPyramid& pyramid,
                  const TrainConfig& config);
TrainResult resume(const Checkpoint& checkpoint, const std::vector<Camera>& cameras, const MaskPyramid& pyramid,
                   const TrainConfig& config);

/// CSV with one row per iteration. No timings, so identical runs produce
/// identical bytes.
std::string format_log_csv(const std::vector<IterationLog>& log, const LevelLayout& layout, uint64_t seed);

}  // namespace binsplat
