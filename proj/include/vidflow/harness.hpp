// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vidflow/dit.hpp"
#include "vidflow/flowmatch.hpp"
#include "vidflow/nn.hpp"
#include "vidflow/rlhf.hpp"
#include "vidflow/tensor.hpp"

namespace vf {

// ---- evaluation utilities

/// 2-Wasserstein distance between two sample sets given as [n, d] (or [n]).
/// Exact sorted coupling for d = 1, sliced over 64 seeded unit directions
/// otherwise. Set sizes may differ; quantiles are matched on a common grid.
double eval_w2(const Tensor& a, const Tensor& b, std::uint64_t seed = 0, std::size_t directions = 64);

/// (good + same) / (bad + same).
double gsb_ratio(double good, double same, double bad);

// ---- presets and configuration

enum class Preset { kToy2d, kVaeAdapt, kStage1, kStage2, kStage3, kSft, kRlhf };

std::string preset_name(Preset preset);
Preset parse_preset(std::string_view name);

/// Toy-scale row of the progressive training table. Batches keep the
/// image:video ratio of the full-scale table at 1/128 of its size.
struct StagePreset {
  Preset preset;
  std::size_t frames, height, width;
  std::size_t image_batch, video_batch;
  double lr;
  std::size_t reference_steps;  // full-scale step count, metadata only
};

/// vae-adapt, stage1, stage2, stage3 in training order.
const std::vector<StagePreset>& stage_presets();

struct ToyConfig {
  double separation = 3.0;  // modes at (+-separation, 0)
  double spread = 0.7;
  std::size_t samples = 4000;
  std::size_t hidden = 64;
  std::size_t depth = 3;
  std::size_t batch = 512;
  double ema = 0.99;
};

struct AdaptConfig {
  std::size_t pretrain_steps = 1500;
  std::size_t batch = 64;
  std::size_t hidden = 64;
  std::size_t eval_samples = 1000;
  std::size_t eval_steps = 20;
  std::vector<std::size_t> checkpoints{0, 200, 800, 1600};
  bool control = true;
};

struct RunConfig {
  Preset preset = Preset::kToy2d;
  std::uint64_t seed = 0;
  std::size_t steps = 2000;
  double lr = 2e-3;
  std::size_t eval_every = 500;

  // video presets
  std::size_t frames = 1, height = 16, width = 16;
  std::size_t image_batch = 32, video_batch = 0;
  std::size_t pool = 32;  // distinct training clips per shape
  ModelConfig model;
  double sft_anchor = 0.1;

  TimestepSampler timesteps;
  std::size_t sample_steps = 50;
  double sample_shift = 17.0;
  double cfg_scale = 6.0;

  ToyConfig toy;
  AdaptConfig adapt;
  RlhfConfig rlhf;

  std::string init;  // checkpoint to start from
  std::string corpus;

  void validate() const;
};

RunConfig preset_config(Preset preset);

/// Applies INI overrides. Sections: run, model, sampler, toy, adapt, rlhf,
/// data. Unknown sections or keys and untyped values raise ConfigError.
void apply_ini(RunConfig& config, const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Every field as INI; apply_ini(preset_config(p), config_to_ini(c)) == c.
std::string config_to_ini(const RunConfig& config);

// ---- metrics

inline constexpr int kMetricsSchemaVersion = 1;

/// Append-only CSV: a "# vidflow-metrics v1" line, a header, then rows with
/// strictly increasing step. Reopening an existing file checks the header
/// and continues after its last step. Wall time goes to a sibling
/// timing.csv so metric files stay bit-reproducible.
class MetricsLog {
 public:
  MetricsLog(std::filesystem::path path, std::vector<std::string> columns);

  void append(std::size_t step, const std::vector<double>& values, double wall_seconds = 0.0);
  const std::filesystem::path& path() const { return path_; }
  long last_step() const { return last_step_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path timing_path_;
  std::vector<std::string> columns_;
  long last_step_ = -1;
};

std::string format_metric(double v);

// ---- workflows

/// Two-Gaussian 2D data; rows come in (x, -x) pairs so both modes hold
/// exactly half the points. Requires an even count.
Tensor toy_mixture(std::size_t n, const ToyConfig& config, Rng& rng);
/// Standard normal rows in (z, -z) pairs.
Tensor paired_noise(std::size_t n, std::size_t dim, Rng& rng);

struct ToyResult {
  std::unique_ptr<MlpVelocity> model;
  double init_w2 = 0;
  double final_w2 = 0;     // N = sample_steps at sample_shift
  double few_step_s1 = 0;  // N = 10, shift 1
  double few_step_s17 = 0; // N = 10, shift 17
  double first_loss = 0, last_loss = 0;
};

/// Trains the MLP velocity model on the toy mixture with an EMA of the
/// weights; evaluates the EMA model.
ToyResult run_toy_flow(const RunConfig& config, MetricsLog* log = nullptr);
double toy_sample_w2(VelocityModel& model, const RunConfig& config, std::size_t steps, double shift);

struct VideoTrainResult {
  std::unique_ptr<VideoDit> model;
  double first_loss = 0, last_loss = 0;
};

/// Joint image/video flow-matching training of the DiT at the preset shape
/// on synthetic clips; sft adds the anchor-to-reference penalty.
VideoTrainResult run_video_train(const RunConfig& config, MetricsLog* log = nullptr);

/// 16x16 images of 2x2 blocks of flat colour drawn around two palette
/// colours, values in [0, 1], [n, 768] with each row a [3, 16, 16] frame.
Tensor block_images(std::size_t n, Rng& rng);

struct AdaptPoint {
  std::size_t step;
  double w2;
};

struct AdaptResult {
  double pre_swap = 0;
  std::vector<AdaptPoint> swapped;
  std::vector<AdaptPoint> control;

  double at(std::size_t step, bool control_run = false) const;
};

/// Trains the latent MLP on encoder A latents and saves it.
void pretrain_adaptation_base(const RunConfig& config, const std::filesystem::path& checkpoint);
/// Loads the encoder-A model, swaps to encoder B and keeps training; the
/// metric is W2 between decoded generations and real images. Missing
/// checkpoint raises ConfigError.
AdaptResult run_vae_adaptation(const RunConfig& config, const std::filesystem::path& checkpoint,
                               MetricsLog* log = nullptr);

struct RlhfRunResult {
  std::vector<double> rewards;  // target reward before each update
  std::vector<double> probe;    // frozen random scorer, same samples
  double first_mean = 0, last_mean = 0;
};

/// Reward ascent on the toy MLP (target-mean reward) unless `init` names a
/// DiT checkpoint, in which case the first-frame smoothness reward is used
/// on short video latents.
RlhfRunResult run_rlhf(const RunConfig& config, MetricsLog* log = nullptr);

/// Samples from a checkpoint; returns [n, ...sample shape].
Tensor sample_checkpoint(const std::filesystem::path& checkpoint, const RunConfig& config, std::size_t n,
                         const Shape& sample_shape);

void write_samples_csv(const std::filesystem::path& path, const Tensor& samples);
Tensor read_samples_csv(const std::filesystem::path& path);

/// Runs the directory of the named run: $VIDFLOW_RUN_ROOT/<name>, or
/// runs/<name> when the variable is unset.
std::filesystem::path run_directory(const std::string& name);

}  // namespace vf
