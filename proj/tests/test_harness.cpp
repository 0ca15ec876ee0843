// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vidflow/checkpoint.hpp"
#include "vidflow/error.hpp"
#include "vidflow/harness.hpp"
#include "vidflow/rng.hpp"

using namespace vf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("vidflow_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Tensor normal_1d(std::size_t n, double mean, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = mean + rng.normal();
  return Tensor::from({n}, v);
}

}  // namespace

TEST_CASE("w2 of identical, shifted and permuted sets") {
  const Tensor a = normal_1d(10000, 0.0, 1);
  CHECK(eval_w2(a, a) == 0.0);
  const double w = eval_w2(a, normal_1d(10000, 2.0, 2));
  CHECK(std::abs(w - 2.0) < 0.05);

  std::vector<double> rev(a.values().rbegin(), a.values().rend());
  CHECK(eval_w2(Tensor::from({10000}, rev), normal_1d(10000, 2.0, 2)) == w);

  // A translated copy moves every projection by m . theta.
  Rng rng(3);
  const Tensor x = Tensor::randn({500, 2}, rng);
  std::vector<double> moved(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < 500; ++i) {
    moved[2 * i] += 3.0;
    moved[2 * i + 1] += 4.0;
  }
  const double sliced = eval_w2(x, Tensor::from({500, 2}, moved));
  CHECK(sliced / 5.0 > std::sqrt(0.35));
  CHECK(sliced / 5.0 < std::sqrt(0.65));
  CHECK(eval_w2(x, x) == 0.0);
}

TEST_CASE("w2 with unequal sizes and errors") {
  CHECK(eval_w2(normal_1d(1000, 0, 4), normal_1d(3000, 0, 5)) < 0.1);
  CHECK_THROWS_AS(eval_w2(Tensor::zeros({0, 2}), Tensor::zeros({4, 2})), ContractError);
  CHECK_THROWS_AS(eval_w2(Tensor(), Tensor::zeros({4, 2})), ContractError);
  CHECK_THROWS_AS(eval_w2(Tensor::zeros({4, 3}), Tensor::zeros({4, 2})), ShapeError);
}

TEST_CASE("gsb ratio") {
  CHECK(gsb_ratio(7, 2, 1) == 3.0);
  CHECK(gsb_ratio(0, 5, 0) == 1.0);
  CHECK(gsb_ratio(5, 0, 5) == 1.0);
  CHECK_THROWS_AS(gsb_ratio(3, 0, 0), ContractError);
  CHECK_THROWS_AS(gsb_ratio(-1, 2, 1), ContractError);
}

TEST_CASE("stage presets are progressive and keep batch ratios") {
  const auto& rows = stage_presets();
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].preset == Preset::kVaeAdapt);
  // Duration grows first at fixed resolution, then resolution grows.
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].frames >= rows[i - 1].frames);
    CHECK(rows[i].height * rows[i].width >= rows[i - 1].height * rows[i - 1].width);
    const bool longer = rows[i].frames > rows[i - 1].frames;
    const bool larger = rows[i].height * rows[i].width > rows[i - 1].height * rows[i - 1].width;
    CHECK(longer != larger);
  }
  const std::size_t full_scale[4][2] = {{4096, 0}, {4096, 2048}, {4096, 512}, {2048, 256}};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rows[i].image_batch * 128 == full_scale[i][0]);
    CHECK(rows[i].video_batch * 128 == full_scale[i][1]);
    CHECK((rows[i].frames - 1) % 4 == 0);
    CHECK(rows[i].height % 16 == 0);
    CHECK(rows[i].width % 16 == 0);
  }
  CHECK(preset_config(Preset::kStage3).lr == 5e-5);
  CHECK(preset_config(Preset::kSft).lr == doctest::Approx(0.1 * preset_config(Preset::kStage1).lr).epsilon(1e-15));
  for (const char* n : {"toy2d", "vae-adapt", "stage1", "stage2", "stage3", "sft", "rlhf"}) {
    CHECK(preset_name(parse_preset(n)) == n);
    preset_config(parse_preset(n)).validate();
  }
  CHECK_THROWS_AS(parse_preset("stage4"), ConfigError);
}

TEST_CASE("ini round trip and fail-fast keys") {
  RunConfig c = preset_config(Preset::kStage2);
  c.seed = 99;
  c.model.pe_mode = PeMode::kRope;
  c.adapt.checkpoints = {0, 5, 10};
  const std::string text = config_to_ini(c);
  RunConfig back = preset_config(Preset::kToy2d);
  apply_ini(back, text);
  CHECK(config_to_ini(back) == text);
  CHECK(back.preset == Preset::kStage2);
  CHECK(back.adapt.checkpoints == std::vector<std::size_t>{0, 5, 10});

  RunConfig d = preset_config(Preset::kToy2d);
  apply_ini(d, "[run]\npreset = stage1\nsteps = 7\n[sampler]\ntimesteps = uniform\n");
  CHECK(d.lr == 1e-4);
  CHECK(d.steps == 7);
  CHECK(d.frames == 29);
  CHECK(d.timesteps.kind == TimestepKind::kUniform);

  const RunConfig before = d;
  CHECK_THROWS_AS(apply_ini(d, "[run]\nstepz = 3\n"), ConfigError);
  CHECK_THROWS_AS(apply_ini(d, "[nope]\nsteps = 3\n"), ConfigError);
  CHECK_THROWS_AS(apply_ini(d, "[run]\nsteps = abc\n"), ConfigError);
  CHECK_THROWS_AS(apply_ini(d, "[run]\nsteps = -5\n"), ConfigError);
  CHECK_THROWS_AS(apply_ini(d, "[run]\nlr = nan\n"), ConfigError);
  CHECK_THROWS_AS(apply_ini(d, "[sampler]\nshift = 0.5\n"), ConfigError);
  CHECK_THROWS_AS(apply_ini(d, "[model]\npe_mode = alibi\n"), ConfigError);
  CHECK_THROWS_AS(apply_ini(d, "steps = 3\n"), ConfigError);
  CHECK_THROWS_AS(apply_ini(d, "[run\nsteps = 3\n"), ConfigError);
  CHECK(config_to_ini(d) == config_to_ini(before));

  const auto dir = scratch("ini");
  std::ofstream(dir / "a.ini") << "[run]\npreset = rlhf\nseed = 4\n";
  CHECK(load_config(dir / "a.ini").seed == 4);
  CHECK_THROWS_AS(load_config(dir / "missing.ini"), IoError);
}

TEST_CASE("metrics log is append-only and schema-versioned") {
  const auto dir = scratch("metrics");
  {
    MetricsLog log(dir / "metrics.csv", {"loss", "w2"});
    log.append(1, {0.5, 1.25}, 0.01);
    log.append(5, {0.25, 1.0}, 0.02);
    CHECK_THROWS_AS(log.append(5, {0.1, 0.1}), ContractError);
    CHECK_THROWS_AS(log.append(6, {0.1}), ContractError);
  }
  CHECK(slurp(dir / "metrics.csv") == "# vidflow-metrics v1\nstep,loss,w2\n1,0.5,1.25\n5,0.25,1\n");
  MetricsLog again(dir / "metrics.csv", {"loss", "w2"});
  CHECK(again.last_step() == 5);
  CHECK_THROWS_AS(again.append(3, {0, 0}), ContractError);
  again.append(6, {0.125, 0.5});
  CHECK(slurp(dir / "metrics.csv").find("6,0.125,0.5\n") != std::string::npos);
  CHECK_THROWS_AS(MetricsLog(dir / "metrics.csv", {"loss"}), ConfigError);
  CHECK(slurp(dir / "timing.csv").rfind("file,step,wall_seconds\nmetrics.csv,1,", 0) == 0);
}

TEST_CASE("toy data is balanced by construction") {
  Rng rng(1);
  const ToyConfig tc;
  const Tensor x = toy_mixture(1000, tc, rng);
  std::size_t right = 0;
  for (std::size_t i = 0; i < 1000; ++i) right += x[2 * i] > 0;
  CHECK(right == 500);
  const Tensor z = paired_noise(10, 3, rng);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 10; ++i) s += z[i * 3 + j];
    CHECK(s == 0.0);
  }
  CHECK_THROWS_AS(toy_mixture(3, tc, rng), ContractError);
}

TEST_CASE("short toy run lowers the loss and is reproducible") {
  RunConfig c = preset_config(Preset::kToy2d);
  c.steps = 150;
  c.eval_every = 50;
  c.toy.samples = 400;
  c.toy.batch = 64;
  const auto dir = scratch("toy");
  MetricsLog a(dir / "a" / "metrics.csv", {"loss", "w2"});
  MetricsLog b(dir / "b" / "metrics.csv", {"loss", "w2"});
  const auto ra = run_toy_flow(c, &a);
  const auto rb = run_toy_flow(c, &b);
  CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
  CHECK(ra.final_w2 == rb.final_w2);
  CHECK(ra.final_w2 < ra.init_w2);
  CHECK(a.last_step() == 150);
}

TEST_CASE("vae adaptation checkpoint contract and a short run") {
  RunConfig c = preset_config(Preset::kVaeAdapt);
  const auto dir = scratch("adapt");
  CHECK_THROWS_AS(run_vae_adaptation(c, dir / "absent.ckpt"), ConfigError);
  Rng rng(1);
  save_checkpoint(dir / "wrong.ckpt", VideoDit(preset_config(Preset::kStage1).model, rng));
  CHECK_THROWS_AS(run_vae_adaptation(c, dir / "wrong.ckpt"), ConfigError);

  c.adapt.pretrain_steps = 400;
  c.adapt.checkpoints = {0, 100};
  c.adapt.eval_samples = 200;
  pretrain_adaptation_base(c, dir / "base.ckpt");
  MetricsLog log(dir / "metrics.csv", {"w2_swapped", "w2_control"});
  const auto r = run_vae_adaptation(c, dir / "base.ckpt", &log);
  REQUIRE(r.swapped.size() == 2);
  REQUIRE(r.control.size() == 2);
  // Step 0 of the control run is the unchanged model.
  CHECK(r.at(0, true) == r.pre_swap);
  CHECK(r.at(0) > 2.0 * r.pre_swap);
  CHECK(r.at(100) < r.at(0));
  CHECK_THROWS_AS(r.at(7), ContractError);
}

TEST_CASE("video presets train deterministically") {
  RunConfig c = preset_config(Preset::kStage1);
  c.steps = 2;
  c.eval_every = 1;
  c.pool = 4;
  c.image_batch = 2;
  c.video_batch = 1;
  const auto a = run_video_train(c);
  const auto b = run_video_train(c);
  CHECK(std::isfinite(a.last_loss));
  CHECK(a.last_loss == b.last_loss);
  CHECK(encode_checkpoint(*a.model) == encode_checkpoint(*b.model));

  RunConfig sft = preset_config(Preset::kSft);
  CHECK_THROWS_AS(run_video_train(sft), ConfigError);
}

TEST_CASE("toy rlhf run records rewards") {
  RunConfig c = preset_config(Preset::kRlhf);
  c.steps = 10;
  c.eval_every = 5;
  const auto r = run_rlhf(c);
  CHECK(r.rewards.size() == 10);
  CHECK(r.probe.size() == 2);
  c.init = "/nonexistent/model.ckpt";
  CHECK_THROWS_AS(run_rlhf(c), ConfigError);
}

TEST_CASE("sample files round trip") {
  const auto dir = scratch("samples");
  Rng rng(2);
  const Tensor x = Tensor::randn({7, 2, 3}, rng);
  write_samples_csv(dir / "s.csv", x);
  const Tensor y = read_samples_csv(dir / "s.csv");
  CHECK(y.shape() == x.shape());
  CHECK(vf::eval_w2(reshape(x, {7, 6}), reshape(y, {7, 6})) == 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x[i] == y[i]);
  std::ofstream(dir / "bad.csv") << "1,2\n3\n";
  CHECK_THROWS_AS(read_samples_csv(dir / "bad.csv"), IoError);
  std::ofstream(dir / "nan.csv") << "1,x\n";
  CHECK_THROWS_AS(read_samples_csv(dir / "nan.csv"), IoError);
}

TEST_CASE("run directory honours the environment") {
  ::setenv("VIDFLOW_RUN_ROOT", "/tmp/vf_runs", 1);
  CHECK(run_directory("x") == fs::path("/tmp/vf_runs/x"));
  ::unsetenv("VIDFLOW_RUN_ROOT");
  CHECK(run_directory("x") == fs::path("runs/x"));
}
