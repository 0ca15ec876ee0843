// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver over the C API.

#include <CLI11.hpp>
#include <atomic>
#include <charconv>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "vidflow.h"

namespace {

int exit_code(vf_status s) {
  switch (s) {
    case VF_OK:
      return 0;
    case VF_ERR_USAGE:
      return 2;
    case VF_ERR_CONFIG:
      return 3;
    case VF_ERR_IO:
      return 4;
    case VF_ERR_PROTOCOL:
      return 5;
    default:
      return 1;
  }
}

struct Failure {
  vf_status status;
};

void check(vf_status s) {
  if (s != VF_OK) throw Failure{s};
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

void print_report(vf_report* report) {
  for (std::size_t i = 0; i < vf_report_size(report); ++i)
    std::printf("%s %s\n", vf_report_name(report, i), shortest(vf_report_value(report, i)).c_str());
  vf_report_free(report);
}

std::string run_root() {
  const char* root = std::getenv("VIDFLOW_RUN_ROOT");
  return root && *root ? root : "runs";
}

struct ConfigFlags {
  std::string preset;
  std::string config_file;
  std::vector<std::string> overrides;  // section.key=value
  long long steps = -1;
  long long seed = -1;
  double lr = -1;
  std::string init;

  void add(CLI::App* cmd, const std::string& default_preset) {
    preset = default_preset;
    cmd->add_option("--preset", preset, "toy2d, vae-adapt, stage1, stage2, stage3, sft or rlhf");
    cmd->add_option("--config", config_file, "INI file; its preset wins over --preset")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "section.key=value override")->allow_extra_args(false);
    cmd->add_option("--steps", steps, "training steps")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "run seed")->check(CLI::NonNegativeNumber);
    cmd->add_option("--lr", lr, "learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--init", init, "checkpoint to start from");
  }

  vf_config* build() const {
    vf_config* c = nullptr;
    if (!config_file.empty()) {
      check(vf_config_load(config_file.c_str(), &c));
    } else {
      check(vf_config_preset(preset.c_str(), &c));
    }
    auto set = [&](const char* section, const char* key, const std::string& value) {
      if (vf_status s = vf_config_set(c, section, key, value.c_str()); s != VF_OK) {
        vf_config_free(c);
        throw Failure{s};
      }
    };
    for (const auto& o : overrides) {
      const auto dot = o.find('.'), eq = o.find('=');
      if (dot == std::string::npos || eq == std::string::npos || dot > eq) {
        vf_config_free(c);
        throw CLI::ValidationError("--set", "expected section.key=value, got '" + o + "'");
      }
      set(o.substr(0, dot).c_str(), o.substr(dot + 1, eq - dot - 1).c_str(), o.substr(eq + 1));
    }
    if (steps > 0) set("run", "steps", std::to_string(steps));
    if (seed >= 0) set("run", "seed", std::to_string(seed));
    if (lr > 0) set("run", "lr", shortest(lr));
    if (!init.empty()) set("run", "init", init);
    return c;
  }

  std::string default_run_name() const {
    return (config_file.empty() ? preset : std::string("config")) + "-seed" + std::to_string(seed < 0 ? 0 : seed);
  }
};

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vidflow: flow-matching video training toolkit at desk scale"};
  app.require_subcommand(1);
  app.set_version_flag("--version", vf_version());

  // train
  auto* train = app.add_subcommand("train", "train a preset and write metrics and a checkpoint");
  ConfigFlags train_flags;
  train_flags.add(train, "toy2d");
  std::string train_run, train_dir;
  train->add_option("--run", train_run, "run name under $VIDFLOW_RUN_ROOT (default runs/)");
  train->add_option("--run-dir", train_dir, "explicit run directory")->excludes(train->get_option("--run"));

  // sample
  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  ConfigFlags sample_flags;
  sample_flags.add(sample, "toy2d");
  std::string sample_ckpt, sample_out;
  std::size_t sample_n = 1000;
  std::size_t sample_steps = 0;
  double sample_shift = 0;
  sample->add_option("--checkpoint", sample_ckpt, "model checkpoint")->required();
  sample->add_option("--out", sample_out, "samples CSV")->required();
  sample->add_option("-n,--count", sample_n, "number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--sample-steps", sample_steps, "Euler steps")->check(CLI::PositiveNumber);
  sample->add_option("--shift", sample_shift, "inference shift (>= 1)");

  // rlhf
  auto* rlhf = app.add_subcommand("rlhf", "reward fine-tuning with selected gradient steps");
  ConfigFlags rlhf_flags;
  rlhf_flags.add(rlhf, "rlhf");
  std::string rlhf_run, rlhf_dir;
  rlhf->add_option("--run", rlhf_run, "run name");
  rlhf->add_option("--run-dir", rlhf_dir, "explicit run directory")->excludes(rlhf->get_option("--run"));

  // curate
  auto* curate = app.add_subcommand("curate", "score, deduplicate and select clips from a corpus");
  std::string corpus, manifest;
  bool fixture = false;
  curate->add_option("--corpus", corpus, "directory of .cvpx videos with .json sidecars")->required();
  curate->add_option("--out", manifest, "manifest JSONL path")->required();
  curate->add_flag("--fixture", fixture, "write the procedural fixture corpus into --corpus first");

  // serve
  auto* serve = app.add_subcommand("serve", "run the feature-encode server or write a spool");
  std::string bind = "127.0.0.1:0", dataset, spool_dir;
  std::uint64_t serve_seed = 0, spool_first = 0, spool_steps = 0;
  std::uint32_t world = 2;
  long long duration_ms = -1;
  serve->add_option("--bind", bind, "host:port to listen on");
  serve->add_option("--manifest", dataset, "dataset JSON (default: built-in toy dataset)");
  serve->add_option("--seed", serve_seed, "service seed");
  serve->add_option("--world-size", world, "number of training ranks")->check(CLI::PositiveNumber);
  serve->add_option("--duration-ms", duration_ms, "stop after this long (default: until SIGINT/SIGTERM)");
  auto* spool_opt = serve->add_option("--spool-dir", spool_dir, "write frames to disk instead of serving");
  serve->add_option("--first-step", spool_first, "first spooled step")->needs(spool_opt);
  serve->add_option("--steps", spool_steps, "number of spooled steps")->needs(spool_opt);

  // bench-parallel
  auto* bench = app.add_subcommand("bench-parallel", "sharded vs unsharded equivalence and traffic CSV");
  std::string bench_out;
  std::uint64_t bench_seed = 1;
  bench->add_option("--out", bench_out, "CSV path")->required();
  bench->add_option("--seed", bench_seed, "seed");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluation utilities");
  std::vector<double> gsb;
  std::vector<std::string> w2;
  std::uint64_t eval_seed = 0;
  auto* gsb_opt = eval->add_option("--gsb", gsb, "good same bad counts")->expected(3);
  auto* w2_opt = eval->add_option("--w2", w2, "two sample CSV files")->expected(2);
  eval->add_option("--seed", eval_seed, "direction seed for sliced W2");
  gsb_opt->excludes(w2_opt);
  eval->require_option(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      vf_config* c = train_flags.build();
      const std::string dir =
          !train_dir.empty() ? train_dir
                             : run_root() + "/" + (train_run.empty() ? train_flags.default_run_name() : train_run);
      vf_report* report = nullptr;
      const vf_status s = vf_train(c, dir.c_str(), &report);
      vf_config_free(c);
      check(s);
      std::printf("run_dir %s\n", dir.c_str());
      print_report(report);
    } else if (*sample) {
      vf_config* c = sample_flags.build();
      vf_status s = VF_OK;
      if (sample_steps) s = vf_config_set(c, "sampler", "steps", std::to_string(sample_steps).c_str());
      if (s == VF_OK && sample_shift > 0) s = vf_config_set(c, "sampler", "shift", shortest(sample_shift).c_str());
      if (s == VF_OK) s = vf_sample(c, sample_ckpt.c_str(), sample_n, sample_out.c_str());
      vf_config_free(c);
      check(s);
      std::printf("wrote %zu samples to %s\n", sample_n, sample_out.c_str());
    } else if (*rlhf) {
      vf_config* c = rlhf_flags.build();
      const std::string dir =
          !rlhf_dir.empty() ? rlhf_dir : run_root() + "/" + (rlhf_run.empty() ? rlhf_flags.default_run_name() : rlhf_run);
      vf_report* report = nullptr;
      const vf_status s = vf_rlhf(c, dir.c_str(), &report);
      vf_config_free(c);
      check(s);
      std::printf("run_dir %s\n", dir.c_str());
      print_report(report);
    } else if (*curate) {
      if (fixture) check(vf_write_fixture_corpus(corpus.c_str()));
      vf_report* report = nullptr;
      check(vf_curate(corpus.c_str(), manifest.c_str(), &report));
      print_report(report);
    } else if (*serve) {
      const char* ds = dataset.empty() ? nullptr : dataset.c_str();
      if (!spool_dir.empty()) {
        check(vf_spool_write(spool_dir.c_str(), ds, serve_seed, world, spool_first, spool_steps));
        std::printf("spooled %llu steps x %u ranks to %s\n", static_cast<unsigned long long>(spool_steps), world,
                    spool_dir.c_str());
        return 0;
      }
      vf_server* server = nullptr;
      check(vf_server_start(bind.c_str(), ds, serve_seed, world, &server));
      std::uint16_t port = 0;
      vf_server_port(server, &port);
      std::printf("listening on port %u\n", port);
      std::fflush(stdout);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const auto t0 = std::chrono::steady_clock::now();
      while (!g_stop) {
        if (duration_ms >= 0 && std::chrono::steady_clock::now() - t0 >= std::chrono::milliseconds(duration_ms)) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
      std::uint64_t served = 0;
      vf_server_requests(server, &served);
      vf_server_free(server);
      std::printf("served %llu requests\n", static_cast<unsigned long long>(served));
    } else if (*bench) {
      vf_report* report = nullptr;
      check(vf_bench_parallel(bench_seed, bench_out.c_str(), &report));
      print_report(report);
    } else if (*eval) {
      double v = 0;
      if (!gsb.empty()) {
        check(vf_eval_gsb(gsb[0], gsb[1], gsb[2], &v));
      } else {
        check(vf_eval_w2_files(w2[0].c_str(), w2[1].c_str(), eval_seed, &v));
      }
      std::printf("%s\n", shortest(v).c_str());
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "vidflow: %s error: %s\n", vf_status_name(f.status), vf_last_error());
    return exit_code(f.status);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "vidflow: usage error: %s\n", e.what());
    return 2;
  }
  return 0;
}
