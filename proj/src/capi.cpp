// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vidflow/checkpoint.hpp"
#include "vidflow/curation.hpp"
#include "vidflow/encode_server.hpp"
#include "vidflow/error.hpp"
#include "vidflow/harness.hpp"
#include "vidflow/parallel.hpp"
#include "vidflow/synth.hpp"
#include "vidflow/vae.hpp"

struct vf_config {
  vf::RunConfig config;
};

struct vf_report {
  std::vector<std::pair<std::string, double>> entries;
  void add(std::string name, double v) { entries.emplace_back(std::move(name), v); }
};

struct vf_server {
  std::shared_ptr<vf::FeatureService> service;
  std::unique_ptr<vf::EncodeServer> server;
};

struct vf_client {
  std::unique_ptr<vf::EncodeClient> client;
};

struct vf_batch {
  vf::FeatureBatch batch;
};

namespace {

namespace fs = std::filesystem;

thread_local std::string g_last_error;

vf_status status_of(vf::ErrorKind kind) {
  switch (kind) {
    case vf::ErrorKind::kShape:
      return VF_ERR_SHAPE;
    case vf::ErrorKind::kContract:
      return VF_ERR_CONTRACT;
    case vf::ErrorKind::kConfig:
      return VF_ERR_CONFIG;
    case vf::ErrorKind::kIo:
      return VF_ERR_IO;
    case vf::ErrorKind::kProtocol:
    case vf::ErrorKind::kRetriable:
    case vf::ErrorKind::kServer:
      return VF_ERR_PROTOCOL;
    case vf::ErrorKind::kNumeric:
      break;
  }
  return VF_ERR_RUNTIME;
}

vf_status fail(vf_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <class F>
vf_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return VF_OK;
  } catch (const vf::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(VF_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(VF_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(VF_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(VF_ERR_RUNTIME, "unknown error");
  }
}

#define VF_REQUIRE(cond, what) \
  if (!(cond)) return fail(VF_ERR_USAGE, what)

fs::path prepare_run_dir(const char* run_dir, const vf::RunConfig& config) {
  const fs::path dir(run_dir);
  fs::create_directories(dir);
  if (fs::exists(dir / "metrics.csv"))
    throw vf::ConfigError("run directory " + dir.string() + " already holds metrics.csv");
  std::ofstream out(dir / "config.ini");
  if (!out) throw vf::IoError("cannot write " + (dir / "config.ini").string());
  out << vf::config_to_ini(config);
  return dir;
}

void train_into(const vf::RunConfig& c, const fs::path& dir, vf_report& report) {
  using vf::Preset;
  switch (c.preset) {
    case Preset::kToy2d: {
      vf::MetricsLog log(dir / "metrics.csv", {"loss", "w2"});
      auto r = vf::run_toy_flow(c, &log);
      vf::save_checkpoint(dir / "model.ckpt", *r.model);
      report.add("init_w2", r.init_w2);
      report.add("final_w2", r.final_w2);
      report.add("few_step_w2_shift1", r.few_step_s1);
      report.add("few_step_w2_shift17", r.few_step_s17);
      report.add("first_loss", r.first_loss);
      report.add("last_loss", r.last_loss);
      return;
    }
    case Preset::kVaeAdapt: {
      fs::path base = c.init;
      if (base.empty()) {
        base = dir / "base.ckpt";
        vf::pretrain_adaptation_base(c, base);
      }
      vf::MetricsLog log(dir / "metrics.csv", {"w2_swapped", "w2_control"});
      auto r = vf::run_vae_adaptation(c, base, &log);
      report.add("pre_swap_w2", r.pre_swap);
      for (const auto& p : r.swapped) report.add("swapped_w2_" + std::to_string(p.step), p.w2);
      for (const auto& p : r.control) report.add("control_w2_" + std::to_string(p.step), p.w2);
      return;
    }
    case Preset::kStage1:
    case Preset::kStage2:
    case Preset::kStage3:
    case Preset::kSft: {
      vf::MetricsLog log(dir / "metrics.csv", {"loss", "val_loss"});
      auto r = vf::run_video_train(c, &log);
      vf::save_checkpoint(dir / "model.ckpt", *r.model);
      report.add("first_loss", r.first_loss);
      report.add("last_loss", r.last_loss);
      return;
    }
    case Preset::kRlhf: {
      vf::MetricsLog log(dir / "metrics.csv", {"reward", "probe"});
      auto r = vf::run_rlhf(c, &log);
      report.add("first_reward", r.first_mean);
      report.add("last_reward", r.last_mean);
      if (!r.probe.empty()) {
        report.add("first_probe", r.probe.front());
        report.add("last_probe", r.probe.back());
      }
      return;
    }
  }
}

vf::Dataset dataset_or_toy(const char* path, std::uint64_t seed) {
  return path && *path ? vf::load_dataset(path) : vf::make_toy_dataset(16, seed);
}

}  // namespace

extern "C" {

const char* vf_version(void) { return "0.1.0"; }

const char* vf_last_error(void) { return g_last_error.c_str(); }

const char* vf_status_name(vf_status status) {
  switch (status) {
    case VF_OK:
      return "ok";
    case VF_ERR_RUNTIME:
      return "runtime";
    case VF_ERR_USAGE:
      return "usage";
    case VF_ERR_CONFIG:
      return "config";
    case VF_ERR_IO:
      return "io";
    case VF_ERR_PROTOCOL:
      return "protocol";
    case VF_ERR_CONTRACT:
      return "contract";
    case VF_ERR_SHAPE:
      return "shape";
  }
  return "unknown";
}

// ---- configuration

vf_status vf_config_preset(const char* preset, vf_config** out) {
  VF_REQUIRE(preset && out, "vf_config_preset: null argument");
  return guarded([&] { *out = new vf_config{vf::preset_config(vf::parse_preset(preset))}; });
}

vf_status vf_config_load(const char* path, vf_config** out) {
  VF_REQUIRE(path && out, "vf_config_load: null argument");
  return guarded([&] { *out = new vf_config{vf::load_config(path)}; });
}

vf_status vf_config_apply_ini(vf_config* config, const char* ini_text) {
  VF_REQUIRE(config && ini_text, "vf_config_apply_ini: null argument");
  return guarded([&] { vf::apply_ini(config->config, ini_text); });
}

vf_status vf_config_set(vf_config* config, const char* section, const char* key, const char* value) {
  VF_REQUIRE(config && section && key && value, "vf_config_set: null argument");
  const std::string v(value);
  VF_REQUIRE(v.find_first_of("\r\n") == std::string::npos, "vf_config_set: value spans lines");
  return guarded([&] {
    vf::apply_ini(config->config, "[" + std::string(section) + "]\n" + key + " = " + v + "\n");
  });
}

vf_status vf_config_to_ini(const vf_config* config, char* buffer, size_t capacity, size_t* needed) {
  VF_REQUIRE(config, "vf_config_to_ini: null config");
  const std::string text = vf::config_to_ini(config->config);
  if (needed) *needed = text.size() + 1;
  if (!buffer || capacity < text.size() + 1) return fail(VF_ERR_USAGE, "vf_config_to_ini: buffer too small");
  std::memcpy(buffer, text.c_str(), text.size() + 1);
  g_last_error.clear();
  return VF_OK;
}

void vf_config_free(vf_config* config) { delete config; }

// ---- reports

size_t vf_report_size(const vf_report* report) { return report ? report->entries.size() : 0; }

const char* vf_report_name(const vf_report* report, size_t index) {
  return report && index < report->entries.size() ? report->entries[index].first.c_str() : nullptr;
}

double vf_report_value(const vf_report* report, size_t index) {
  return report && index < report->entries.size() ? report->entries[index].second : 0.0;
}

vf_status vf_report_get(const vf_report* report, const char* name, double* value) {
  VF_REQUIRE(report && name && value, "vf_report_get: null argument");
  for (const auto& [n, v] : report->entries)
    if (n == name) {
      *value = v;
      g_last_error.clear();
      return VF_OK;
    }
  return fail(VF_ERR_USAGE, std::string("report has no entry '") + name + "'");
}

void vf_report_free(vf_report* report) { delete report; }

// ---- workflows

vf_status vf_train(const vf_config* config, const char* run_dir, vf_report** out) {
  VF_REQUIRE(config && run_dir, "vf_train: null argument");
  return guarded([&] {
    config->config.validate();
    const fs::path dir = prepare_run_dir(run_dir, config->config);
    auto report = std::make_unique<vf_report>();
    train_into(config->config, dir, *report);
    if (out) *out = report.release();
  });
}

vf_status vf_rlhf(const vf_config* config, const char* run_dir, vf_report** out) {
  VF_REQUIRE(config && run_dir, "vf_rlhf: null argument");
  return guarded([&] {
    vf::RunConfig c = config->config;
    if (c.preset != vf::Preset::kRlhf) {
      vf::RunConfig r = vf::preset_config(vf::Preset::kRlhf);
      r.seed = c.seed;
      r.init = c.init;
      c = r;
    }
    c.validate();
    const fs::path dir = prepare_run_dir(run_dir, c);
    auto report = std::make_unique<vf_report>();
    train_into(c, dir, *report);
    if (out) *out = report.release();
  });
}

vf_status vf_sample(const vf_config* config, const char* checkpoint, size_t n, const char* out_csv) {
  VF_REQUIRE(config && checkpoint && out_csv, "vf_sample: null argument");
  VF_REQUIRE(n > 0, "vf_sample: n must be positive");
  return guarded([&] {
    const auto& c = config->config;
    if (!fs::exists(checkpoint)) throw vf::ConfigError(std::string("missing checkpoint ") + checkpoint);
    const auto model = vf::load_checkpoint(checkpoint);
    vf::Shape shape;
    if (const auto* mlp = dynamic_cast<const vf::MlpVelocity*>(model.get())) {
      shape = {mlp->config().data_dim};
    } else {
      shape = vf::CausalVae().latent_shape({c.frames, 3, c.height, c.width});
    }
    vf::write_samples_csv(out_csv, vf::sample_checkpoint(checkpoint, c, n, shape));
  });
}

vf_status vf_write_fixture_corpus(const char* dir) {
  VF_REQUIRE(dir, "vf_write_fixture_corpus: null argument");
  return guarded([&] { vf::synth::write_fixture_corpus(dir); });
}

vf_status vf_curate(const char* corpus_dir, const char* manifest_path, vf_report** out) {
  VF_REQUIRE(corpus_dir && manifest_path, "vf_curate: null argument");
  return guarded([&] {
    const auto records = vf::run_curation(vf::load_corpus(corpus_dir), vf::CurationConfig{}, vf::StubAestheticScorer{});
    const fs::path path(manifest_path);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream file(path);
    if (!file) throw vf::IoError("cannot write " + path.string());
    vf::write_manifest(file, records);
    auto report = std::make_unique<vf_report>();
    double kept = 0, selected = 0;
    for (const auto& r : records) {
      kept += r.kept;
      selected += r.post_selected;
    }
    report->add("clips", static_cast<double>(records.size()));
    report->add("kept", kept);
    report->add("post_selected", selected);
    if (out) *out = report.release();
  });
}

vf_status vf_bench_parallel(uint64_t seed, const char* out_csv, vf_report** out) {
  VF_REQUIRE(out_csv, "vf_bench_parallel: null argument");
  return guarded([&] {
    const auto rows = vf::bench_parallel(seed);
    const fs::path path(out_csv);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream file(path);
    if (!file) throw vf::IoError("cannot write " + path.string());
    vf::write_bench_csv(file, rows);
    auto report = std::make_unique<vf_report>();
    double worst = 0;
    for (const auto& r : rows) worst = std::max(worst, r.max_diff);
    report->add("rows", static_cast<double>(rows.size()));
    report->add("max_diff", worst);
    if (out) *out = report.release();
  });
}

vf_status vf_eval_gsb(double good, double same, double bad, double* out) {
  VF_REQUIRE(out, "vf_eval_gsb: null output");
  return guarded([&] { *out = vf::gsb_ratio(good, same, bad); });
}

vf_status vf_eval_w2_files(const char* csv_a, const char* csv_b, uint64_t seed, double* out) {
  VF_REQUIRE(csv_a && csv_b && out, "vf_eval_w2_files: null argument");
  return guarded([&] {
    auto flat = [](const vf::Tensor& t) {
      return t.rank() <= 2 ? t : vf::reshape(t, {t.dim(0), t.numel() / t.dim(0)});
    };
    *out = vf::eval_w2(flat(vf::read_samples_csv(csv_a)), flat(vf::read_samples_csv(csv_b)), seed);
  });
}

// ---- encode server

vf_status vf_server_start(const char* bind, const char* dataset_json, uint64_t seed, uint32_t world_size,
                          vf_server** out) {
  VF_REQUIRE(bind && out, "vf_server_start: null argument");
  VF_REQUIRE(world_size > 0, "vf_server_start: world size must be positive");
  return guarded([&] {
    auto s = std::make_unique<vf_server>();
    vf::ServiceConfig sc;
    sc.seed = seed;
    sc.world_size = world_size;
    s->service = std::make_shared<vf::FeatureService>(dataset_or_toy(dataset_json, seed), sc);
    vf::ServerOptions opts;
    opts.bind = bind;
    s->server = std::make_unique<vf::EncodeServer>(s->service, opts);
    s->server->start();
    *out = s.release();
  });
}

vf_status vf_server_port(const vf_server* server, uint16_t* port) {
  VF_REQUIRE(server && port, "vf_server_port: null argument");
  *port = server->server->port();
  g_last_error.clear();
  return VF_OK;
}

vf_status vf_server_requests(const vf_server* server, uint64_t* count) {
  VF_REQUIRE(server && count, "vf_server_requests: null argument");
  *count = server->server->requests_served();
  g_last_error.clear();
  return VF_OK;
}

void vf_server_free(vf_server* server) {
  if (!server) return;
  try {
    server->server->stop();
  } catch (...) {
  }
  delete server;
}

vf_status vf_spool_write(const char* dir, const char* dataset_json, uint64_t seed, uint32_t world_size,
                         uint64_t first_step, uint64_t steps) {
  VF_REQUIRE(dir, "vf_spool_write: null argument");
  VF_REQUIRE(world_size > 0, "vf_spool_write: world size must be positive");
  return guarded([&] {
    vf::ServiceConfig sc;
    sc.seed = seed;
    sc.world_size = world_size;
    const vf::FeatureService service(dataset_or_toy(dataset_json, seed), sc);
    vf::write_spool(dir, service, first_step, steps);
  });
}

vf_status vf_client_connect(const char* host, uint16_t port, uint32_t timeout_ms, vf_client** out) {
  VF_REQUIRE(host && out, "vf_client_connect: null argument");
  return guarded([&] { *out = new vf_client{std::make_unique<vf::EncodeClient>(host, port, timeout_ms)}; });
}

vf_status vf_client_fetch(vf_client* client, uint64_t step, uint32_t rank, vf_batch** out) {
  VF_REQUIRE(client && out, "vf_client_fetch: null argument");
  return guarded([&] { *out = new vf_batch{client->client->request_batch(step, rank)}; });
}

void vf_client_free(vf_client* client) { delete client; }

uint64_t vf_batch_step(const vf_batch* batch) { return batch ? batch->batch.step : 0; }
uint32_t vf_batch_rank(const vf_batch* batch) { return batch ? batch->batch.rank : 0; }
uint16_t vf_batch_bucket(const vf_batch* batch) { return batch ? batch->batch.bucket : 0; }

vf_status vf_batch_latent_shape(const vf_batch* batch, size_t* dims, size_t capacity, size_t* rank) {
  VF_REQUIRE(batch && rank, "vf_batch_latent_shape: null argument");
  const auto& shape = batch->batch.latents.shape();
  *rank = shape.size();
  if (!dims || capacity < shape.size()) return fail(VF_ERR_USAGE, "vf_batch_latent_shape: buffer too small");
  for (std::size_t i = 0; i < shape.size(); ++i) dims[i] = shape[i];
  g_last_error.clear();
  return VF_OK;
}

const double* vf_batch_latents(const vf_batch* batch, size_t* count) {
  if (!batch) return nullptr;
  if (count) *count = batch->batch.latents.numel();
  return batch->batch.latents.values().data();
}

const uint64_t* vf_batch_sample_ids(const vf_batch* batch, size_t* count) {
  if (!batch) return nullptr;
  if (count) *count = batch->batch.sample_ids.size();
  return batch->batch.sample_ids.data();
}

void vf_batch_free(vf_batch* batch) { delete batch; }

}  // extern "C"
