// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/harness.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "vidflow/checkpoint.hpp"
#include "vidflow/encode_server.hpp"
#include "vidflow/error.hpp"
#include "vidflow/optim.hpp"
#include "vidflow/sampler.hpp"
#include "vidflow/vae.hpp"

namespace vf {

// ---- evaluation

namespace {

double sorted_w2_sq(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(a.size());
  }
  const std::size_t m = std::max(a.size(), b.size());
  double acc = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    const double x = a[std::min(a.size() - 1, static_cast<std::size_t>(q * static_cast<double>(a.size())))];
    const double y = b[std::min(b.size() - 1, static_cast<std::size_t>(q * static_cast<double>(b.size())))];
    acc += (x - y) * (x - y);
  }
  return acc / static_cast<double>(m);
}

std::size_t row_width(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("eval_w2: samples need a leading sample axis");
  return t.rank() == 1 ? 1 : t.numel() / t.dim(0);
}

}  // namespace

double eval_w2(const Tensor& a, const Tensor& b, std::uint64_t seed, std::size_t directions) {
  if (!a.defined() || !b.defined() || a.numel() == 0 || b.numel() == 0)
    throw ContractError("eval_w2: empty sample set");
  const std::size_t d = row_width(a);
  if (row_width(b) != d)
    throw ShapeError("eval_w2: sample widths differ (" + std::to_string(d) + " vs " +
                     std::to_string(row_width(b)) + ")");
  const std::size_t na = a.dim(0), nb = b.dim(0);
  const auto av = a.values(), bv = b.values();
  if (d == 1) return std::sqrt(sorted_w2_sq({av.begin(), av.end()}, {bv.begin(), bv.end()}));
  if (directions == 0) throw ContractError("eval_w2: need at least one direction");
  Rng rng = Rng(seed).fork("sliced-w2");
  double acc = 0;
  std::vector<double> dir(d), pa(na), pb(nb);
  for (std::size_t k = 0; k < directions; ++k) {
    double norm = 0;
    for (auto& x : dir) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : dir) x /= norm;
    for (std::size_t i = 0; i < na; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += av[i * d + j] * dir[j];
      pa[i] = s;
    }
    for (std::size_t i = 0; i < nb; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += bv[i * d + j] * dir[j];
      pb[i] = s;
    }
    acc += sorted_w2_sq(pa, pb);
  }
  return std::sqrt(acc / static_cast<double>(directions));
}

double gsb_ratio(double good, double same, double bad) {
  if (!(good >= 0) || !(same >= 0) || !(bad >= 0)) throw ContractError("gsb_ratio: counts must be nonnegative");
  if (same + bad == 0) throw ContractError("gsb_ratio: same + bad must be positive");
  return (good + same) / (bad + same);
}

// ---- presets

namespace {

const std::vector<std::pair<Preset, std::string>>& preset_names() {
  static const std::vector<std::pair<Preset, std::string>> names{
      {Preset::kToy2d, "toy2d"},   {Preset::kVaeAdapt, "vae-adapt"}, {Preset::kStage1, "stage1"},
      {Preset::kStage2, "stage2"}, {Preset::kStage3, "stage3"},      {Preset::kSft, "sft"},
      {Preset::kRlhf, "rlhf"}};
  return names;
}

const StagePreset& stage_row(Preset p) {
  for (const auto& row : stage_presets())
    if (row.preset == p) return row;
  throw ContractError("no stage row for preset " + preset_name(p));
}

ModelConfig toy_dit() {
  ModelConfig m;
  m.layers = 2;
  m.heads = 2;
  m.head_dim = 8;
  m.ffn_dim = 32;
  m.cond_dim = 16;
  return m;
}

}  // namespace

std::string preset_name(Preset preset) {
  for (const auto& [p, n] : preset_names())
    if (p == preset) return n;
  throw ContractError("unknown preset value");
}

Preset parse_preset(std::string_view name) {
  for (const auto& [p, n] : preset_names())
    if (n == name) return p;
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

const std::vector<StagePreset>& stage_presets() {
  static const std::vector<StagePreset> rows{
      {Preset::kVaeAdapt, 1, 16, 16, 32, 0, 1e-4, 5000},
      {Preset::kStage1, 29, 16, 16, 32, 16, 1e-4, 40000},
      {Preset::kStage2, 125, 16, 16, 32, 4, 1e-4, 60000},
      {Preset::kStage3, 125, 32, 48, 16, 2, 5e-5, 30000},
  };
  return rows;
}

RunConfig preset_config(Preset preset) {
  RunConfig c;
  c.preset = preset;
  switch (preset) {
    case Preset::kToy2d:
      c.steps = 2000;
      c.lr = 2e-3;
      c.eval_every = 500;
      c.sample_shift = 1.0;
      c.cfg_scale = 1.0;
      c.timesteps.kind = TimestepKind::kUniform;
      break;
    case Preset::kVaeAdapt: {
      const auto& row = stage_row(preset);
      c.frames = row.frames;
      c.height = row.height;
      c.width = row.width;
      c.image_batch = row.image_batch;
      c.video_batch = 0;
      c.steps = 1600;
      c.lr = 1e-3;
      c.eval_every = 200;
      c.sample_shift = 1.0;
      c.cfg_scale = 1.0;
      c.timesteps.kind = TimestepKind::kUniform;
      break;
    }
    case Preset::kStage1:
    case Preset::kStage2:
    case Preset::kStage3:
    case Preset::kSft: {
      const auto& row = stage_row(preset == Preset::kSft ? Preset::kStage3 : preset);
      c.frames = row.frames;
      c.height = row.height;
      c.width = row.width;
      c.image_batch = row.image_batch;
      c.video_batch = row.video_batch;
      c.lr = row.lr;
      if (preset == Preset::kSft) {
        c.lr = 0.1 * stage_row(Preset::kStage1).lr;
        c.image_batch = 0;
      }
      c.model = toy_dit();
      c.steps = 200;
      c.eval_every = 10;
      c.timesteps.kind = TimestepKind::kLogitNormal;
      break;
    }
    case Preset::kRlhf:
      c.steps = 300;
      c.eval_every = 20;
      c.lr = 5e-2;
      c.rlhf.lr = 5e-2;
      c.rlhf.steps = 20;
      c.rlhf.k = 4;
      c.rlhf.batch = 8;
      c.frames = 29;
      c.model = toy_dit();
      c.sample_shift = 1.0;
      break;
  }
  return c;
}

void RunConfig::validate() const {
  if (steps == 0) throw ConfigError("run.steps must be positive");
  if (!(lr > 0)) throw ConfigError("run.lr must be positive");
  if (eval_every == 0) throw ConfigError("run.eval_every must be positive");
  if (sample_steps == 0) throw ConfigError("sampler.steps must be positive");
  if (!(sample_shift >= 1.0)) throw ConfigError("sampler.shift must be >= 1");
  if (!(cfg_scale >= 0.0)) throw ConfigError("sampler.cfg_scale must be >= 0");
  if (toy.samples < 2 || toy.samples % 2) throw ConfigError("toy.samples must be even and >= 2");
  if (toy.batch == 0 || toy.hidden == 0 || toy.depth < 2) throw ConfigError("toy model/batch sizes invalid");
  if (!(toy.ema >= 0 && toy.ema < 1)) throw ConfigError("toy.ema must lie in [0, 1)");
  if (!(toy.spread > 0)) throw ConfigError("toy.spread must be positive");
  if (adapt.checkpoints.empty() || !std::is_sorted(adapt.checkpoints.begin(), adapt.checkpoints.end()))
    throw ConfigError("adapt.checkpoints must be a nonempty ascending list");
  if (adapt.eval_samples < 2 || adapt.batch == 0 || adapt.eval_steps == 0)
    throw ConfigError("adapt sizes invalid");
  if (frames == 0 || height == 0 || width == 0) throw ConfigError("data shape must be positive");
  if (preset != Preset::kToy2d && preset != Preset::kVaeAdapt && preset != Preset::kRlhf &&
      image_batch + video_batch == 0)
    throw ConfigError("image_batch + video_batch must be positive");
  timesteps.validate();
  model.validate();
  rlhf.validate();
}

// ---- INI

namespace {

template <class T>
T parse_int(const std::string& key, const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an unsigned integer, got '" + s + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& s) {
  double v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::string section, key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Access>
Field make_field(std::string section, std::string key, Access access) {
  Field f{std::move(section), std::move(key), {}, {}};
  f.set = [access](RunConfig& c, const std::string& name, const std::string& s) {
    T& ref = access(c);
    if constexpr (std::is_same_v<T, double>) {
      ref = parse_double(name, s);
    } else if constexpr (std::is_same_v<T, bool>) {
      ref = parse_bool(name, s);
    } else if constexpr (std::is_same_v<T, std::string>) {
      ref = s;
    } else {
      ref = parse_int<T>(name, s);
    }
  };
  f.get = [access](const RunConfig& c) -> std::string {
    const T& ref = access(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, double>) {
      return fmt_double(ref);
    } else if constexpr (std::is_same_v<T, bool>) {
      return ref ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
      return ref;
    } else {
      return std::to_string(ref);
    }
  };
  return f;
}

template <class E>
Field enum_field(std::string section, std::string key, std::vector<std::pair<E, std::string>> names,
                 std::function<E&(RunConfig&)> access) {
  Field f{std::move(section), std::move(key), {}, {}};
  f.set = [names, access](RunConfig& c, const std::string& name, const std::string& s) {
    for (const auto& [e, n] : names)
      if (n == s) {
        access(c) = e;
        return;
      }
    throw ConfigError(name + ": unknown value '" + s + "'");
  };
  f.get = [names, access](const RunConfig& c) -> std::string {
    const E e = access(const_cast<RunConfig&>(c));
    for (const auto& [v, n] : names)
      if (v == e) return n;
    return "";
  };
  return f;
}

#define VF_FIELD(T, sec, key, expr) make_field<T>(sec, key, [](RunConfig& c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f{
        VF_FIELD(std::uint64_t, "run", "seed", c.seed),
        VF_FIELD(std::size_t, "run", "steps", c.steps),
        VF_FIELD(double, "run", "lr", c.lr),
        VF_FIELD(std::size_t, "run", "eval_every", c.eval_every),
        VF_FIELD(std::string, "run", "init", c.init),
        VF_FIELD(std::size_t, "data", "frames", c.frames),
        VF_FIELD(std::size_t, "data", "height", c.height),
        VF_FIELD(std::size_t, "data", "width", c.width),
        VF_FIELD(std::size_t, "data", "image_batch", c.image_batch),
        VF_FIELD(std::size_t, "data", "video_batch", c.video_batch),
        VF_FIELD(std::size_t, "data", "pool", c.pool),
        VF_FIELD(std::string, "data", "corpus", c.corpus),
        VF_FIELD(std::size_t, "model", "layers", c.model.layers),
        VF_FIELD(std::size_t, "model", "heads", c.model.heads),
        VF_FIELD(std::size_t, "model", "head_dim", c.model.head_dim),
        VF_FIELD(std::size_t, "model", "ffn_dim", c.model.ffn_dim),
        VF_FIELD(std::size_t, "model", "cond_dim", c.model.cond_dim),
        VF_FIELD(bool, "model", "learned_ape", c.model.learned_ape),
        VF_FIELD(double, "model", "sft_anchor", c.sft_anchor),
        VF_FIELD(double, "sampler", "logit_mean", c.timesteps.logit_mean),
        VF_FIELD(double, "sampler", "logit_std", c.timesteps.logit_std),
        VF_FIELD(double, "sampler", "train_shift", c.timesteps.train_shift),
        VF_FIELD(std::size_t, "sampler", "steps", c.sample_steps),
        VF_FIELD(double, "sampler", "shift", c.sample_shift),
        VF_FIELD(double, "sampler", "cfg_scale", c.cfg_scale),
        VF_FIELD(double, "toy", "separation", c.toy.separation),
        VF_FIELD(double, "toy", "spread", c.toy.spread),
        VF_FIELD(std::size_t, "toy", "samples", c.toy.samples),
        VF_FIELD(std::size_t, "toy", "hidden", c.toy.hidden),
        VF_FIELD(std::size_t, "toy", "depth", c.toy.depth),
        VF_FIELD(std::size_t, "toy", "batch", c.toy.batch),
        VF_FIELD(double, "toy", "ema", c.toy.ema),
        VF_FIELD(std::size_t, "adapt", "pretrain_steps", c.adapt.pretrain_steps),
        VF_FIELD(std::size_t, "adapt", "batch", c.adapt.batch),
        VF_FIELD(std::size_t, "adapt", "hidden", c.adapt.hidden),
        VF_FIELD(std::size_t, "adapt", "eval_samples", c.adapt.eval_samples),
        VF_FIELD(std::size_t, "adapt", "eval_steps", c.adapt.eval_steps),
        VF_FIELD(bool, "adapt", "control", c.adapt.control),
        VF_FIELD(std::size_t, "rlhf", "k", c.rlhf.k),
        VF_FIELD(std::size_t, "rlhf", "steps", c.rlhf.steps),
        VF_FIELD(double, "rlhf", "shift", c.rlhf.shift),
        VF_FIELD(double, "rlhf", "beta", c.rlhf.beta),
        VF_FIELD(double, "rlhf", "lr", c.rlhf.lr),
        VF_FIELD(std::size_t, "rlhf", "batch", c.rlhf.batch),
        VF_FIELD(std::size_t, "rlhf", "frames_short", c.rlhf.frames_short),
    };
    f.push_back(enum_field<TimestepKind>("sampler", "timesteps",
                                         {{TimestepKind::kUniform, "uniform"}, {TimestepKind::kLogitNormal, "logit-normal"}},
                                         [](RunConfig& c) -> TimestepKind& { return c.timesteps.kind; }));
    f.push_back(enum_field<PeMode>("model", "pe_mode", {{PeMode::kApe, "ape"}, {PeMode::kRope, "rope"}},
                                   [](RunConfig& c) -> PeMode& { return c.model.pe_mode; }));
    f.push_back(enum_field<RewardTarget>(
        "rlhf", "target", {{RewardTarget::kFullSample, "full"}, {RewardTarget::kFirstFrame, "first-frame"}},
        [](RunConfig& c) -> RewardTarget& { return c.rlhf.target; }));
    Field cps{"adapt", "checkpoints", {}, {}};
    cps.set = [](RunConfig& c, const std::string& name, const std::string& s) {
      std::vector<std::size_t> out;
      std::stringstream in(s);
      std::string item;
      while (std::getline(in, item, ',')) {
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        out.push_back(parse_int<std::size_t>(name, item));
      }
      c.adapt.checkpoints = out;
    };
    cps.get = [](const RunConfig& c) {
      std::string s;
      for (std::size_t i = 0; i < c.adapt.checkpoints.size(); ++i)
        s += (i ? "," : "") + std::to_string(c.adapt.checkpoints[i]);
      return s;
    };
    f.push_back(std::move(cps));
    return f;
  }();
  return all;
}

#undef VF_FIELD

}  // namespace

void apply_ini(RunConfig& config, const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig out = config;
  if (auto run = tree.get_child_optional("run"))
    if (auto p = run->get_optional<std::string>("preset")) out = preset_config(parse_preset(*p));
  for (const auto& [section, child] : tree) {
    if (child.empty() && !child.data().empty())
      throw ConfigError("config key '" + section + "' lies outside any section");
    for (const auto& [key, value] : child) {
      const std::string name = section + "." + key;
      if (section == "run" && key == "preset") continue;
      auto it = std::find_if(fields().begin(), fields().end(),
                             [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == fields().end()) throw ConfigError("unknown config key '" + name + "'");
      it->set(out, name, value.data());
    }
  }
  out.validate();
  config = out;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  RunConfig c = preset_config(Preset::kToy2d);
  apply_ini(c, text.str());
  return c;
}

std::string config_to_ini(const RunConfig& config) {
  std::map<std::string, std::vector<const Field*>> by_section;
  std::vector<std::string> order;
  for (const auto& f : fields()) {
    if (!by_section.count(f.section)) order.push_back(f.section);
    by_section[f.section].push_back(&f);
  }
  std::ostringstream out;
  for (const auto& section : order) {
    out << "[" << section << "]\n";
    if (section == "run") out << "preset = " << preset_name(config.preset) << "\n";
    for (const Field* f : by_section[section]) out << f->key << " = " << f->get(config) << "\n";
    out << "\n";
  }
  return out.str();
}

// ---- metrics

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

namespace {

std::string metrics_banner() { return "# vidflow-metrics v" + std::to_string(kMetricsSchemaVersion); }

std::string join_header(const std::vector<std::string>& columns) {
  std::string h = "step";
  for (const auto& c : columns) h += "," + c;
  return h;
}

}  // namespace

MetricsLog::MetricsLog(std::filesystem::path path, std::vector<std::string> columns)
    : path_(std::move(path)), columns_(std::move(columns)) {
  timing_path_ = path_.parent_path() / "timing.csv";
  const std::string header = join_header(columns_);
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_);
    std::string banner, head, line, last;
    std::getline(in, banner);
    std::getline(in, head);
    if (banner != metrics_banner() || head != header)
      throw ConfigError("metrics file " + path_.string() + " has a different schema");
    while (std::getline(in, line))
      if (!line.empty()) last = line;
    if (!last.empty()) last_step_ = std::stol(last.substr(0, last.find(',')));
    return;
  }
  if (!path_.parent_path().empty()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_);
  if (!out) throw IoError("cannot create metrics file " + path_.string());
  out << metrics_banner() << "\n" << header << "\n";
  if (!std::filesystem::exists(timing_path_)) std::ofstream(timing_path_) << "file,step,wall_seconds\n";
}

void MetricsLog::append(std::size_t step, const std::vector<double>& values, double wall_seconds) {
  if (values.size() != columns_.size())
    throw ContractError("metrics row has " + std::to_string(values.size()) + " values for " +
                        std::to_string(columns_.size()) + " columns");
  if (static_cast<long>(step) <= last_step_)
    throw ContractError("metrics steps must increase (" + std::to_string(step) + " after " +
                        std::to_string(last_step_) + ")");
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to " + path_.string());
  out << step;
  for (double v : values) out << "," << format_metric(v);
  out << "\n";
  std::ofstream(timing_path_, std::ios::app) << path_.filename().string() << "," << step << ","
                                             << format_metric(wall_seconds) << "\n";
  last_step_ = static_cast<long>(step);
}

// ---- shared helpers

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor gather_rows(const Tensor& pool, const std::vector<std::size_t>& idx) {
  const std::size_t row = pool.numel() / pool.dim(0);
  Shape shape = pool.shape();
  shape[0] = idx.size();
  std::vector<double> v;
  v.reserve(idx.size() * row);
  const auto src = pool.values();
  for (auto i : idx) v.insert(v.end(), src.begin() + static_cast<long>(i * row),
                              src.begin() + static_cast<long>((i + 1) * row));
  return Tensor::from(shape, std::move(v));
}

std::vector<std::size_t> draw_indices(std::size_t n, std::size_t pool, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = rng.below(pool);
  return idx;
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw ContractError("stack: nothing to stack");
  Shape shape{items.size()};
  for (auto d : items[0].shape()) shape.push_back(d);
  std::vector<double> v;
  v.reserve(items.size() * items[0].numel());
  for (const auto& t : items) {
    if (t.shape() != items[0].shape()) throw ShapeError("stack: item shapes differ");
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  return Tensor::from(shape, std::move(v));
}

void ema_update(std::vector<Tensor>& ema, const std::vector<Tensor>& live, double decay) {
  for (std::size_t p = 0; p < ema.size(); ++p) {
    auto dst = ema[p].mutable_values();
    const auto src = live[p].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = decay * dst[i] + (1.0 - decay) * src[i];
  }
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return end > begin ? s / static_cast<double>(end - begin) : 0.0;
}

template <class M>
std::unique_ptr<M> load_as(const std::filesystem::path& path, const char* what) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing checkpoint " + path.string());
  auto base = load_checkpoint(path);
  auto* typed = dynamic_cast<M*>(base.get());
  if (!typed) throw ConfigError("checkpoint " + path.string() + " does not hold " + what);
  base.release();
  return std::unique_ptr<M>(typed);
}

}  // namespace

// ---- toy flow

Tensor toy_mixture(std::size_t n, const ToyConfig& config, Rng& rng) {
  if (n % 2) throw ContractError("toy_mixture: count must be even");
  std::vector<double> v(2 * n);
  for (std::size_t i = 0; i < n; i += 2) {
    const double x = config.separation + config.spread * rng.normal();
    const double y = config.spread * rng.normal();
    v[2 * i] = x;
    v[2 * i + 1] = y;
    v[2 * i + 2] = -x;
    v[2 * i + 3] = -y;
  }
  return Tensor::from({n, 2}, std::move(v));
}

Tensor paired_noise(std::size_t n, std::size_t dim, Rng& rng) {
  if (n % 2) throw ContractError("paired_noise: count must be even");
  std::vector<double> v(n * dim);
  for (std::size_t i = 0; i < n; i += 2)
    for (std::size_t j = 0; j < dim; ++j) {
      v[i * dim + j] = rng.normal();
      v[(i + 1) * dim + j] = -v[i * dim + j];
    }
  return Tensor::from({n, dim}, std::move(v));
}

double toy_sample_w2(VelocityModel& model, const RunConfig& config, std::size_t steps, double shift) {
  Rng root(config.seed);
  Rng noise_rng = root.fork("eval-noise");
  Rng data_rng = root.fork("eval-data");
  const Tensor x0 = paired_noise(config.toy.samples, 2, noise_rng);
  const Tensor data = toy_mixture(config.toy.samples, config.toy, data_rng);
  const Tensor x = euler_sample(model, x0, make_schedule(steps, shift), GuidanceConfig{1.0, Tensor()}, Tensor());
  return eval_w2(x, data);
}

ToyResult run_toy_flow(const RunConfig& config, MetricsLog* log) {
  config.validate();
  Rng root(config.seed);
  MlpConfig mc;
  mc.hidden = config.toy.hidden;
  mc.depth = config.toy.depth;
  Rng init = root.fork("init");
  auto model = std::make_unique<MlpVelocity>(mc, init);
  Rng init_copy = root.fork("init");
  auto ema = std::make_unique<MlpVelocity>(mc, init_copy);

  ToyResult r;
  r.init_w2 = toy_sample_w2(*model, config, config.sample_steps, config.sample_shift);

  Rng data_rng = root.fork("data");
  const Tensor data = toy_mixture(config.toy.samples, config.toy, data_rng);
  AdamOptions ao;
  ao.lr = config.lr;
  Adam opt(model->parameters(), ao);
  auto live = model->parameters();
  auto shadow = ema->parameters();
  Rng train = root.fork("train");
  const auto t0 = Clock::now();
  double window = 0;
  std::size_t window_n = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const Tensor x1 = gather_rows(data, draw_indices(config.toy.batch, config.toy.samples, train));
    const FlowBatch batch = make_flow_batch(x1, Tensor(), config.timesteps, train);
    const double loss = train_step(*model, batch, opt);
    ema_update(shadow, live, config.toy.ema);
    if (step == 0) r.first_loss = loss;
    r.last_loss = loss;
    window += loss;
    ++window_n;
    if (log && ((step + 1) % config.eval_every == 0 || step + 1 == config.steps)) {
      const double w2 = toy_sample_w2(*ema, config, config.sample_steps, config.sample_shift);
      log->append(step + 1, {window / static_cast<double>(window_n), w2}, seconds_since(t0));
      window = 0;
      window_n = 0;
    }
  }
  r.final_w2 = toy_sample_w2(*ema, config, config.sample_steps, config.sample_shift);
  r.few_step_s1 = toy_sample_w2(*ema, config, 10, 1.0);
  r.few_step_s17 = toy_sample_w2(*ema, config, 10, 17.0);
  r.model = std::move(ema);
  return r;
}

// ---- video training

namespace {

struct LatentPool {
  Tensor latents;  // [n, T', C, H', W']
  Tensor text;     // [n, D]
};

LatentPool make_latent_pool(const RunConfig& config, std::size_t frames, const CausalVae& vae,
                            const TextEncoderStub& text, std::uint64_t salt) {
  static const char* kKinds[] = {"a camera pan across", "a square moving over", "a slow fade between"};
  std::vector<Tensor> latents;
  std::vector<std::string> prompts;
  for (std::size_t i = 0; i < config.pool; ++i) {
    DatasetSample s{salt * 1000003ULL + config.seed * 7919ULL + i, 0, ""};
    s.prompt = std::string(kKinds[s.id % 3]) + " pattern " + std::to_string(s.id % 17);
    BucketShape shape;
    shape.frames = frames;
    shape.height = config.height;
    shape.width = config.width;
    latents.push_back(vae.encode(render_sample(s, shape)));
    prompts.push_back(s.prompt);
  }
  return {stack(latents), text.encode_batch(prompts)};
}

double validation_loss(VelocityModel& model, const LatentPool& pool, std::uint64_t seed) {
  const std::size_t n = std::min<std::size_t>(4, pool.latents.dim(0));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const Tensor x1 = gather_rows(pool.latents, idx);
  const Tensor cond = gather_rows(pool.text, idx);
  Rng rng = Rng(seed).fork("validation");
  const Tensor x0 = Tensor::randn(x1.shape(), rng);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  const Tensor v = model.velocity(interpolate(x0, x1, t), t, cond);
  return fm_loss(v, velocity_target(x0, x1)).item();
}

}  // namespace

VideoTrainResult run_video_train(const RunConfig& config, MetricsLog* log) {
  config.validate();
  const bool sft = config.preset == Preset::kSft;
  Rng root(config.seed);
  VideoTrainResult r;
  if (!config.init.empty()) {
    r.model = load_as<VideoDit>(config.init, "a video DiT");
  } else if (sft) {
    throw ConfigError("sft needs run.init pointing at a pretrained checkpoint");
  } else {
    Rng init = root.fork("init");
    r.model = std::make_unique<VideoDit>(config.model, init);
  }
  std::unique_ptr<VelocityModel> reference;
  if (sft) reference = decode_checkpoint(encode_checkpoint(*r.model));

  const CausalVae vae;
  const TextEncoderStub text(r.model->cond_dim(), 0x7e47);
  const std::size_t D = r.model->cond_dim();
  LatentPool images, videos;
  if (config.image_batch) images = make_latent_pool(config, 1, vae, text, 1);
  if (config.video_batch) videos = make_latent_pool(config, config.frames, vae, text, 2);
  if (D == 0) throw ConfigError("video presets need model.cond_dim > 0");

  AdamOptions ao;
  ao.lr = config.lr;
  ao.max_grad_norm = 1.0;
  Adam opt(r.model->parameters(), ao);
  Rng train = root.fork("train");
  const auto t0 = Clock::now();
  double window = 0;
  std::size_t window_n = 0;
  const LatentPool& val_pool = config.video_batch ? videos : images;
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<FlowBatch> parts;
    if (config.image_batch) {
      const auto idx = draw_indices(config.image_batch, config.pool, train);
      parts.push_back(make_flow_batch(gather_rows(images.latents, idx), gather_rows(images.text, idx),
                                      config.timesteps, train));
    }
    if (config.video_batch) {
      const auto idx = draw_indices(config.video_batch, config.pool, train);
      parts.push_back(make_flow_batch(gather_rows(videos.latents, idx), gather_rows(videos.text, idx),
                                      config.timesteps, train));
    }
    double loss;
    if (sft) {
      loss = sft_step(*r.model, *reference, parts.back(), opt, config.sft_anchor);
    } else if (parts.size() == 1) {
      loss = train_step(*r.model, parts[0], opt);
    } else {
      loss = train_step_joint(*r.model, parts, opt);
    }
    if (step == 0) r.first_loss = loss;
    r.last_loss = loss;
    window += loss;
    ++window_n;
    if (log && ((step + 1) % config.eval_every == 0 || step + 1 == config.steps)) {
      const double val = validation_loss(*r.model, val_pool, config.seed);
      log->append(step + 1, {window / static_cast<double>(window_n), val}, seconds_since(t0));
      window = 0;
      window_n = 0;
    }
  }
  return r;
}

// ---- VAE adaptation

Tensor block_images(std::size_t n, Rng& rng) {
  static const double kPalette[2][3] = {{0.8, 0.6, 0.3}, {0.25, 0.4, 0.75}};
  constexpr std::size_t S = 16, B = 8;
  std::vector<double> v(n * 3 * S * S);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& base = kPalette[rng.below(2)];
    double global[3];
    for (int c = 0; c < 3; ++c) global[c] = base[c] + 0.06 * rng.normal();
    for (std::size_t bi = 0; bi < S / B; ++bi)
      for (std::size_t bj = 0; bj < S / B; ++bj) {
        double colour[3];
        for (int c = 0; c < 3; ++c) colour[c] = std::clamp(global[c] + 0.04 * rng.normal(), 0.0, 1.0);
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t y = bi * B; y < (bi + 1) * B; ++y)
            for (std::size_t x = bj * B; x < (bj + 1) * B; ++x) v[((i * 3 + c) * S + y) * S + x] = colour[c];
      }
  }
  return Tensor::from({n, 3 * S * S}, std::move(v));
}

double AdaptResult::at(std::size_t step, bool control_run) const {
  for (const auto& p : control_run ? control : swapped)
    if (p.step == step) return p.w2;
  throw ContractError("no adaptation metric at step " + std::to_string(step));
}

namespace {

VaeConfig encoder_config(std::uint64_t seed, const char* which) {
  VaeConfig c;
  c.seed = mix64(seed ^ fnv1a64(which));
  return c;
}

Tensor encode_images(const CausalVae& vae, const Tensor& images) {
  const std::size_t n = images.dim(0);
  std::vector<Tensor> out;
  out.reserve(n);
  const auto v = images.values();
  const std::size_t row = images.numel() / n;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> px(v.begin() + static_cast<long>(i * row), v.begin() + static_cast<long>((i + 1) * row));
    const Tensor lat = vae.encode(Tensor::from({1, 3, 16, 16}, std::move(px)));
    out.push_back(reshape(lat, {lat.numel()}));
  }
  return stack(out);
}

Tensor decode_latents(const CausalVae& vae, const Tensor& latents) {
  const std::size_t n = latents.dim(0);
  const Shape ls = vae.latent_shape({1, 3, 16, 16});
  std::vector<Tensor> out;
  out.reserve(n);
  const std::size_t row = latents.numel() / n;
  const auto v = latents.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(v.begin() + static_cast<long>(i * row), v.begin() + static_cast<long>((i + 1) * row));
    const Tensor px = vae.decode(Tensor::from(ls, std::move(z)));
    out.push_back(reshape(px, {px.numel()}));
  }
  return stack(out);
}

// Mean colour of each 8x8 block, [n, 12].
Tensor block_features(const Tensor& images) {
  constexpr std::size_t S = 16, B = 8, G = S / B;
  const std::size_t n = images.dim(0);
  const auto v = images.values();
  std::vector<double> f(n * 3 * G * G, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x)
          f[((i * 3 + c) * G + y / B) * G + x / B] += v[((i * 3 + c) * S + y) * S + x] / (B * B);
  return Tensor::from({n, 3 * G * G}, std::move(f));
}

// Latents enter the model shifted by their mean and scaled to unit
// variance. The factors are fitted once on the pretraining encoder.
struct LatentNorm {
  std::vector<double> shift;
  double scale = 1.0;

  Tensor apply(const Tensor& z) const {
    std::vector<double> v(z.values().begin(), z.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - shift[i % shift.size()]) / scale;
    return Tensor::from(z.shape(), std::move(v));
  }
  Tensor invert(const Tensor& z) const {
    std::vector<double> v(z.values().begin(), z.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] * scale + shift[i % shift.size()];
    return Tensor::from(z.shape(), std::move(v));
  }
};

LatentNorm fit_norm(const Tensor& latents) {
  const std::size_t n = latents.dim(0), d = latents.numel() / n;
  const auto v = latents.values();
  LatentNorm norm;
  norm.shift.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) norm.shift[j] += v[i * d + j] / static_cast<double>(n);
  double var = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) var += (v[i * d + j] - norm.shift[j]) * (v[i * d + j] - norm.shift[j]);
  norm.scale = std::sqrt(var / static_cast<double>(n * d)) + 1e-12;
  return norm;
}

struct AdaptData {
  Tensor train_latents;  // normalized
  LatentNorm norm;
  Tensor eval_images;
};

AdaptData adapt_data(const RunConfig& config, const CausalVae& vae, const LatentNorm* fixed = nullptr) {
  Rng root(config.seed);
  Rng train_rng = root.fork("adapt-train-images");
  Rng eval_rng = root.fork("adapt-eval-images");
  const Tensor raw = encode_images(vae, block_images(2000, train_rng));
  AdaptData d;
  d.norm = fixed ? *fixed : fit_norm(raw);
  d.train_latents = d.norm.apply(raw);
  d.eval_images = block_images(config.adapt.eval_samples, eval_rng);
  return d;
}

double adapt_metric(VelocityModel& model, const CausalVae& vae, const LatentNorm& norm, const Tensor& real,
                    const RunConfig& config) {
  Rng noise = Rng(config.seed).fork("adapt-eval-noise");
  const std::size_t dim = vae.config().channels * 4;
  const Tensor x0 = Tensor::randn({config.adapt.eval_samples, dim}, noise);
  const Tensor z =
      euler_sample(model, x0, make_schedule(config.adapt.eval_steps, 1.0), GuidanceConfig{1.0, Tensor()}, Tensor());
  return eval_w2(block_features(decode_latents(vae, norm.invert(z))), block_features(real));
}

void adapt_train(MlpVelocity& model, Adam& opt, const Tensor& latents, std::size_t steps, std::size_t batch,
                 const TimestepSampler& ts, Rng& rng) {
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor x1 = gather_rows(latents, draw_indices(batch, latents.dim(0), rng));
    train_step(model, make_flow_batch(x1, Tensor(), ts, rng), opt);
  }
}

MlpConfig adapt_mlp(const RunConfig& config, const CausalVae& vae) {
  MlpConfig mc;
  mc.data_dim = vae.config().channels * 4;
  mc.hidden = config.adapt.hidden;
  mc.depth = 3;
  return mc;
}

}  // namespace

void pretrain_adaptation_base(const RunConfig& config, const std::filesystem::path& checkpoint) {
  config.validate();
  const CausalVae vae_a(encoder_config(config.seed, "encoder-a"));
  const AdaptData data = adapt_data(config, vae_a);
  Rng root(config.seed);
  Rng init = root.fork("adapt-init");
  MlpVelocity model(adapt_mlp(config, vae_a), init);
  AdamOptions ao;
  ao.lr = config.lr;
  Adam opt(model.parameters(), ao);
  Rng rng = root.fork("adapt-pretrain");
  adapt_train(model, opt, data.train_latents, config.adapt.pretrain_steps, config.adapt.batch, config.timesteps,
              rng);
  if (checkpoint.has_parent_path()) std::filesystem::create_directories(checkpoint.parent_path());
  save_checkpoint(checkpoint, model);
}

AdaptResult run_vae_adaptation(const RunConfig& config, const std::filesystem::path& checkpoint, MetricsLog* log) {
  config.validate();
  auto base = load_as<MlpVelocity>(checkpoint, "a latent MLP");
  const CausalVae vae_a(encoder_config(config.seed, "encoder-a"));
  const CausalVae vae_b(encoder_config(config.seed, "encoder-b"));
  if (base->config().data_dim != vae_a.config().channels * 4)
    throw ConfigError("checkpoint latent width does not match the encoder");
  const AdaptData a = adapt_data(config, vae_a);
  const AdaptData b = adapt_data(config, vae_b, &a.norm);
  const Tensor& real = a.eval_images;

  AdaptResult r;
  r.pre_swap = adapt_metric(*base, vae_a, a.norm, real, config);

  auto run = [&](const CausalVae& vae, const AdaptData& data, const char* stream) {
    auto model = load_as<MlpVelocity>(checkpoint, "a latent MLP");
    AdamOptions ao;
    ao.lr = config.lr;
    Adam opt(model->parameters(), ao);
    Rng rng = Rng(config.seed).fork(stream);
    std::vector<AdaptPoint> points;
    std::size_t done = 0;
    for (auto cp : config.adapt.checkpoints) {
      adapt_train(*model, opt, data.train_latents, cp - done, config.adapt.batch, config.timesteps, rng);
      done = cp;
      points.push_back({cp, adapt_metric(*model, vae, data.norm, real, config)});
    }
    return points;
  };
  const auto t0 = Clock::now();
  r.swapped = run(vae_b, b, "adapt-swapped");
  if (config.adapt.control) r.control = run(vae_a, a, "adapt-control");
  if (log)
    for (std::size_t i = 0; i < r.swapped.size(); ++i)
      log->append(r.swapped[i].step, {r.swapped[i].w2, r.control.empty() ? r.pre_swap : r.control[i].w2},
                  seconds_since(t0));
  return r;
}

// ---- RLHF

RlhfRunResult run_rlhf(const RunConfig& config, MetricsLog* log) {
  config.validate();
  Rng root(config.seed);
  std::unique_ptr<VelocityModel> model;
  if (!config.init.empty()) {
    if (!std::filesystem::exists(config.init)) throw ConfigError("missing checkpoint " + config.init);
    model = load_checkpoint(config.init);
  } else {
    Rng init = root.fork("init");
    model = std::make_unique<MlpVelocity>(MlpConfig{2, 32, 3, 4, 0}, init);
  }
  const bool video = dynamic_cast<VideoDit*>(model.get()) != nullptr;

  RlhfRunResult r;
  const auto t0 = Clock::now();
  Rng rng = root.fork("rlhf");
  double window = 0;
  std::size_t window_n = 0;

  if (!video) {
    if (model->cond_dim() != 0) throw ConfigError("toy rlhf expects an unconditional MLP");
    const std::size_t dim = dynamic_cast<MlpVelocity&>(*model).config().data_dim;
    std::vector<double> target(dim, 0.0);
    target[0] = 1.5;
    if (dim > 1) target[1] = -1.0;
    const TargetMeanReward reward(target);
    const RandomMlpReward probe(dim, 16, config.seed ^ 0x9e37);
    RlhfConfig rc = config.rlhf;
    rc.target = RewardTarget::kFullSample;
    RlhfTrainer trainer(*model, reward, rc);
    Rng probe_rng = root.fork("probe-noise");
    const Tensor probe_noise = Tensor::randn({64, dim}, probe_rng);
    for (std::size_t step = 0; step < config.steps; ++step) {
      const double rew = trainer.step({dim}, Tensor(), rng).reward;
      r.rewards.push_back(rew);
      window += rew;
      ++window_n;
      if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) {
        const Tensor x = euler_sample(*model, probe_noise, make_schedule(rc.steps, rc.shift),
                                      GuidanceConfig{1.0, Tensor()}, Tensor());
        const Tensor scores = probe.score(x);
        const double p = mean_of({scores.values().begin(), scores.values().end()}, 0, scores.numel());
        r.probe.push_back(p);
        if (log) log->append(step + 1, {window / static_cast<double>(window_n), p}, seconds_since(t0));
        window = 0;
        window_n = 0;
      }
    }
  } else {
    const CausalVae vae;
    RlhfConfig rc = config.rlhf;
    rc.target = RewardTarget::kFirstFrame;
    const SmoothnessReward reward;
    RlhfTrainer trainer(*model, reward, rc, &vae);
    const Shape ls = vae.latent_shape({rc.frames_short, 3, config.height, config.width});
    const std::size_t D = model->cond_dim();
    Tensor cond;
    if (D) {
      const TextEncoderStub text(D, 0x7e47);
      std::vector<std::string> prompts(rc.batch, "a smooth calm scene");
      cond = text.encode_batch(prompts);
    }
    for (std::size_t step = 0; step < config.steps; ++step) {
      const double rew = trainer.step(ls, cond, rng).reward;
      r.rewards.push_back(rew);
      window += rew;
      ++window_n;
      if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) {
        r.probe.push_back(0.0);
        if (log) log->append(step + 1, {window / static_cast<double>(window_n), 0.0}, seconds_since(t0));
        window = 0;
        window_n = 0;
      }
    }
  }
  const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(20, r.rewards.size() / 2));
  r.first_mean = mean_of(r.rewards, 0, w);
  r.last_mean = mean_of(r.rewards, r.rewards.size() - w, r.rewards.size());
  return r;
}

// ---- sampling and sample files

Tensor sample_checkpoint(const std::filesystem::path& checkpoint, const RunConfig& config, std::size_t n,
                         const Shape& sample_shape) {
  if (!std::filesystem::exists(checkpoint)) throw ConfigError("missing checkpoint " + checkpoint.string());
  auto model = load_checkpoint(checkpoint);
  Shape shape{n};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Rng rng = Rng(config.seed).fork("sample");
  const Tensor x0 = Tensor::randn(shape, rng);
  Tensor cond;
  double scale = 1.0;
  if (const std::size_t D = model->cond_dim()) {
    const TextEncoderStub text(D, 0x7e47);
    std::vector<std::string> prompts;
    for (std::size_t i = 0; i < n; ++i) prompts.push_back("sample prompt " + std::to_string(i));
    cond = text.encode_batch(prompts);
    scale = config.cfg_scale;
  }
  return euler_sample(*model, x0, make_schedule(config.sample_steps, config.sample_shift),
                      GuidanceConfig{scale, Tensor()}, cond);
}

void write_samples_csv(const std::filesystem::path& path, const Tensor& samples) {
  if (samples.rank() == 0) throw ShapeError("write_samples_csv: need a sample axis");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# shape";
  for (std::size_t i = 0; i < samples.rank(); ++i) out << (i ? "," : " ") << samples.dim(i);
  out << "\n";
  const std::size_t n = samples.dim(0), row = samples.numel() / std::max<std::size_t>(n, 1);
  const auto v = samples.values();
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < row; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", v[i * row + j]);
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
}

Tensor read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::vector<double> values;
  Shape shape;
  std::size_t rows = 0, width = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# shape ", 0) == 0) {
        std::stringstream dims(line.substr(8));
        std::string d;
        while (std::getline(dims, d, ',')) shape.push_back(parse_int<std::size_t>("shape", d));
      }
      continue;
    }
    std::stringstream cells(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(cells, cell, ',')) {
      try {
        values.push_back(parse_double("value", cell));
      } catch (const ConfigError&) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
      ++count;
    }
    if (rows == 0) width = count;
    if (count != width) throw IoError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    ++rows;
  }
  if (rows == 0) throw IoError(path.string() + ": no samples");
  if (shape.empty() || shape[0] != rows) shape = {rows, width};
  std::size_t total = 1;
  for (auto d : shape) total *= d;
  if (total != values.size()) throw IoError(path.string() + ": shape header disagrees with the data");
  return Tensor::from(shape, std::move(values));
}

std::filesystem::path run_directory(const std::string& name) {
  const char* root = std::getenv("VIDFLOW_RUN_ROOT");
  return std::filesystem::path(root && *root ? root : "runs") / name;
}

}  // namespace vf
