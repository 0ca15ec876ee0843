// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vidflow/curation.hpp"
#include "vidflow/error.hpp"
#include "vidflow/synth.hpp"

using namespace vf;

#ifndef VIDFLOW_GOLDEN_DIR
#error "VIDFLOW_GOLDEN_DIR must be defined"
#endif

namespace {

std::vector<double> unit(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

std::vector<double> jitter(const std::vector<double>& base, double eps, Rng& rng) {
  std::vector<double> v = base;
  for (double& x : v) x += eps * rng.normal();
  return unit(v);
}

Tensor frame(const Tensor& video, std::size_t f) { return reshape(synth::frame_range(video, f, f + 1), {3, video.dim(2), video.dim(3)}); }

}  // namespace

TEST_CASE("scene cuts") {
  CHECK(detect_scene_cuts(synth::constant_video(12, 8, 8, {0.2, 0.4, 0.6}), 0.05).empty());
  CHECK(detect_scene_cuts(synth::hard_cut(16, 8, 8, 7), 0.1) == std::vector<std::size_t>{7});
  // A 20-frame linear crossfade: each step is above threshold but similar
  // to its neighbours.
  auto fade = synth::crossfade(30, 8, 8, 5, 20);
  auto d = frame_differences(fade);
  CHECK(d[10] > 0.05);
  CHECK(detect_scene_cuts(fade, 0.05).empty());
  CHECK_THROWS_AS(detect_scene_cuts(synth::constant_video(1, 8, 8, {0, 0, 0}), 0.1), ContractError);

  // Shift equivariance: prepending j copies of the first frame.
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> shots;
    std::size_t frames = 0;
    std::vector<std::size_t> expect;
    for (int s = 0; s < 3; ++s) {
      const std::size_t len = 4 + rng.below(5);
      shots.push_back(synth::constant_video(len, 8, 8, {rng.uniform(), rng.uniform(), rng.uniform()}));
      if (s > 0) expect.push_back(frames);
      frames += len;
    }
    auto video = synth::concat_videos(shots);
    auto base = detect_scene_cuts(video, 0.01);
    const std::size_t j = 1 + rng.below(5);
    auto pre = synth::concat_videos({synth::concat_videos(std::vector<Tensor>(j, synth::frame_range(video, 0, 1))), video});
    auto shifted = detect_scene_cuts(pre, 0.01);
    REQUIRE(shifted.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(shifted[i] == base[i] + j);
  }
}

TEST_CASE("clip splitting") {
  CHECK(split_clips({}, 100, 10.0) == std::vector<Span>{{0, 60}, {60, 100}});
  CHECK(split_clips({}, 20, 10.0).empty());
  CHECK(split_clips({}, 60, 10.0) == std::vector<Span>{{0, 60}});
  CHECK(split_clips({30, 40}, 100, 10.0) == std::vector<Span>{{0, 30}, {40, 100}});
  CHECK(split_clips({}, 130, 10.0) == std::vector<Span>{{0, 60}, {60, 120}});
  CHECK_THROWS_AS(split_clips({40, 30}, 100, 10.0), ContractError);
}

TEST_CASE("laplacian blur score") {
  CHECK(laplacian_blur_score(reshape(synth::constant_video(1, 6, 6, {0.3, 0.3, 0.3}), {3, 6, 6})) == 0.0);
  auto dot = Tensor::zeros({3, 5, 5});
  for (std::size_t c = 0; c < 3; ++c) dot.mutable_values()[c * 25 + 12] = 1.0;
  // Interior Laplacian: -4 at the centre, 1 at four neighbours, 0 at corners.
  const double m = 0.0, var = (16.0 + 4.0) / 9.0 - m * m;
  CHECK(std::abs(laplacian_blur_score(dot) - var) < 1e-12);
  auto board = synth::checkerboard(16, 16, 2);
  double prev = laplacian_blur_score(board);
  for (double sigma : {0.5, 1.0, 2.0, 3.0}) {
    const double s = laplacian_blur_score(synth::gaussian_blur(board, sigma));
    CHECK(s < prev);
    prev = s;
  }
  CHECK_THROWS_AS(laplacian_blur_score(Tensor::zeros({3, 2, 5})), ContractError);
}

TEST_CASE("block matching flow") {
  auto tex = synth::texture(32, 32, 5);
  auto still = estimate_flow(tex, tex);
  for (double v : still.dx) CHECK(v == 0.0);
  for (double v : still.dy) CHECK(v == 0.0);
  auto moved = estimate_flow(tex, synth::shift_frame(tex, 3, 0));
  for (double v : moved.dx) CHECK(v == 3.0);
  for (double v : moved.dy) CHECK(v == 0.0);
  auto up = estimate_flow(tex, synth::shift_frame(tex, -1, -2));
  CHECK(up.dx[100] == -1.0);
  CHECK(up.dy[100] == -2.0);
  auto far = estimate_flow(tex, synth::shift_frame(tex, 7, 0), 8, 4);
  for (double v : far.dx) CHECK(std::abs(v) <= 4.0);
  CHECK_THROWS_AS(estimate_flow(tex, synth::texture(32, 24, 5)), ShapeError);
  CHECK_THROWS_AS(estimate_flow(synth::texture(30, 32, 5), synth::texture(30, 32, 5)), ShapeError);
}

namespace {

FlowField field(std::size_t h, std::size_t w, const std::function<std::array<double, 2>(double, double)>& f) {
  FlowField out{h, w, std::vector<double>(h * w), std::vector<double>(h * w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto v = f(y + 0.5 - h / 2.0, x + 0.5 - w / 2.0);
      out.dx[y * w + x] = v[0];
      out.dy[y * w + x] = v[1];
    }
  return out;
}

}  // namespace

TEST_CASE("background fit") {
  auto trans = field(32, 32, [](double, double) { return std::array<double, 2>{2.0, 0.0}; });
  auto fit = fit_background_transform(trans);
  CHECK(!fit.singular);
  CHECK(std::abs(fit.params[0] - 2.0) < 1e-12);
  for (int i : {1, 2, 3, 4, 5}) CHECK(std::abs(fit.params[i]) < 1e-12);
  for (bool b : fit.inlier) CHECK(b);

  // Rotation by a small angle about the centre plus scale.
  const double a = 0.05, s = 0.02;
  auto rot = field(40, 48, [&](double v, double u) {
    return std::array<double, 2>{s * u - a * v + 0.3, a * u + s * v - 0.7};
  });
  auto rf = fit_background_transform(rot);
  const std::array<double, 6> expect{0.3, s, -a, -0.7, a, s};
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(rf.params[i] - expect[i]) < 1e-6);

  // Background translation with a contradicting 10% foreground patch.
  auto mixed = field(40, 40, [](double v, double u) {
    const bool fg = u > 4 && u < 17 && v > 4 && v < 17;
    return fg ? std::array<double, 2>{-5.0, 3.0} : std::array<double, 2>{1.5, -0.5};
  });
  auto mf = fit_background_transform(mixed);
  CHECK(std::abs(mf.params[0] - 1.5) < 0.05 * 1.5);
  CHECK(std::abs(mf.params[3] + 0.5) < 0.05 * 0.5);
  std::size_t outliers = std::count(mf.inlier.begin(), mf.inlier.end(), false);
  CHECK(outliers > 0);
  CHECK(outliers < mf.inlier.size() / 5);

  FlowField tiny{2, 2, std::vector<double>(4, 1.0), std::vector<double>(4, 0.0)};
  auto sf = fit_background_transform(tiny, 4);
  CHECK(sf.singular);
  CHECK(sf.params == std::array<double, 6>{});
}

TEST_CASE("motion scores on fixtures") {
  auto zero = field(16, 16, [](double, double) { return std::array<double, 2>{0, 0}; });
  auto zs = motion_scores(zero, fit_background_transform(zero));
  CHECK(zs.fg == 0.0);
  CHECK(zs.bg == 0.0);
  CHECK(zs.pretrain == 0.0);
  CHECK(zs.post == 0.0);

  auto panv = synth::pan(6, 32, 32, 2, 0, 7);
  auto pm = clip_motion(panv, 0, 6, 1);
  CHECK(pm.fg < 1e-9);
  CHECK(std::abs(pm.bg - 2.0) < 1e-9);
  CHECK(std::abs(pm.pretrain - 1.0) < 1e-9);
  CHECK(pm.post < pm.pretrain);

  auto sq = synth::moving_square(6, 64, 64, 16, 1, 9);
  auto sm = clip_motion(sq, 0, 6, 1);
  CHECK(sm.bg < 0.1);
  CHECK(std::abs(sm.fg - 1.0) < 0.25);
  CHECK(sm.post > sm.pretrain);

  // post >= pretrain iff fg >= bg, for w_fg = 0.7.
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double fg = rng.uniform(), bg = rng.uniform();
    const double pre = 0.5 * (fg + bg), post = 0.7 * fg + 0.3 * bg;
    CHECK((post >= pre) == (fg >= bg));
  }
}

TEST_CASE("kmeans dedup") {
  Rng rng(4);
  std::vector<std::vector<double>> same(12, unit({1, 2, 3, 4}));
  for (std::size_t k : {1u, 2u, 4u}) CHECK(kmeans_dedup(same, k, 0.95).kept.size() == 1);
  CHECK_THROWS_AS(kmeans_dedup(same, 0, 0.95), ConfigError);
  CHECK_THROWS_AS(kmeans_dedup(same, 13, 0.95), ConfigError);

  const auto ea = unit({1, 0, 0, 0, 0, 0}), eb = unit({0, 0, 0, 1, 0, 0});
  std::vector<std::vector<double>> two;
  for (int i = 0; i < 10; ++i) two.push_back(jitter(ea, 1e-3, rng));
  for (int i = 0; i < 10; ++i) two.push_back(jitter(eb, 1e-3, rng));
  auto res = kmeans_dedup(two, 2, 0.95);
  CHECK(res.kept.size() == 2);
  CHECK(res.assignment[0] != res.assignment[10]);

  // Cluster A ten times tighter than B: A's ceiling must be the stricter one.
  std::vector<std::vector<double>> dense;
  for (int i = 0; i < 10; ++i) dense.push_back(jitter(ea, 1e-3, rng));
  for (int i = 0; i < 10; ++i) dense.push_back(jitter(eb, 1e-2, rng));
  auto dr = kmeans_dedup(dense, 2, 0.95);
  const auto ca = dr.assignment[0], cb = dr.assignment[10];
  CHECK(dr.density[ca] > dr.density[cb]);
  CHECK(dr.threshold[ca] < dr.threshold[cb]);
  CHECK(dr.threshold[ca] == doctest::Approx(0.85));

  std::vector<std::vector<double>> spread;
  for (int i = 0; i < 30; ++i) spread.push_back(jitter(ea, 0.5, rng));
  auto all = kmeans_dedup(spread, 3, 2.0);
  std::vector<std::size_t> idx(30);
  std::iota(idx.begin(), idx.end(), 0);
  CHECK(all.kept == idx);
  auto some = kmeans_dedup(spread, 3, 0.9);
  CHECK(std::is_sorted(some.kept.begin(), some.kept.end()));
}

TEST_CASE("pairwise dedup") {
  std::vector<std::vector<double>> distinct{unit({1, 0, 0}), unit({0, 1, 0}), unit({1, 1, 0}), unit({0, 1, 1})};
  CHECK(pairwise_dedup(distinct, 1.0).size() == 4);
  std::vector<std::vector<double>> dup{unit({1, 2}), unit({1, 2}), unit({2, -1})};
  CHECK(pairwise_dedup(dup, 0.9) == std::vector<std::size_t>{0, 2});
  // a.b and b.c at cos(30 deg), a.c at cos(60 deg), threshold 0.8.
  const double r = std::acos(-1.0) / 6;
  std::vector<std::vector<double>> chain{{1, 0}, {std::cos(r), std::sin(r)}, {std::cos(2 * r), std::sin(2 * r)}};
  CHECK(pairwise_dedup(chain, 0.8) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("buckets") {
  CHECK(assign_bucket(1920, 1080, 5).aspect_name() == "16:9");
  CHECK(assign_bucket(1000, 1000, 5).aspect_name() == "1:1");
  CHECK(assign_bucket(1080, 1920, 5).aspect_name() == "9:16");
  CHECK(assign_bucket(640, 480, 5).aspect_name() == "4:3");
  auto b = assign_bucket(1920, 1080, 5.7);
  CHECK(b.duration_s == 5);
  CHECK(b.truncate_s == 5.0);
  CHECK(assign_bucket(100, 100, 30).duration_s == 8);
  CHECK(aspect_table().size() == 7);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double w = 10 + 2000 * rng.uniform(), h = 10 + 2000 * rng.uniform(), k = 0.01 + 50 * rng.uniform();
    CHECK(assign_bucket(w, h, 3).aspect == assign_bucket(k * w, k * h, 3).aspect);
  }
  for (std::size_t a = 0; a < 7; ++a)
    for (std::size_t d = 1; d <= 8; ++d) {
      CHECK(bucket_max_batch(a, d) >= 1);
      if (d > 1) CHECK(bucket_max_batch(a, d) <= bucket_max_batch(a, d - 1));
    }
}

TEST_CASE("top percentile selection") {
  std::vector<ClipRecord> recs(100);
  for (std::size_t i = 0; i < 100; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    recs[i].id = buf;
    recs[i].aesthetic = static_cast<double>(i);
    recs[i].motion.post = static_cast<double>(i) * 2;
  }
  auto sel = select_top_percentile(recs, 0.1);
  CHECK(sel.size() == 10);
  CHECK(sel.front() == 90);
  CHECK(select_top_percentile(recs, 1.0).size() == 100);
  CHECK_THROWS_AS(select_top_percentile(recs, 0.0), ConfigError);

  // Ties break by id.
  for (auto& r : recs) r.aesthetic = r.motion.post = 1.0;
  auto tied = select_top_percentile(recs, 0.05);
  CHECK(tied == std::vector<std::size_t>{0, 1, 2, 3, 4});

  // Independent scores: the intersection of two top-10% sets is
  // hypergeometric with mean m^2 / n.
  Rng rng(6);
  const std::size_t n = 10000, m = 1000;
  std::vector<ClipRecord> big(n);
  for (std::size_t i = 0; i < n; ++i) {
    big[i].id = std::to_string(i);
    big[i].aesthetic = rng.uniform();
    big[i].motion.post = rng.uniform();
  }
  const double mean = double(m) * m / n;
  const double var = mean * (1 - double(m) / n) * double(n - m) / (n - 1);
  const double got = static_cast<double>(select_top_percentile(big, 0.1).size());
  CHECK(std::abs(got - mean) < 3 * std::sqrt(var));
}

TEST_CASE("pipeline and golden manifest") {
  const auto dir = std::filesystem::temp_directory_path() / "vidflow_curation_corpus";
  std::filesystem::remove_all(dir);
  synth::write_fixture_corpus(dir);
  auto sources = load_corpus(dir);
  REQUIRE(sources.size() == 4);
  CurationConfig cfg;
  auto records = run_curation(sources, cfg, StubAestheticScorer{});
  std::ostringstream out;
  write_manifest(out, records);

  // Records are sorted by id and carry the schema version on every line.
  for (std::size_t i = 1; i < records.size(); ++i) CHECK(records[i - 1].id < records[i].id);
  std::istringstream lines(out.str());
  std::string line;
  while (std::getline(lines, line)) CHECK(line.rfind("{\"schema_version\":1,", 0) == 0);

  // Every clip span lies inside a shot and lasts 3 to 6 seconds.
  for (const auto& r : records) {
    CHECK(r.span.length() >= 12);
    CHECK(r.span.length() <= 24);
    CHECK(r.bucket.duration_s >= 3);
  }

  const auto golden = std::filesystem::path(VIDFLOW_GOLDEN_DIR) / "manifest.jsonl";
  if (const char* regen = std::getenv("VIDFLOW_REGEN_GOLDEN"); regen && std::string(regen) == "1") {
    std::ofstream(golden) << out.str();
  }
  std::ifstream in(golden);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << golden.string());
  std::stringstream expect;
  expect << in.rdbuf();
  CHECK(out.str() == expect.str());

  // Running twice gives the same manifest.
  std::ostringstream again;
  write_manifest(again, run_curation(load_corpus(dir), cfg, StubAestheticScorer{}));
  CHECK(again.str() == out.str());
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_corpus(dir), IoError);
}
