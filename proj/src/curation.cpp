// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/curation.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "vidflow/error.hpp"
#include "vidflow/rng.hpp"
#include "vidflow/vae.hpp"

namespace vf {

namespace {

void check_video(const Tensor& video, const char* who) {
  if (video.rank() != 4 || video.dim(1) != 3) {
    throw ShapeError(std::string(who) + ": expected video [F, 3, H, W], got " + to_string(video.shape()));
  }
}

void check_frame(const Tensor& frame, const char* who) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw ShapeError(std::string(who) + ": expected frame [3, H, W], got " + to_string(frame.shape()));
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor frame_of(const Tensor& video, std::size_t f) {
  const std::size_t per = video.numel() / video.dim(0);
  return Tensor::from({3, video.dim(2), video.dim(3)},
                      {video.values().begin() + static_cast<long>(f * per),
                       video.values().begin() + static_cast<long>((f + 1) * per)});
}

double round6(double x) { return std::round(x * 1e6) / 1e6; }

}  // namespace

std::vector<double> frame_differences(const Tensor& video) {
  check_video(video, "frame_differences");
  const std::size_t F = video.dim(0), P = video.dim(2) * video.dim(3);
  const auto v = video.values();
  std::vector<double> out;
  for (std::size_t f = 0; f + 1 < F; ++f) {
    double s = 0;
    for (std::size_t p = 0; p < P; ++p) {
      double d2 = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = v[((f + 1) * 3 + c) * P + p] - v[(f * 3 + c) * P + p];
        d2 += d * d;
      }
      s += std::sqrt(d2);
    }
    out.push_back(s / static_cast<double>(P));
  }
  return out;
}

std::vector<std::size_t> detect_scene_cuts(const Tensor& video, double threshold, double ratio) {
  check_video(video, "detect_scene_cuts");
  if (video.dim(0) < 2) throw ContractError("detect_scene_cuts: need at least 2 frames");
  const auto d = frame_differences(video);
  std::vector<std::size_t> cuts;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(d[i] > threshold)) continue;
    std::vector<double> nb;
    for (std::size_t j = i >= 2 ? i - 2 : 0; j <= i + 2 && j < d.size(); ++j)
      if (j != i) nb.push_back(d[j]);
    if (d[i] > ratio * median(nb)) cuts.push_back(i + 1);
  }
  return cuts;
}

std::vector<Span> split_clips(const std::vector<std::size_t>& cuts, std::size_t total_frames, double fps,
                              double min_s, double max_s) {
  if (!(fps > 0) || !(min_s > 0) || !(max_s >= min_s)) throw ConfigError("split_clips: bad fps or durations");
  const auto max_len = static_cast<std::size_t>(std::floor(max_s * fps + 1e-9));
  const auto min_len = static_cast<std::size_t>(std::ceil(min_s * fps - 1e-9));
  if (max_len == 0) throw ConfigError("split_clips: max_s shorter than one frame");
  std::vector<std::size_t> bounds{0};
  for (auto c : cuts) {
    if (c <= bounds.back() || c >= total_frames) throw ContractError("split_clips: cuts must be increasing and inside the video");
    bounds.push_back(c);
  }
  bounds.push_back(total_frames);
  std::vector<Span> out;
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    std::size_t pos = bounds[s];
    const std::size_t end = bounds[s + 1];
    while (end - pos >= max_len) {
      out.push_back({pos, pos + max_len});
      pos += max_len;
    }
    if (end > pos && end - pos >= min_len) out.push_back({pos, end});
  }
  return out;
}

std::vector<double> luminance(const Tensor& frame) {
  check_frame(frame, "luminance");
  const std::size_t P = frame.dim(1) * frame.dim(2);
  const auto v = frame.values();
  std::vector<double> out(P);
  for (std::size_t p = 0; p < P; ++p) out[p] = 0.299 * v[p] + 0.587 * v[P + p] + 0.114 * v[2 * P + p];
  return out;
}

double laplacian_blur_score(const Tensor& frame) {
  check_frame(frame, "laplacian_blur_score");
  const std::size_t H = frame.dim(1), W = frame.dim(2);
  if (H < 3 || W < 3) throw ContractError("laplacian_blur_score: frame smaller than 3x3");
  const auto y = luminance(frame);
  double s = 0, s2 = 0;
  const double n = static_cast<double>((H - 2) * (W - 2));
  for (std::size_t i = 1; i + 1 < H; ++i)
    for (std::size_t j = 1; j + 1 < W; ++j) {
      const double l = y[(i - 1) * W + j] + y[(i + 1) * W + j] + y[i * W + j - 1] + y[i * W + j + 1] - 4 * y[i * W + j];
      s += l;
      s2 += l * l;
    }
  const double m = s / n;
  return std::max(0.0, s2 / n - m * m);
}

double StubAestheticScorer::score(const Tensor& frame) const {
  const auto y = luminance(frame);
  double m = 0, v = 0;
  for (double p : y) m += p;
  m /= static_cast<double>(y.size());
  for (double p : y) v += (p - m) * (p - m);
  const double contrast = std::sqrt(v / static_cast<double>(y.size()));
  return contrast + 0.5 * std::log1p(1000.0 * laplacian_blur_score(frame));
}

FrameEmbedder::FrameEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), proj_(dim * 48) {
  if (dim == 0) throw ConfigError("embedder dim must be positive");
  Rng rng(seed);
  for (auto& p : proj_) p = rng.normal();
}

std::vector<double> FrameEmbedder::embed(const Tensor& video, std::size_t begin, std::size_t end) const {
  check_video(video, "embed");
  const std::size_t H = video.dim(2), W = video.dim(3);
  if (H < 4 || W < 4) throw ShapeError("embed: frames must be at least 4x4");
  if (begin >= end || end > video.dim(0)) throw ContractError("embed: bad frame range");
  const auto v = video.values();
  std::vector<double> pooled(48, 0.0);
  for (std::size_t f = begin; f < end; ++f)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          pooled[c * 16 + (y * 4 / H) * 4 + x * 4 / W] += v[((f * 3 + c) * H + y) * W + x];
        }
  const double cell = static_cast<double>(end - begin) * static_cast<double>(H * W) / 16.0;
  for (auto& p : pooled) p = p / cell - 0.5;
  std::vector<double> out(dim_, 0.0);
  double norm = 0;
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < 48; ++j) out[i] += proj_[i * 48 + j] * pooled[j];
    norm += out[i] * out[i];
  }
  norm = std::sqrt(norm);
  if (norm > 0)
    for (auto& o : out) o /= norm;
  return out;
}

FlowField estimate_flow(const Tensor& frame_a, const Tensor& frame_b, std::size_t block, std::size_t radius) {
  check_frame(frame_a, "estimate_flow");
  if (frame_a.shape() != frame_b.shape()) {
    throw ShapeError("estimate_flow: frame shapes " + to_string(frame_a.shape()) + " and " +
                     to_string(frame_b.shape()) + " differ");
  }
  const std::size_t H = frame_a.dim(1), W = frame_a.dim(2);
  if (block == 0 || H % block != 0 || W % block != 0) {
    throw ShapeError("estimate_flow: " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by block " +
                     std::to_string(block));
  }
  const auto a = luminance(frame_a), b = luminance(frame_b);
  const long r = static_cast<long>(radius);
  std::vector<std::pair<long, long>> cand;  // (dy, dx)
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) cand.emplace_back(dy, dx);
  std::stable_sort(cand.begin(), cand.end(), [](auto p, auto q) {
    return std::abs(p.first) + std::abs(p.second) < std::abs(q.first) + std::abs(q.second);
  });
  FlowField out{H, W, std::vector<double>(H * W), std::vector<double>(H * W)};
  const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
  for (std::size_t by = 0; by < H; by += block)
    for (std::size_t bx = 0; bx < W; bx += block) {
      double best = std::numeric_limits<double>::infinity();
      std::pair<long, long> arg{0, 0};
      for (auto [dy, dx] : cand) {
        double sad = 0;
        for (std::size_t y = by; y < by + block && sad < best; ++y) {
          const std::size_t yy = static_cast<std::size_t>(((static_cast<long>(y) + dy) % Hl + Hl) % Hl);
          for (std::size_t x = bx; x < bx + block; ++x) {
            const std::size_t xx = static_cast<std::size_t>(((static_cast<long>(x) + dx) % Wl + Wl) % Wl);
            sad += std::abs(a[y * W + x] - b[yy * W + xx]);
          }
        }
        if (sad < best) {
          best = sad;
          arg = {dy, dx};
        }
      }
      for (std::size_t y = by; y < by + block; ++y)
        for (std::size_t x = bx; x < bx + block; ++x) {
          out.dy[y * W + x] = static_cast<double>(arg.first);
          out.dx[y * W + x] = static_cast<double>(arg.second);
        }
    }
  return out;
}

std::array<double, 2> BackgroundFit::predict(double y, double x, std::size_t height, std::size_t width) const {
  const double u = x + 0.5 - static_cast<double>(width) / 2, v = y + 0.5 - static_cast<double>(height) / 2;
  return {params[0] + params[1] * u + params[2] * v, params[3] + params[4] * u + params[5] * v};
}

namespace {

/// Least squares on the listed samples; returns false when rank deficient.
bool affine_lsq(const FlowField& flow, const BackgroundFit& fit, const std::vector<std::size_t>& use,
                std::array<double, 6>& params) {
  if (use.size() < 3) return false;
  Eigen::MatrixXd A(use.size(), 3);
  Eigen::VectorXd bx(use.size()), by(use.size());
  for (std::size_t r = 0; r < use.size(); ++r) {
    const std::size_t y = fit.sample_y[use[r]], x = fit.sample_x[use[r]];
    A(r, 0) = 1.0;
    A(r, 1) = static_cast<double>(x) + 0.5 - static_cast<double>(flow.width) / 2;
    A(r, 2) = static_cast<double>(y) + 0.5 - static_cast<double>(flow.height) / 2;
    bx(r) = flow.at_dx(y, x);
    by(r) = flow.at_dy(y, x);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < 3) return false;
  const Eigen::Vector3d px = qr.solve(bx), py = qr.solve(by);
  params = {px(0), px(1), px(2), py(0), py(1), py(2)};
  return true;
}

std::vector<double> residuals(const FlowField& flow, const BackgroundFit& fit) {
  std::vector<double> res(fit.sample_y.size());
  for (std::size_t i = 0; i < res.size(); ++i) {
    const auto p = fit.predict(static_cast<double>(fit.sample_y[i]), static_cast<double>(fit.sample_x[i]),
                               flow.height, flow.width);
    res[i] = std::hypot(flow.at_dx(fit.sample_y[i], fit.sample_x[i]) - p[0],
                        flow.at_dy(fit.sample_y[i], fit.sample_x[i]) - p[1]);
  }
  return res;
}

}  // namespace

BackgroundFit fit_background_transform(const FlowField& flow, std::size_t step, double inlier_tol) {
  if (step == 0) throw ConfigError("fit_background_transform: step must be positive");
  BackgroundFit fit;
  for (std::size_t y = step / 2; y < flow.height; y += step)
    for (std::size_t x = step / 2; x < flow.width; x += step) {
      fit.sample_y.push_back(y);
      fit.sample_x.push_back(x);
    }
  const std::size_t n = fit.sample_y.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (n < 4 || !affine_lsq(flow, fit, all, fit.params)) {
    fit.singular = true;
    fit.params = {};
  } else {
    auto res = residuals(flow, fit);
    std::vector<std::size_t> order = all;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return res[a] < res[b]; });
    order.resize(n - n / 5);
    std::sort(order.begin(), order.end());
    if (!affine_lsq(flow, fit, order, fit.params)) {
      fit.singular = true;
      fit.params = {};
    }
  }
  const auto res = residuals(flow, fit);
  fit.inlier.resize(n);
  for (std::size_t i = 0; i < n; ++i) fit.inlier[i] = res[i] <= inlier_tol;
  return fit;
}

MotionScores motion_scores(const FlowField& flow, const BackgroundFit& fit, double w_fg) {
  MotionScores s;
  const std::size_t n = fit.sample_y.size();
  if (n == 0) return s;
  const auto res = residuals(flow, fit);
  std::size_t outliers = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = fit.predict(static_cast<double>(fit.sample_y[i]), static_cast<double>(fit.sample_x[i]),
                               flow.height, flow.width);
    s.bg += std::hypot(p[0], p[1]);
    if (!fit.inlier[i]) {
      s.fg += res[i];
      ++outliers;
    }
  }
  s.bg /= static_cast<double>(n);
  if (outliers) s.fg /= static_cast<double>(outliers);
  s.pretrain = 0.5 * (s.fg + s.bg);
  s.post = w_fg * s.fg + (1 - w_fg) * s.bg;
  return s;
}

MotionScores clip_motion(const Tensor& video, std::size_t begin, std::size_t end, std::size_t stride, double w_fg,
                         std::size_t block, std::size_t radius) {
  check_video(video, "clip_motion");
  if (stride == 0 || begin >= end || end > video.dim(0)) throw ContractError("clip_motion: bad range or stride");
  MotionScores acc;
  std::size_t pairs = 0;
  for (std::size_t f = begin; f + 1 < end; f += stride) {
    const auto flow = estimate_flow(frame_of(video, f), frame_of(video, f + 1), block, radius);
    const auto m = motion_scores(flow, fit_background_transform(flow), w_fg);
    acc.fg += m.fg;
    acc.bg += m.bg;
    ++pairs;
  }
  if (pairs) {
    acc.fg /= static_cast<double>(pairs);
    acc.bg /= static_cast<double>(pairs);
  }
  acc.pretrain = 0.5 * (acc.fg + acc.bg);
  acc.post = w_fg * acc.fg + (1 - w_fg) * acc.bg;
  return acc;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return d / std::sqrt(na * nb);
}

namespace {

double dist2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter, double tol) {
  const std::size_t n = points.size();
  if (k < 1 || k > n) throw ConfigError("kmeans: k=" + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  Rng rng(seed);
  KMeansResult res;
  res.centroids.push_back(points[rng.below(n)]);
  std::vector<double> d2(n);
  while (res.centroids.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::numeric_limits<double>::infinity();
      for (const auto& c : res.centroids) d2[i] = std::min(d2[i], dist2(points[i], c));
      total += d2[i];
    }
    std::size_t pick = n - 1;
    if (total <= 0) {
      pick = rng.below(n);
    } else {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
      }
    }
    res.centroids.push_back(points[pick]);
  }
  res.assignment.assign(n, 0);
  const std::size_t dim = points[0].size();
  for (res.iterations = 1; res.iterations <= max_iter; ++res.iterations) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = dist2(points[i], res.centroids[c]);
        if (d < best) {
          best = d;
          res.assignment[i] = c;
        }
      }
    }
    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[res.assignment[i]];
      for (std::size_t j = 0; j < dim; ++j) next[res.assignment[i]][j] += points[i][j];
    }
    double shift = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0) {
        next[c] = res.centroids[c];
      } else {
        for (auto& v : next[c]) v /= static_cast<double>(count[c]);
      }
      shift = std::max(shift, std::sqrt(dist2(next[c], res.centroids[c])));
    }
    res.centroids = std::move(next);
    if (shift < tol) break;
  }
  res.iterations = std::min(res.iterations, max_iter);
  return res;
}

KMeansDedupResult kmeans_dedup(const std::vector<std::vector<double>>& features, std::size_t k,
                               double base_threshold, double gamma, std::uint64_t seed) {
  KMeansDedupResult out;
  const auto km = kmeans(features, k, seed);
  out.assignment = km.assignment;
  std::vector<std::size_t> members(k, 0);
  std::vector<double> spread(k, 0.0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto c = km.assignment[i];
    ++members[c];
    spread[c] += 1.0 - cosine(features[i], km.centroids[c]);
  }
  out.density.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    out.density[c] = members[c] ? static_cast<double>(members[c]) / (spread[c] / members[c] + 1e-3) : 0.0;
  }
  out.threshold.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t lower = 0;
    for (std::size_t j = 0; j < k; ++j) lower += out.density[j] < out.density[c];
    const double rank = k > 1 ? static_cast<double>(lower) / static_cast<double>(k - 1) : 0.0;
    out.threshold[c] = base_threshold - gamma * rank;
  }
  std::vector<std::vector<std::size_t>> kept_in(k);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto c = km.assignment[i];
    bool keep = true;
    for (auto j : kept_in[c]) {
      if (cosine(features[i], features[j]) >= out.threshold[c]) {
        keep = false;
        break;
      }
    }
    if (keep) {
      kept_in[c].push_back(i);
      out.kept.push_back(i);
    }
  }
  return out;
}

std::vector<std::size_t> pairwise_dedup(const std::vector<std::vector<double>>& features, double threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < features.size(); ++i) {
    bool keep = true;
    for (auto j : kept) {
      if (cosine(features[i], features[j]) >= threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  return kept;
}

const std::array<AspectInfo, 7>& aspect_table() {
  static const std::array<AspectInfo, 7> table{{
      {"16:9", 16.0 / 9.0, 3, 5},
      {"3:2", 3.0 / 2.0, 2, 3},
      {"4:3", 4.0 / 3.0, 3, 4},
      {"1:1", 1.0, 2, 2},
      {"3:4", 3.0 / 4.0, 4, 3},
      {"2:3", 2.0 / 3.0, 3, 2},
      {"9:16", 9.0 / 16.0, 5, 3},
  }};
  return table;
}

std::size_t bucket_max_batch(std::size_t aspect, std::size_t duration_s, const BucketConfig& config) {
  const auto& a = aspect_table().at(aspect);
  const double frames = std::round(config.fps * static_cast<double>(duration_s)) + 1.0;
  const double pixels = static_cast<double>(a.rows * 16 * a.cols * 16) * frames;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(config.pixel_budget / pixels)));
}

Bucket assign_bucket(double width, double height, double duration_s, const BucketConfig& config) {
  if (!(width > 0) || !(height > 0) || !(duration_s > 0)) throw ContractError("assign_bucket: non-positive input");
  Bucket b;
  const double lr = std::log(width / height);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < aspect_table().size(); ++i) {
    const double d = std::abs(lr - std::log(aspect_table()[i].ratio));
    if (d < best - 1e-12) {
      best = d;
      b.aspect = i;
    }
  }
  const auto whole = static_cast<std::size_t>(std::floor(duration_s + 1e-9));
  b.duration_s = std::clamp(whole, config.min_duration, config.max_duration);
  b.truncate_s = std::min(static_cast<double>(b.duration_s), duration_s);
  b.max_batch = bucket_max_batch(b.aspect, b.duration_s, config);
  return b;
}

std::vector<std::size_t> select_top_percentile(const std::vector<ClipRecord>& records, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("select_top_percentile: p must be in (0, 1]");
  const std::size_t n = records.size();
  const std::size_t m = std::min(n, static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9)));
  auto top = [&](auto key) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const double ka = key(records[a]), kb = key(records[b]);
      if (ka != kb) return ka > kb;
      return records[a].id < records[b].id;
    });
    std::vector<bool> in(n, false);
    for (std::size_t i = 0; i < m; ++i) in[idx[i]] = true;
    return in;
  };
  const auto a = top([](const ClipRecord& r) { return r.aesthetic; });
  const auto b = top([](const ClipRecord& r) { return r.motion.post; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] && b[i]) out.push_back(i);
  return out;
}

std::vector<ClipRecord> run_curation(const std::vector<SourceVideo>& sources, const CurationConfig& cfg,
                                     const AestheticScorer& aesthetic) {
  const FrameEmbedder embedder(cfg.embed_dim, cfg.seed);
  std::vector<ClipRecord> records;
  for (const auto& src : sources) {
    check_video(src.frames, "run_curation");
    const std::size_t F = src.frames.dim(0);
    const auto cuts = F >= 2 ? detect_scene_cuts(src.frames, cfg.cut_threshold, cfg.cut_ratio)
                             : std::vector<std::size_t>{};
    const auto spans = split_clips(cuts, F, src.fps, cfg.min_s, cfg.max_s);
    std::vector<std::size_t> first_of_source;
    for (std::size_t i = 0; i < spans.size(); ++i) {
      ClipRecord r;
      char buf[16];
      std::snprintf(buf, sizeof buf, "%03zu", i);
      r.id = src.id + "#" + buf;
      r.source_id = src.id;
      r.span = spans[i];
      r.fps = src.fps;
      r.height = src.frames.dim(2);
      r.width = src.frames.dim(3);
      const std::size_t mid = (r.span.start + r.span.end) / 2;
      r.blur = (laplacian_blur_score(frame_of(src.frames, r.span.start)) +
                laplacian_blur_score(frame_of(src.frames, mid)) +
                laplacian_blur_score(frame_of(src.frames, r.span.end - 1))) /
               3.0;
      r.motion = clip_motion(src.frames, r.span.start, r.span.end, cfg.motion_stride, cfg.w_fg, cfg.flow_block,
                             cfg.flow_radius);
      r.aesthetic = aesthetic.score(frame_of(src.frames, mid));
      r.feature = embedder.embed(src.frames, r.span.start, r.span.end);
      r.bucket = assign_bucket(static_cast<double>(r.width), static_cast<double>(r.height),
                               static_cast<double>(r.span.length()) / src.fps, cfg.buckets);
      if (r.blur < cfg.blur_min) {
        r.kept = false;
        r.drop_reason = "blur";
      } else if (r.motion.pretrain < cfg.motion_min) {
        r.kept = false;
        r.drop_reason = "low_motion";
      }
      records.push_back(std::move(r));
    }
  }
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  // Pairwise dedup among the surviving clips of each source.
  std::map<std::string, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].kept) by_source[records[i].source_id].push_back(i);
  for (const auto& [src, idx] : by_source) {
    std::vector<std::vector<double>> feats;
    for (auto i : idx) feats.push_back(records[i].feature);
    std::vector<bool> keep(idx.size(), false);
    for (auto j : pairwise_dedup(feats, cfg.pairwise_threshold)) keep[j] = true;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (!keep[j]) {
        records[idx[j]].kept = false;
        records[idx[j]].drop_reason = "near_duplicate";
      }
    }
  }

  // Global cluster-aware dedup.
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].kept) alive.push_back(i);
  if (alive.size() >= cfg.k && cfg.k > 0) {
    std::vector<std::vector<double>> feats;
    for (auto i : alive) feats.push_back(records[i].feature);
    const auto res = kmeans_dedup(feats, cfg.k, cfg.kmeans_base, cfg.gamma, cfg.seed);
    std::vector<bool> keep(alive.size(), false);
    for (auto j : res.kept) keep[j] = true;
    for (std::size_t j = 0; j < alive.size(); ++j) {
      if (!keep[j]) {
        records[alive[j]].kept = false;
        records[alive[j]].drop_reason = "cluster_duplicate";
      }
    }
  }

  std::vector<ClipRecord> kept;
  std::vector<std::size_t> kept_idx;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].kept) {
      kept.push_back(records[i]);
      kept_idx.push_back(i);
    }
  }
  if (!kept.empty()) {
    for (auto j : select_top_percentile(kept, cfg.top_p)) records[kept_idx[j]].post_selected = true;
  }
  return records;
}

std::vector<SourceVideo> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".cvpx") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SourceVideo> out;
  for (const auto& f : files) {
    auto side = f;
    side.replace_extension(".json");
    std::ifstream in(side);
    if (!in) throw IoError("missing sidecar " + side.string());
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad sidecar " + side.string() + ": " + e.what());
    }
    if (!meta.contains("id") || !meta.contains("fps") || !meta["fps"].is_number()) {
      throw IoError("sidecar " + side.string() + " needs \"id\" and numeric \"fps\"");
    }
    out.push_back({meta["id"].get<std::string>(), meta["fps"].get<double>(), read_cvpx(f)});
  }
  return out;
}

void write_manifest(std::ostream& out, const std::vector<ClipRecord>& records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["schema_version"] = kManifestSchemaVersion;
    j["id"] = r.id;
    j["source_id"] = r.source_id;
    j["span"] = {r.span.start, r.span.end};
    j["fps"] = r.fps;
    j["width"] = r.width;
    j["height"] = r.height;
    j["blur"] = round6(r.blur);
    j["motion_fg"] = round6(r.motion.fg);
    j["motion_bg"] = round6(r.motion.bg);
    j["motion_pretrain"] = round6(r.motion.pretrain);
    j["motion_post"] = round6(r.motion.post);
    j["aesthetic"] = round6(r.aesthetic);
    j["bucket"] = {{"aspect", r.bucket.aspect_name()},
                   {"duration_s", r.bucket.duration_s},
                   {"truncate_s", round6(r.bucket.truncate_s)},
                   {"max_batch", r.bucket.max_batch}};
    j["kept"] = r.kept;
    j["drop_reason"] = r.kept ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.drop_reason);
    j["post_selected"] = r.post_selected;
    out << j.dump() << '\n';
  }
}

}  // namespace vf
