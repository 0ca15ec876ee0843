// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "vidflow/tensor.hpp"

// Videos are [F, 3, H, W] tensors with values in [0, 1]; frames are [3, H, W].

namespace vf {

// ---- scene cuts and clip splitting

/// Mean over pixels of the RGB Euclidean distance between frames i and i+1.
std::vector<double> frame_differences(const Tensor& video);

/// A cut at index c means frame c starts a new shot. A jump d[c-1] is a cut
/// when it exceeds `threshold` and `ratio` times the median of the other
/// differences in the 5-wide window centred on it; this rejects gradual
/// transitions whose neighbouring differences are similar.
std::vector<std::size_t> detect_scene_cuts(const Tensor& video, double threshold, double ratio = 3.0);

struct Span {
  std::size_t start = 0;  // inclusive frame index
  std::size_t end = 0;    // exclusive

  std::size_t length() const { return end - start; }
  bool operator==(const Span&) const = default;
};

/// Greedy partition of each shot into max_s pieces; a trailing remainder is
/// kept only if it lasts at least min_s.
std::vector<Span> split_clips(const std::vector<std::size_t>& cuts, std::size_t total_frames, double fps,
                              double min_s = 3.0, double max_s = 6.0);

// ---- per-frame scores

/// 0.299 R + 0.587 G + 0.114 B, [H, W] row-major.
std::vector<double> luminance(const Tensor& frame);
/// Population variance of the 3x3 Laplacian over interior pixels.
double laplacian_blur_score(const Tensor& frame);

/// Optional aesthetic scorer; the shipped stub combines contrast and sharpness.
class AestheticScorer {
 public:
  virtual ~AestheticScorer() = default;
  virtual double score(const Tensor& frame) const = 0;
};

class StubAestheticScorer final : public AestheticScorer {
 public:
  double score(const Tensor& frame) const override;
};

/// Seeded random projection of a 4x4 area-pooled RGB frame, mean-pooled over
/// frames and unit-normalized.
class FrameEmbedder {
 public:
  FrameEmbedder(std::size_t dim, std::uint64_t seed);
  std::vector<double> embed(const Tensor& video, std::size_t begin, std::size_t end) const;
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
  std::vector<double> proj_;  // [dim, 48]
};

// ---- motion

struct FlowField {
  std::size_t height = 0, width = 0;
  std::vector<double> dx, dy;  // per pixel, row-major

  double at_dx(std::size_t y, std::size_t x) const { return dx[y * width + x]; }
  double at_dy(std::size_t y, std::size_t x) const { return dy[y * width + x]; }
};

/// Block matching on luminance: each block takes the integer displacement in
/// [-radius, radius]^2 minimising the SAD against frame_b sampled with
/// wrap-around; ties go to the smallest |dx| + |dy|.
FlowField estimate_flow(const Tensor& frame_a, const Tensor& frame_b, std::size_t block = 8, std::size_t radius = 4);

struct BackgroundFit {
  /// dx = p0 + p1 u + p2 v, dy = p3 + p4 u + p5 v with (u, v) = pixel centre
  /// minus image centre.
  std::array<double, 6> params{};
  std::vector<std::size_t> sample_y, sample_x;
  std::vector<bool> inlier;
  bool singular = false;

  std::array<double, 2> predict(double y, double x, std::size_t height, std::size_t width) const;
};

/// Affine least squares on a grid of samples (every `step` pixels), refit
/// once after discarding the worst 20% residuals. Samples whose final
/// residual exceeds `inlier_tol` are foreground.
BackgroundFit fit_background_transform(const FlowField& flow, std::size_t step = 4, double inlier_tol = 0.5);

struct MotionScores {
  double fg = 0, bg = 0, pretrain = 0, post = 0;
};

MotionScores motion_scores(const FlowField& flow, const BackgroundFit& fit, double w_fg = 0.7);
/// Scores averaged over consecutive frame pairs in [begin, end) taken every
/// `stride` frames.
MotionScores clip_motion(const Tensor& video, std::size_t begin, std::size_t end, std::size_t stride = 1,
                         double w_fg = 0.7, std::size_t block = 8, std::size_t radius = 4);

// ---- deduplication

struct KMeansResult {
  std::vector<std::size_t> assignment;
  std::vector<std::vector<double>> centroids;
  std::size_t iterations = 0;
};

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter = 100, double tol = 1e-6);

struct KMeansDedupResult {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> assignment;
  std::vector<double> density;    // per cluster
  std::vector<double> threshold;  // per cluster tau_c
};

/// Per-cluster greedy dedup with tau_c = base - gamma * r_c, where r_c is the
/// fraction of other clusters with strictly lower density
/// (members / (mean cosine distance to centroid + 1e-3)).
KMeansDedupResult kmeans_dedup(const std::vector<std::vector<double>>& features, std::size_t k,
                               double base_threshold, double gamma = 0.1, std::uint64_t seed = 0);

/// Keeps i iff its cosine to every previously kept item is below threshold.
std::vector<std::size_t> pairwise_dedup(const std::vector<std::vector<double>>& features, double threshold);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// ---- buckets

struct AspectInfo {
  const char* name;
  double ratio;  // w / h
  std::size_t rows, cols;  // toy training resolution in 16-pixel units
};

const std::array<AspectInfo, 7>& aspect_table();

struct BucketConfig {
  std::size_t min_duration = 1;
  std::size_t max_duration = 8;
  /// Pixel budget per batch (H * W * frames * batch) at the toy resolution.
  double pixel_budget = 1 << 20;
  double fps = 4.0;
};

struct Bucket {
  std::size_t aspect = 0;  // index into aspect_table()
  std::size_t duration_s = 0;
  double truncate_s = 0;
  std::size_t max_batch = 1;

  std::string aspect_name() const { return aspect_table()[aspect].name; }
  bool operator==(const Bucket&) const = default;
};

Bucket assign_bucket(double width, double height, double duration_s, const BucketConfig& config = {});
std::size_t bucket_max_batch(std::size_t aspect, std::size_t duration_s, const BucketConfig& config = {});

// ---- records, selection and the pipeline

struct ClipRecord {
  std::string id;
  std::string source_id;
  Span span;
  double fps = 0;
  std::size_t width = 0, height = 0;
  double blur = 0;
  MotionScores motion;
  double aesthetic = 0;
  std::vector<double> feature;
  Bucket bucket;
  bool kept = true;
  std::string drop_reason;
  bool post_selected = false;
};

/// Records in the top fraction p by both aesthetic and motion.post; ties
/// broken by id. Returned in input order.
std::vector<std::size_t> select_top_percentile(const std::vector<ClipRecord>& records, double p = 0.10);

struct SourceVideo {
  std::string id;
  double fps = 0;
  Tensor frames;
};

struct CurationConfig {
  double cut_threshold = 0.1;
  double cut_ratio = 3.0;
  double min_s = 3.0;
  double max_s = 6.0;
  double blur_min = 1e-3;
  double motion_min = 0.05;
  double pairwise_threshold = 0.98;
  std::size_t k = 2;
  double kmeans_base = 0.995;
  double gamma = 0.1;
  double w_fg = 0.7;
  double top_p = 0.10;
  std::size_t flow_block = 8;
  std::size_t flow_radius = 4;
  std::size_t motion_stride = 2;
  std::size_t embed_dim = 32;
  std::uint64_t seed = 1234;
  BucketConfig buckets;
};

std::vector<ClipRecord> run_curation(const std::vector<SourceVideo>& sources, const CurationConfig& config,
                                     const AestheticScorer& aesthetic);

/// Reads every <name>.cvpx with a <name>.json sidecar ({"id", "fps"}) in
/// lexicographic order.
std::vector<SourceVideo> load_corpus(const std::filesystem::path& dir);

inline constexpr int kManifestSchemaVersion = 1;
void write_manifest(std::ostream& out, const std::vector<ClipRecord>& records);

}  // namespace vf
