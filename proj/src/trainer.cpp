#include "edgereg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <thread>
#include <utility>

#include "edgereg/errors.hpp"

namespace edgereg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<std::size_t> stride_indices(std::size_t n, std::int64_t max) {
  if (max <= 0) {
    throw ValidationError("edge cap must be positive, got " + std::to_string(max));
  }
  std::vector<std::size_t> idx;
  if (n <= static_cast<std::size_t>(max)) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  idx.resize(static_cast<std::size_t>(max));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i * n / static_cast<std::size_t>(max);
  }
  return idx;
}

double scalar(const Tape &t, Var v) { return t.value(v).data[0]; }

const PipelineConfig &validated(const PipelineConfig &config) {
  config.validate();
  return config;
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

EdgePixelSet cap_edge_pixels(const EdgePixelSet &pixels, std::int64_t max) {
  const std::vector<std::size_t> idx = stride_indices(pixels.pixels.size(), max);
  EdgePixelSet out;
  out.pixels.reserve(idx.size());
  for (std::size_t i : idx) out.pixels.push_back(pixels.pixels[i]);
  return out;
}

EdgePointSet cap_edge_points(const EdgePointSet &points, std::int64_t max) {
  const std::vector<std::size_t> idx = stride_indices(points.points.size(), max);
  EdgePointSet out;
  out.points.reserve(idx.size());
  for (std::size_t i : idx) out.points.push_back(points.points[i]);
  return out;
}

Pipeline::Pipeline(const PipelineConfig &config)
    : config_(validated(config)),
      store_(),
      feat_(store_, config_, config_.seed),
      exchange_(store_, config_, config_.seed),
      heads_(store_, config_.feature_dim, config_.seed) {}

ForwardResult Pipeline::forward(Tape &t, const FramePair &frame, const PoseSE3 &augmentation,
                                Rng &rng, StageTimings *timings) const {
  if (!augmentation.is_valid(1e-6)) {
    throw ValidationError("forward: augmentation pose is not a rigid transform");
  }
  StageTimings local;
  ForwardResult out;
  out.t_effective = se3_compose(frame.T_gt, se3_invert(augmentation));

  // Edge extraction runs on the raw inputs; ring segmentation needs the
  // cloud in original sensor order and frame.
  Clock::time_point mark = Clock::now();
  const EdgePixelSet raw_pixels = extract_edge_pixels(frame.image, config_);
  local.edges_2d_ms = ms_since(mark);
  if (raw_pixels.pixels.empty()) {
    out.diagnostic = "no edge pixels detected";
    if (timings) *timings = local;
    return out;
  }
  mark = Clock::now();
  const EdgePointSet raw_points =
      extract_edge_points(frame.cloud, config_.eps_depth, config_.eps_reflect, config_.edge_mode);
  local.edges_3d_ms = ms_since(mark);
  if (raw_points.empty()) {
    out.diagnostic = "no edge points detected";
    if (timings) *timings = local;
    return out;
  }
  out.pixels = cap_edge_pixels(raw_pixels, config_.max_edge_pixels);
  out.points = cap_edge_points(raw_points, config_.max_edge_points);

  // The augmentation moves every scan coordinate the network sees; the
  // labels compensate through t_effective.
  for (EdgePoint &p : out.points.points) {
    const Eigen::Vector3d q = augmentation.apply(p.xyz());
    p.x = q.x();
    p.y = q.y();
    p.z = q.z();
  }
  PointCloud net_cloud = downsample_random(frame.cloud, config_.point_downsample, rng);
  for (CloudPoint &p : net_cloud.points) {
    const Eigen::Vector3d q = augmentation.apply(p.xyz());
    p.x = q.x();
    p.y = q.y();
    p.z = q.z();
  }

  mark = Clock::now();
  const ImageFeatureGrid grid = feat_.extract_image_features(t, frame.image);
  Var f_2d = t.add(feat_.sample_bilinear(t, grid, out.pixels),
                   feat_.positional_embedding_2d(t, out.pixels, frame.image.width,
                                                 frame.image.height));
  const PointFeatureSet encoded = feat_.encode_cloud(t, net_cloud, rng);
  Var f_3d = t.add(feat_.propagate_to_edges(t, encoded, out.points),
                   feat_.positional_embedding_3d(t, out.points));
  local.features_ms = ms_since(mark);

  mark = Clock::now();
  std::tie(f_2d, f_3d) = exchange_.run(t, f_2d, f_3d);
  local.exchange_ms = ms_since(mark);

  mark = Clock::now();
  out.f_2d = f_2d;
  out.f_3d = f_3d;
  out.assignment = heads_.assignment(t, f_2d, f_3d);
  out.s_3d = heads_.fov_scores(t, f_3d);
  out.labels = ground_truth_labels(out.pixels, out.points, frame.K, out.t_effective,
                                   frame.image.width, frame.image.height, config_.eps_corr);
  local.matching_ms = ms_since(mark);
  out.usable = true;
  if (timings) *timings = local;
  return out;
}

void write_training_log(std::ostream &out, const std::vector<TrainStepStats> &history) {
  out << "step,L_fov,L_sigma,L_P,L_total\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < history.size(); ++i) {
    const TrainStepStats &s = history[i];
    out << (i + 1) << ',' << s.l_fov << ',' << s.l_sigma << ',' << s.l_match << ',' << s.l_total
        << '\n';
  }
}

Trainer::Trainer(Pipeline &pipeline, std::uint64_t seed)
    : pipe_(pipeline),
      opt_(pipeline.params(), pipeline.config().learning_rate, 0.9, 0.999, 1e-8,
           pipeline.config().grad_clip),
      rng_(seed) {}

TrainStepStats Trainer::train_step(const std::vector<FramePair> &batch) {
  if (batch.empty()) {
    throw ContractError("train_step: batch is empty");
  }
  const PipelineConfig &cfg = pipe_.config();
  const LossWeights weights{cfg.lambda_fov, cfg.lambda_sigma, cfg.lambda_match};

  pipe_.params().zero_grads();
  TrainStepStats stats;
  for (const FramePair &frame : batch) {
    Tape t;
    const PoseSE3 aug = sample_pose_perturbation(rng_, cfg.aug_max_xy);
    const ForwardResult fwd = pipe_.forward(t, frame, aug, rng_);
    if (!fwd.supervisable()) {
      ++stats.frames_skipped;
      continue;
    }

    const LossBundle losses = compute_losses(t, fwd.assignment, fwd.s_3d, fwd.labels, weights);
    const double total = scalar(t, losses.total);
    if (!std::isfinite(total)) {
      pipe_.params().zero_grads();
      throw NumericError("train_step: non-finite loss, step aborted");
    }
    t.backpropagate(losses.total);
    stats.l_fov += scalar(t, losses.l_fov);
    stats.l_sigma += scalar(t, losses.l_sigma);
    stats.l_match += scalar(t, losses.l_match);
    stats.l_total += total;
    ++stats.frames_used;
  }
  if (stats.frames_used == 0) {
    throw ContractError("train_step: every frame in the batch was skipped");
  }

  const double inv = 1.0 / stats.frames_used;
  ParamStore &store = pipe_.params();
  for (const std::string &name : store.names()) {
    for (double &g : store.get(name).grad) g *= inv;
  }
  stats.l_fov *= inv;
  stats.l_sigma *= inv;
  stats.l_match *= inv;
  stats.l_total *= inv;

  opt_.step();
  ++step_;
  if (step_ == 1) {
    running_ = stats;
  } else {
    running_.l_fov = 0.9 * running_.l_fov + 0.1 * stats.l_fov;
    running_.l_sigma = 0.9 * running_.l_sigma + 0.1 * stats.l_sigma;
    running_.l_match = 0.9 * running_.l_match + 0.1 * stats.l_match;
    running_.l_total = 0.9 * running_.l_total + 0.1 * stats.l_total;
    running_.frames_used = stats.frames_used;
    running_.frames_skipped = stats.frames_skipped;
  }
  history_.push_back(stats);
  return stats;
}

EvaluationSummary summarize_pose_errors(const std::vector<PoseError> &errors) {
  EvaluationSummary out;
  out.frames = static_cast<std::int64_t>(errors.size());
  double rre_sum = 0.0, rre_sq = 0.0, rte_sum = 0.0, rte_sq = 0.0;
  std::int64_t hits = 0;
  for (const PoseError &e : errors) {
    if (e.rre_deg < 10.0 && e.rte_m < 5.0) {
      ++out.filtered_frames;
      rre_sum += e.rre_deg;
      rre_sq += e.rre_deg * e.rre_deg;
      rte_sum += e.rte_m;
      rte_sq += e.rte_m * e.rte_m;
    }
    if (e.rre_deg < 5.0 && e.rte_m < 2.0) ++hits;
  }
  if (out.filtered_frames > 0) {
    const double n = static_cast<double>(out.filtered_frames);
    out.rre_mean = rre_sum / n;
    out.rte_mean = rte_sum / n;
    out.rre_std = std::sqrt(std::max(0.0, rre_sq / n - out.rre_mean * out.rre_mean));
    out.rte_std = std::sqrt(std::max(0.0, rte_sq / n - out.rte_mean * out.rte_mean));
  }
  if (out.frames > 0) {
    out.acc = static_cast<double>(hits) / static_cast<double>(out.frames);
  }
  return out;
}

namespace {

FrameEvaluation evaluate_frame(const Pipeline &pipeline, const FramePair &frame,
                               std::uint64_t seed) {
  const PipelineConfig &cfg = pipeline.config();
  // A fresh generator per frame keeps every result independent of dataset
  // order and thread assignment.
  Rng rng(seed);
  FrameEvaluation fe;
  fe.rre_deg = kInf;
  fe.rte_m = kInf;
  Tape t;
  const ForwardResult fwd = pipeline.forward(t, frame, PoseSE3::identity(), rng);
  if (!fwd.usable) {
    fe.skipped = true;
    return fe;
  }
  const CorrespondenceSet corr = extract_correspondences(t.value(fwd.assignment.p), fwd.pixels,
                                                         fwd.points, cfg.min_match_confidence);
  fe.correspondences = static_cast<std::int64_t>(corr.size());
  if (corr.size() >= 4) {
    const RansacResult res = ransac_epnp(corr, frame.K, cfg, rng);
    if (res.success) {
      const PoseError err = compute_pose_error(frame.T_gt, res.pose);
      fe.registered = true;
      fe.rre_deg = err.rre_deg;
      fe.rte_m = err.rte_m;
      fe.inliers = res.inlier_count();
    }
  }
  return fe;
}

}  // namespace

EvaluationSummary evaluate_dataset(const Pipeline &pipeline, const std::vector<FramePair> &frames,
                                   std::uint64_t seed, int threads) {
  if (frames.empty()) {
    throw ContractError("evaluate_dataset: frame list is empty");
  }
  const std::size_t n = frames.size();
  std::vector<FrameEvaluation> per_frame(n);
  const int workers =
      std::clamp(threads, 1, static_cast<int>(std::min<std::size_t>(n, 64)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) per_frame[i] = evaluate_frame(pipeline, frames[i], seed);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < n;
             i += static_cast<std::size_t>(workers)) {
          per_frame[i] = evaluate_frame(pipeline, frames[i], seed);
        }
      });
    }
    for (std::thread &th : pool) th.join();
  }
  std::vector<PoseError> errors;
  errors.reserve(n);
  for (const FrameEvaluation &fe : per_frame) errors.push_back({fe.rre_deg, fe.rte_m});
  EvaluationSummary out = summarize_pose_errors(errors);
  out.per_frame = std::move(per_frame);
  return out;
}

}  // namespace edgereg
