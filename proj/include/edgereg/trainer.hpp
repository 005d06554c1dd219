#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "edgereg/dataio.hpp"
#include "edgereg/exchange.hpp"
#include "edgereg/featnet.hpp"
#include "edgereg/geometry.hpp"
#include "edgereg/matchlayer.hpp"
#include "edgereg/pose.hpp"

namespace edgereg {

// Deterministic even-stride subsample down to `max` elements; inputs at or
// under the cap pass through untouched. Relative order is preserved.
EdgePixelSet cap_edge_pixels(const EdgePixelSet &pixels, std::int64_t max);
EdgePointSet cap_edge_points(const EdgePointSet &points, std::int64_t max);

// Wall-clock cost of each forward stage, for the per-frame report.
struct StageTimings {
  double edges_2d_ms = 0.0;
  double edges_3d_ms = 0.0;
  double features_ms = 0.0;  // image + point branches incl. embeddings
  double exchange_ms = 0.0;
  double matching_ms = 0.0;  // heads, assignment and labels
};

// One frame pushed through edge extraction, both feature branches, the
// exchange stack and the matching heads. All Vars live on the tape handed to
// Pipeline::forward; labels refer to t_effective.
struct ForwardResult {
  EdgePixelSet pixels;  // capped at config.max_edge_pixels
  EdgePointSet points;  // capped, coordinates in the augmented scan frame
  Var f_2d;             // post-exchange pixel features, {N_2D, D}
  Var f_3d;             // post-exchange point features, {N_3D, D}
  AssignmentMatrix assignment;
  Var s_3d;  // predicted in-view scores, {N_3D, 1}
  GroundTruthLabels labels;
  PoseSE3 t_effective;  // scan-to-camera pose after augmentation
  bool usable = false;  // false when either edge set came up empty
  std::string diagnostic;

  // True when the frame can contribute to the matching loss.
  bool supervisable() const { return usable && !labels.matches.empty(); }
};

// Every learnable stage of the pipeline on one parameter store, so a single
// checkpoint file captures the whole model. Construction order (image
// branch, point branch, exchange, heads) fixes the store layout.
class Pipeline {
 public:
  explicit Pipeline(const PipelineConfig &config);

  // Runs one frame through the full stack. The augmentation pose is applied
  // to the scan after edge extraction, so labels and registration target
  // T_gt composed with its inverse; pass identity outside training. rng
  // drives cloud downsampling and farthest point sampling.
  ForwardResult forward(Tape &t, const FramePair &frame, const PoseSE3 &augmentation, Rng &rng,
                        StageTimings *timings = nullptr) const;

  void save_checkpoint(const std::string &path) const { store_.save(path); }
  void load_checkpoint(const std::string &path) { store_.load(path); }

  const PipelineConfig &config() const { return config_; }
  ParamStore &params() { return store_; }
  const ParamStore &params() const { return store_; }
  const FeatNet &features() const { return feat_; }
  const ExchangeStack &exchange() const { return exchange_; }
  const MatchHeads &heads() const { return heads_; }

 private:
  PipelineConfig config_;
  ParamStore store_;
  FeatNet feat_;
  ExchangeStack exchange_;
  MatchHeads heads_;
};

// Batch-mean losses of one optimizer step, plus how many frames fed it.
struct TrainStepStats {
  double l_fov = 0.0;
  double l_sigma = 0.0;
  double l_match = 0.0;
  double l_total = 0.0;
  int frames_used = 0;
  int frames_skipped = 0;
};

// Writes the step log as "step,L_fov,L_sigma,L_P,L_total" rows.
void write_training_log(std::ostream &out, const std::vector<TrainStepStats> &history);

// Owns the optimizer state and augmentation stream for one Pipeline.
class Trainer {
 public:
  Trainer(Pipeline &pipeline, std::uint64_t seed);

  // One accumulation step over the batch: per-frame reverse-mode gradients
  // summed and rescaled to the batch mean, then an adaptive-moment update
  // with the configured learning rate and gradient-norm clip. Frames with
  // no edges or no ground-truth matches are skipped; a batch with nothing
  // left raises ContractError. A non-finite loss aborts the step with the
  // parameters, moments and step count untouched (NumericError).
  TrainStepStats train_step(const std::vector<FramePair> &batch);

  std::int64_t step() const { return step_; }
  // Decay-0.9 exponential moving averages of the per-step losses.
  const TrainStepStats &running() const { return running_; }
  const std::vector<TrainStepStats> &history() const { return history_; }
  AdamOptimizer &optimizer() { return opt_; }
  Rng &rng() { return rng_; }

 private:
  Pipeline &pipe_;
  AdamOptimizer opt_;
  Rng rng_;
  std::int64_t step_ = 0;
  TrainStepStats running_;
  std::vector<TrainStepStats> history_;
};

// Registration outcome of a single evaluation frame.
struct FrameEvaluation {
  bool skipped = false;     // empty edge set, no pose attempted
  bool registered = false;  // robust solve reached consensus
  double rre_deg = 0.0;     // +inf when not registered
  double rte_m = 0.0;
  std::int64_t correspondences = 0;
  std::int64_t inliers = 0;
};

struct EvaluationSummary {
  double rre_mean = 0.0;  // over frames passing the sanity filter
  double rre_std = 0.0;
  double rte_mean = 0.0;
  double rte_std = 0.0;
  double acc = 0.0;  // fraction of all frames with RRE < 5 deg and RTE < 2 m
  std::int64_t frames = 0;
  std::int64_t filtered_frames = 0;  // RRE < 10 deg and RTE < 5 m
  std::vector<FrameEvaluation> per_frame;
};

// Applies the reporting rule to raw per-frame errors: frames with
// RRE < 10 deg and RTE < 5 m enter the means and (population) deviations,
// every frame counts in the accuracy denominator. Failed registrations are
// passed as infinite errors.
EvaluationSummary summarize_pose_errors(const std::vector<PoseError> &errors);

// Full evaluation pass: forward with identity augmentation, mutual-argmax
// correspondences, robust pose, error against the frame's ground truth.
// Each frame runs on a fresh Rng(seed), so results depend neither on dataset
// order nor on how frames are spread over the worker threads. Throws
// ContractError on an empty frame list.
EvaluationSummary evaluate_dataset(const Pipeline &pipeline, const std::vector<FramePair> &frames,
                                   std::uint64_t seed, int threads = 1);

}  // namespace edgereg
