#pragma once

#include <cstdint>
#include <vector>

#include "edgereg/dataio.hpp"
#include "edgereg/geometry.hpp"
#include "edgereg/matchlayer.hpp"
#include "edgereg/rng.hpp"

namespace edgereg {

// Outcome of the pose hypothesis search. On success the mask marks every
// correspondence whose reprojection error under `pose` lies within the
// RANSAC threshold, and at least four of them exist.
struct RansacResult {
  PoseSE3 pose;
  std::vector<bool> inlier_mask;
  std::int64_t iterations_used = 0;
  double mean_inlier_reproj_error = 0.0;
  bool success = false;

  std::int64_t inlier_count() const;
};

// Per-pair pixel distance between the stored pixel and the reprojection of
// the stored point under T; +infinity when the point lands behind the camera.
std::vector<double> reprojection_errors(const CorrespondenceSet &corr,
                                        const CameraIntrinsics &K,
                                        const PoseSE3 &T);

// EPnP: express the points in barycentric coordinates of four control points
// (three when the set is coplanar), recover the camera-frame control points
// from the null space of the 2n x 3m projection system via the quadratic
// distance constraints on the betas (one Gauss-Newton pass), and align the
// frames with Procrustes. The candidate with the least reprojection error
// across the null-space dimensionality cases wins.
//
// Throws ContractError below 4 pairs and DegeneracyError for collinear sets.
PoseSE3 epnp(const CorrespondenceSet &corr, const CameraIntrinsics &K);

// Samples 4-pair hypotheses, scores them by inlier count at threshold_px,
// shrinks the iteration bound as log(1-confidence)/log(1-w^4) with w the best
// inlier ratio so far, and re-fits on the full inlier set. A consensus below
// 4 inliers is reported as a failure result, not thrown.
RansacResult ransac_epnp(const CorrespondenceSet &corr, const CameraIntrinsics &K,
                         double threshold_px, double confidence,
                         std::int64_t max_iters, Rng &rng);

// Same, with the solver parameters taken from the config.
RansacResult ransac_epnp(const CorrespondenceSet &corr, const CameraIntrinsics &K,
                         const PipelineConfig &cfg, Rng &rng);

}  // namespace edgereg
