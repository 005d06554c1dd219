#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "edgereg/edge2d.hpp"
#include "edgereg/edge3d.hpp"
#include "edgereg/geometry.hpp"
#include "edgereg/nn.hpp"
#include "edgereg/tape.hpp"

namespace edgereg {

// Everything the matcher predicts for one frame, kept on the tape so the
// losses can differentiate through all of it.
struct AssignmentMatrix {
  Var s;         // similarity logits, {N_2D, N_3D}
  Var sigma_2d;  // matchability gates in (0, 1), {N_2D, 1}
  Var sigma_3d;  // {N_3D, 1}
  Var p;         // soft partial assignment, {N_2D, N_3D}
};

// S = A(f_2d) * B(f_3d)^T with two learned width-preserving maps.
Var similarity_matrix(Tape &t, Var f_2d, Var f_3d, const Linear &map_2d,
                      const Linear &map_3d);

// Linear D->1 plus sigmoid, applied per row. Shared by the matchability
// gates and the in-view classifier.
Var score_head(Tape &t, Var features, const Linear &head);

// P_ij = sigma2d_i * sigma3d_j * colsoftmax(S)_ij * rowsoftmax(S)_ij. Both
// softmax factors are max-subtracted; each sums to one along its own axis,
// so 0 <= P_ij <= sigma2d_i * sigma3d_j.
Var assignment_matrix(Tape &t, Var s, Var sigma_2d, Var sigma_3d);

// Learned heads that turn the exchanged descriptors into match evidence:
// a bilinear similarity (two D->D maps with bias) plus three sigmoid heads
// (2D/3D matchability, 3D in-view score). Parameters live under "match.".
class MatchHeads {
 public:
  MatchHeads(ParamStore &store, std::int64_t dim, std::uint64_t seed);

  Var similarity(Tape &t, Var f_2d, Var f_3d) const;
  Var matchability_2d(Tape &t, Var f_2d) const;
  Var matchability_3d(Tape &t, Var f_3d) const;
  Var fov_scores(Tape &t, Var f_3d) const;

  // Full predicted assignment for one frame.
  AssignmentMatrix assignment(Tape &t, Var f_2d, Var f_3d) const;

  std::int64_t dim() const { return dim_; }

 private:
  Linear sim_2d_, sim_3d_;
  Linear gate_2d_, gate_3d_, fov_;
  std::int64_t dim_;
};

struct MatchPair {
  std::int64_t pixel = 0;  // i, row of the assignment matrix
  std::int64_t point = 0;  // j, column
  double confidence = 0.0;
};

// Pairs (i, j) where P(i, j) is the strict maximum of both row i and column
// j and reaches min_confidence. Tied maxima are rejected, which makes the
// result injective in both indices.
std::vector<MatchPair> mutual_argmax_pairs(const Tensor &p,
                                           double min_confidence = 0.0);

struct Correspondence {
  std::int64_t pixel = 0;
  std::int64_t point = 0;
  double confidence = 0.0;
  double u = 0.0, v = 0.0;           // 2D edge pixel
  double x = 0.0, y = 0.0, z = 0.0;  // 3D edge point
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

// mutual_argmax_pairs with the indices resolved to coordinates.
CorrespondenceSet extract_correspondences(const Tensor &p,
                                          const EdgePixelSet &pixels,
                                          const EdgePointSet &points,
                                          double min_confidence = 0.0);

// Rows "i,u,v,j,x,y,z,confidence" after a header line.
void write_correspondences_csv(std::ostream &out, const CorrespondenceSet &set);

struct IndexPair {
  std::int64_t pixel = 0;
  std::int64_t point = 0;
};

struct GroundTruthLabels {
  // 0/1 indicators kept as doubles so they feed the loss tape directly.
  std::vector<double> s_hat_3d;      // point is in front and inside the image
  std::vector<double> sigma_hat_2d;  // pixel belongs to some true pair
  std::vector<double> sigma_hat_3d;  // point belongs to some true pair
  std::vector<IndexPair> matches;    // true pairs, ascending point index
};

// Projects the 3D edge points with the ground-truth pose. A point counts as
// in view when it lands in front of the camera within the pixel-center hull
// [0, W-1] x [0, H-1]. Each in-view point pairs with its nearest edge pixel
// when that distance is strictly below eps_corr; equidistant pixels go to
// the lowest pixel index.
GroundTruthLabels ground_truth_labels(const EdgePixelSet &pixels,
                                      const EdgePointSet &points,
                                      const CameraIntrinsics &K,
                                      const PoseSE3 &T_gt, int width, int height,
                                      double eps_corr = 3.0);

struct LossWeights {
  double fov = 1.0;
  double sigma = 1.0;
  double match = 1.0;
};

struct LossBundle {
  Var l_fov;    // mean BCE of the in-view scores
  Var l_sigma;  // mean BCE of the 2D gates plus mean BCE of the 3D gates
  Var l_match;  // mean negative log P over the true pairs; 0 when there are none
  Var total;    // weighted sum
  bool has_match_supervision = false;  // false: no true pairs in this frame
};

// All probabilities are clamped to [1e-12, 1 - 1e-12] inside the logs, so
// every loss is finite and non-negative.
LossBundle compute_losses(Tape &t, const AssignmentMatrix &am, Var s_3d,
                          const GroundTruthLabels &labels,
                          const LossWeights &weights = {});

}  // namespace edgereg
