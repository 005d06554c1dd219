#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "edgereg/dataio.hpp"
#include "edgereg/edge2d.hpp"
#include "edgereg/edge3d.hpp"
#include "edgereg/nn.hpp"

namespace edgereg {

// Image features on the coarse grid left by the three stride-2 stages.
struct ImageFeatureGrid {
  std::int64_t gw = 0, gh = 0, dim = 0;
  Var cells;  // {gh * gw, dim}, row-major by grid row then column
};

// Point positions with tape-resident features, rows aligned.
struct PointFeatureSet {
  std::vector<Eigen::Vector3d> positions;
  Var features;  // {positions.size(), dim}
};

// Greedy max-min farthest point sampling. The first index is drawn from rng;
// every following pick maximizes its distance to the already selected set,
// ties resolved toward the lowest index. Returns indices in selection order.
std::vector<std::size_t> farthest_point_sample(const std::vector<Eigen::Vector3d> &points,
                                               std::size_t count, Rng &rng);

// Pooling encoder stage: per center, neighbors within radius (nearest first,
// capped at k_max, the center itself always kept), each encoded as
// (offset from center ⊕ its feature row) through the shared MLP, then
// channelwise max over the neighborhood.
PointFeatureSet set_abstraction(Tape &t, const std::vector<Eigen::Vector3d> &positions,
                                Var features, const std::vector<std::size_t> &centers,
                                double radius, std::int64_t k_max, const Mlp &mlp);

// Inverse-distance-squared blend of each target's 3 nearest source rows
// (weights 1/(d^2 + 1e-8), normalized per target).
Var interpolate_features(Tape &t, const std::vector<Eigen::Vector3d> &targets,
                         const PointFeatureSet &sources);

// interpolate_features ⊕ the target's own (x, y, z, reflectance), pushed
// through the unit MLP to D channels. Rows align with `targets`.
Var feature_propagation(Tape &t, const EdgePointSet &targets, const PointFeatureSet &sources,
                        const Mlp &unit_mlp);

// Front-end feature extraction for both modalities. Parameters live in the
// given store under the prefixes "img.", "pt.", "pos2d." and "pos3d.".
class FeatNet {
 public:
  FeatNet(ParamStore &store, const PipelineConfig &config, std::uint64_t seed);

  // Three stride-2 3x3 conv+relu stages, zero padded, channels 16 -> 32 -> D;
  // output is ceil(W/8) x ceil(H/8) x D.
  ImageFeatureGrid extract_image_features(Tape &t, const GrayImage &image) const;

  // Bilinear read of the grid at (u/8, v/8) per pixel, clamped at borders.
  // Cell (gx, gy) sits at grid coordinate (gx, gy).
  Var sample_bilinear(Tape &t, const ImageFeatureGrid &grid, const EdgePixelSet &pixels) const;

  // FPS -> abstraction at radius1 -> FPS -> abstraction at radius2. The
  // second stage keeps a quarter of the first stage's centers.
  PointFeatureSet encode_cloud(Tape &t, const PointCloud &cloud, Rng &rng) const;

  // Propagates encoded features onto the edge points (D channels per row).
  Var propagate_to_edges(Tape &t, const PointFeatureSet &sources, const EdgePointSet &edges) const;

  // Additive positional encodings: pixel coordinates normalized to [-1, 1]
  // by the image dims / (x, y, z)/100 ⊕ reflectance, each through a
  // two-layer MLP (hidden width 2D) to D channels.
  Var positional_embedding_2d(Tape &t, const EdgePixelSet &pixels, int width, int height) const;
  Var positional_embedding_3d(Tape &t, const EdgePointSet &points) const;

  std::int64_t dim() const { return dim_; }

 private:
  std::int64_t dim_;
  std::int64_t fps1_, fps2_;
  double radius1_, radius2_;
  std::int64_t k_max_;
  Linear conv1_, conv2_, conv3_;
  Mlp sa1_, sa2_, fp_;
  Mlp pos2d_, pos3d_;
};

}  // namespace edgereg
