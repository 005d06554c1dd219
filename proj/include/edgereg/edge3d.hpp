#pragma once

#include <cstddef>
#include <ostream>
#include <vector>

#include "edgereg/dataio.hpp"

namespace edgereg {

// Contiguous run of scan-order indices covering one sensor revolution.
struct ScanRing {
  std::size_t start = 0;  // first index, inclusive
  std::size_t end = 0;    // one past the last index

  std::size_t size() const { return end - start; }
};

enum class EdgeProvenance { kDepth, kReflectance, kBoth };

const char *provenance_label(EdgeProvenance p);

struct EdgePoint {
  std::size_t source_index = 0;  // row in the originating cloud
  double x = 0.0, y = 0.0, z = 0.0;
  double reflectance = 0.0;
  EdgeProvenance provenance = EdgeProvenance::kDepth;

  Eigen::Vector3d xyz() const { return {x, y, z}; }
};

// Edge points in ascending source-index order, one row per cloud point.
struct EdgePointSet {
  std::vector<EdgePoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// Splits a scan-ordered cloud into rings at azimuth wrap-arounds: a jump of
// more than pi against the running sweep direction starts a new ring.
// Single-point rings are folded into a neighbouring ring when one exists.
std::vector<ScanRing> segment_rings(const PointCloud &cloud);

// Indices where the range ratio to the next in-ring point exceeds eps_depth.
// A jump away from the sensor selects the point one before the near edge of
// the jump; a jump toward the sensor selects the point just after it. Both
// stay clamped inside the ring. Sorted, duplicate-free.
std::vector<std::size_t> depth_discontinuities(const PointCloud &cloud, const ScanRing &ring,
                                               double eps_depth);

// Same selection scheme on raw reflectance differences against eps_reflect.
std::vector<std::size_t> reflectance_discontinuities(const PointCloud &cloud,
                                                     const ScanRing &ring, double eps_reflect);

// Union of depth- and reflectance-discontinuous points over all rings, each
// tagged with which test selected it. mode narrows the union for ablations.
EdgePointSet extract_edge_points(const PointCloud &cloud, double eps_depth, double eps_reflect,
                                 EdgeMode3D mode = EdgeMode3D::kCombined);

// Debug dump, one "x,y,z,reflectance,provenance" row per point.
void write_edge_points_csv(std::ostream &out, const EdgePointSet &set);

}  // namespace edgereg
