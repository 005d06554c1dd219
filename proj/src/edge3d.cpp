#include "edgereg/edge3d.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>

#include "edgereg/errors.hpp"
#include "edgereg/geometry.hpp"

namespace edgereg {

namespace {

void require_ring(const PointCloud &cloud, const ScanRing &ring) {
  if (ring.start > ring.end || ring.end > cloud.size())
    throw ValidationError("scan ring range lies outside the cloud");
}

}  // namespace

const char *provenance_label(EdgeProvenance p) {
  switch (p) {
    case EdgeProvenance::kDepth:
      return "depth";
    case EdgeProvenance::kReflectance:
      return "reflectance";
    default:
      return "both";
  }
}

std::vector<ScanRing> segment_rings(const PointCloud &cloud) {
  std::vector<ScanRing> rings;
  const std::size_t n = cloud.size();
  if (n == 0) return rings;

  std::vector<std::size_t> starts{0};
  double prev = std::atan2(cloud.points[0].y, cloud.points[0].x);
  double dir = 0.0;  // +1 azimuth increasing along the sweep, -1 decreasing
  for (std::size_t i = 1; i < n; ++i) {
    const double az = std::atan2(cloud.points[i].y, cloud.points[i].x);
    const double d = az - prev;
    // A sweep wraps when the azimuth jumps more than pi against its running
    // direction; before the direction is known, increasing is assumed.
    const bool wrap = dir < 0.0 ? d > kPi : d < -kPi;
    if (wrap) {
      starts.push_back(i);
      dir = 0.0;  // direction re-learned inside the new ring
    } else if (std::abs(d) > 1e-12 && std::abs(d) < kPi) {
      dir = d > 0.0 ? 1.0 : -1.0;
    }
    prev = az;
  }
  starts.push_back(n);
  for (std::size_t i = 0; i + 1 < starts.size(); ++i) rings.push_back({starts[i], starts[i + 1]});

  // Fold single-point rings into the previous ring (or the following one at
  // the very front); a lone one-point cloud keeps its own ring.
  std::vector<ScanRing> merged;
  for (const ScanRing &r : rings) {
    if (r.size() >= 2 || merged.empty())
      merged.push_back(r);
    else
      merged.back().end = r.end;
  }
  if (merged.size() >= 2 && merged.front().size() < 2) {
    merged[1].start = merged.front().start;
    merged.erase(merged.begin());
  }
  return merged;
}

std::vector<std::size_t> depth_discontinuities(const PointCloud &cloud, const ScanRing &ring,
                                               double eps_depth) {
  if (!(eps_depth > 0.0)) throw ValidationError("eps_depth must be > 0");
  require_ring(cloud, ring);
  std::vector<std::size_t> out;
  for (std::size_t i = ring.start; i + 1 < ring.end; ++i) {
    const double r = cloud.points[i].range();
    if (!(r > 0.0)) continue;  // ratio undefined at the sensor origin
    const double ratio = (cloud.points[i + 1].range() - r) / r;
    if (ratio > eps_depth)
      out.push_back(i > ring.start ? i - 1 : ring.start);
    else if (ratio < -eps_depth)
      out.push_back(i + 1);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::size_t> reflectance_discontinuities(const PointCloud &cloud, const ScanRing &ring,
                                                     double eps_reflect) {
  if (!(eps_reflect > 0.0)) throw ValidationError("eps_reflect must be > 0");
  require_ring(cloud, ring);
  std::vector<std::size_t> out;
  for (std::size_t i = ring.start; i + 1 < ring.end; ++i) {
    const double delta = cloud.points[i + 1].reflectance - cloud.points[i].reflectance;
    if (delta > eps_reflect)
      out.push_back(i > ring.start ? i - 1 : ring.start);
    else if (delta < -eps_reflect)
      out.push_back(i + 1);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

EdgePointSet extract_edge_points(const PointCloud &cloud, double eps_depth, double eps_reflect,
                                 EdgeMode3D mode) {
  if (!(eps_depth > 0.0) || !(eps_reflect > 0.0))
    throw ValidationError("edge thresholds must be > 0");
  const bool want_depth = mode != EdgeMode3D::kReflectOnly;
  const bool want_reflect = mode != EdgeMode3D::kDepthOnly;
  std::vector<std::uint8_t> flags(cloud.size(), 0);  // bit 0 depth, bit 1 reflectance
  for (const ScanRing &ring : segment_rings(cloud)) {
    if (want_depth)
      for (std::size_t i : depth_discontinuities(cloud, ring, eps_depth)) flags[i] |= 1;
    if (want_reflect)
      for (std::size_t i : reflectance_discontinuities(cloud, ring, eps_reflect)) flags[i] |= 2;
  }
  EdgePointSet set;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] == 0) continue;
    const CloudPoint &p = cloud.points[i];
    EdgePoint e;
    e.source_index = i;
    e.x = p.x;
    e.y = p.y;
    e.z = p.z;
    e.reflectance = p.reflectance;
    e.provenance = flags[i] == 3   ? EdgeProvenance::kBoth
                   : flags[i] == 1 ? EdgeProvenance::kDepth
                                   : EdgeProvenance::kReflectance;
    set.points.push_back(e);
  }
  return set;
}

void write_edge_points_csv(std::ostream &out, const EdgePointSet &set) {
  std::ostringstream line;
  line << std::setprecision(17);
  line << "x,y,z,reflectance,provenance\n";
  for (const EdgePoint &p : set.points) {
    line << p.x << ',' << p.y << ',' << p.z << ',' << p.reflectance << ','
         << provenance_label(p.provenance) << '\n';
  }
  out << line.str();
}

}  // namespace edgereg
