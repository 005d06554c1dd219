#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "edgereg/edge3d.hpp"
#include "edgereg/errors.hpp"
#include "edgereg/geometry.hpp"
#include "edgereg/synth.hpp"

using namespace edgereg;

namespace {

// One ring's worth of points at the given ranges, marching through a small
// azimuth arc so segmentation sees a single sweep. z = 0 keeps range == r.
PointCloud cloud_from_radii(const std::vector<double> &radii, double az0 = -0.5,
                            double daz = 0.01) {
  PointCloud c;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double az = az0 + daz * static_cast<double>(i);
    CloudPoint p;
    p.x = radii[i] * std::cos(az);
    p.y = radii[i] * std::sin(az);
    c.points.push_back(p);
  }
  return c;
}

PointCloud cloud_from_reflectance(const std::vector<double> &reflect) {
  PointCloud c = cloud_from_radii(std::vector<double>(reflect.size(), 10.0));
  for (std::size_t i = 0; i < reflect.size(); ++i) c.points[i].reflectance = reflect[i];
  return c;
}

// n points sweeping azimuth from az_begin to az_end inclusive.
void append_sweep(PointCloud &c, int n, double az_begin, double az_end, double radius = 10.0) {
  for (int i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    const double az = az_begin + (az_end - az_begin) * t;
    CloudPoint p;
    p.x = radius * std::cos(az);
    p.y = radius * std::sin(az);
    c.points.push_back(p);
  }
}

PointCloud random_cloud(Rng &rng) {
  PointCloud c;
  const int sweeps = 1 + static_cast<int>(rng.uniform_int(3));
  for (int s = 0; s < sweeps; ++s) {
    const int n = 2 + static_cast<int>(rng.uniform_int(80));
    double az = -kPi + rng.uniform(0.0, 0.3);
    for (int i = 0; i < n; ++i) {
      CloudPoint p;
      const double r = rng.uniform(1.0, 60.0);
      p.x = r * std::cos(az);
      p.y = r * std::sin(az);
      p.z = rng.uniform(-2.0, 2.0);
      p.reflectance = rng.uniform(0.0, 1.0);
      c.points.push_back(p);
      az += rng.uniform(0.0, 1.8 * kPi / n);
    }
  }
  return c;
}

std::set<std::size_t> source_indices(const EdgePointSet &set, EdgeProvenance keep_a,
                                     EdgeProvenance keep_b) {
  std::set<std::size_t> out;
  for (const EdgePoint &p : set.points)
    if (p.provenance == keep_a || p.provenance == keep_b) out.insert(p.source_index);
  return out;
}

std::set<std::size_t> all_indices(const EdgePointSet &set) {
  std::set<std::size_t> out;
  for (const EdgePoint &p : set.points) out.insert(p.source_index);
  return out;
}

}  // namespace

TEST_CASE("ring segmentation finds sweep boundaries") {
  PointCloud empty;
  CHECK(segment_rings(empty).empty());

  PointCloud one;
  one.points.push_back({3.0, 4.0, 0.0, 0.5});
  const auto lone = segment_rings(one);
  REQUIRE(lone.size() == 1);
  CHECK(lone[0].start == 0);
  CHECK(lone[0].end == 1);

  PointCloud single;
  append_sweep(single, 100, -3.1, 3.1);
  const auto rings1 = segment_rings(single);
  REQUIRE(rings1.size() == 1);
  CHECK(rings1[0].start == 0);
  CHECK(rings1[0].end == 100);

  PointCloud two;
  append_sweep(two, 60, -3.1, 3.1);
  append_sweep(two, 40, -3.1, 3.1);
  const auto rings2 = segment_rings(two);
  REQUIRE(rings2.size() == 2);
  CHECK(rings2[0].start == 0);
  CHECK(rings2[0].end == 60);
  CHECK(rings2[1].start == 60);
  CHECK(rings2[1].end == 100);
}

TEST_CASE("ring segmentation handles clockwise sweeps") {
  PointCloud two;
  append_sweep(two, 50, 3.1, -3.1);
  append_sweep(two, 30, 3.1, -3.1);
  const auto rings = segment_rings(two);
  REQUIRE(rings.size() == 2);
  CHECK(rings[0].end == 50);
  CHECK(rings[1].start == 50);
  CHECK(rings[1].end == 80);
}

TEST_CASE("single-point rings are folded into a neighbour") {
  // Trailing fragment: a lone point past the wrap joins the ring before it.
  PointCloud trail = cloud_from_radii({10.0, 10.0, 10.0}, 0.0, 0.1);
  append_sweep(trail, 1, -3.0, -3.0);
  const auto rings_t = segment_rings(trail);
  REQUIRE(rings_t.size() == 1);
  CHECK(rings_t[0].start == 0);
  CHECK(rings_t[0].end == 4);

  // Leading fragment: two points separated by a wrap form one ring.
  PointCloud pair;
  append_sweep(pair, 1, 3.0, 3.0);
  append_sweep(pair, 1, -3.0, -3.0);
  const auto rings_p = segment_rings(pair);
  REQUIRE(rings_p.size() == 1);
  CHECK(rings_p[0].start == 0);
  CHECK(rings_p[0].end == 2);
}

TEST_CASE("ring segmentation matches the synthetic scanner layout") {
  SceneSpec spec;
  Rng rng(5);
  const auto [frame, truth] = generate_synthetic_frame(rng, spec);
  const auto rings = segment_rings(frame.cloud);
  REQUIRE(rings.size() == truth.ring_start.size());
  for (std::size_t i = 0; i < rings.size(); ++i) {
    CHECK(rings[i].start == truth.ring_start[i]);
    const std::size_t end =
        i + 1 < truth.ring_start.size() ? truth.ring_start[i + 1] : frame.cloud.size();
    CHECK(rings[i].end == end);
  }
  // Partition property: contiguous cover of the whole cloud.
  std::size_t cursor = 0;
  for (const ScanRing &r : rings) {
    CHECK(r.start == cursor);
    CHECK(r.size() >= 2);
    cursor = r.end;
  }
  CHECK(cursor == frame.cloud.size());
}

TEST_CASE("depth discontinuities follow the near-side selection rule") {
  const ScanRing whole5{0, 5};
  const auto up = depth_discontinuities(cloud_from_radii({5, 5, 5, 10, 10}), whole5, 0.1);
  CHECK(up == std::vector<std::size_t>{1});

  const ScanRing whole4{0, 4};
  const auto down = depth_discontinuities(cloud_from_radii({10, 10, 5, 5}), whole4, 0.1);
  CHECK(down == std::vector<std::size_t>{2});

  const auto flat = depth_discontinuities(cloud_from_radii({7, 7, 7, 7}), whole4, 0.1);
  CHECK(flat.empty());

  // Jump at the first pair clamps to the ring start instead of leaving it.
  const ScanRing whole3{0, 3};
  const auto clamped = depth_discontinuities(cloud_from_radii({5, 10, 10}), whole3, 0.1);
  CHECK(clamped == std::vector<std::size_t>{0});

  // Two consecutive up-jumps nominate the same index once.
  const auto dup = depth_discontinuities(cloud_from_radii({5, 10, 20}), whole3, 0.1);
  CHECK(dup == std::vector<std::size_t>{0});

  CHECK_THROWS_AS(depth_discontinuities(cloud_from_radii({5, 5}), ScanRing{0, 2}, 0.0),
                  ValidationError);
  CHECK_THROWS_AS(depth_discontinuities(cloud_from_radii({5, 5}), ScanRing{0, 9}, 0.1),
                  ValidationError);
}

TEST_CASE("reflectance discontinuities follow the near-side selection rule") {
  const ScanRing whole4{0, 4};
  const auto up = reflectance_discontinuities(cloud_from_reflectance({0.1, 0.1, 0.5, 0.5}),
                                              whole4, 0.2);
  CHECK(up == std::vector<std::size_t>{0});

  const ScanRing whole3{0, 3};
  const auto down =
      reflectance_discontinuities(cloud_from_reflectance({0.9, 0.4, 0.4}), whole3, 0.2);
  CHECK(down == std::vector<std::size_t>{1});

  const auto flat =
      reflectance_discontinuities(cloud_from_reflectance({0.6, 0.6, 0.6}), whole3, 0.2);
  CHECK(flat.empty());

  CHECK_THROWS_AS(
      reflectance_discontinuities(cloud_from_reflectance({0.1, 0.9}), ScanRing{0, 2}, -1.0),
      ValidationError);
}

TEST_CASE("discontinuity scans never cross ring seams") {
  // Two rings at very different ranges; each is internally flat, so the only
  // large range step sits exactly on the seam and must produce nothing.
  PointCloud c;
  append_sweep(c, 20, -3.0, 3.0, 5.0);
  append_sweep(c, 20, -3.0, 3.0, 50.0);
  const auto rings = segment_rings(c);
  REQUIRE(rings.size() == 2);
  const auto set = extract_edge_points(c, 0.1, 0.2);
  CHECK(set.empty());

  // A jump close to a seam stays inside its own ring.
  PointCloud d;
  append_sweep(d, 3, -3.0, 3.0, 5.0);   // ring 0: indices 0..2
  append_sweep(d, 3, -3.0, 3.0, 5.0);   // ring 1: indices 3..5
  d.points[3].x *= 4.0;                 // ring 1 opens far, then steps near
  d.points[3].y *= 4.0;
  const auto rings_d = segment_rings(d);
  REQUIRE(rings_d.size() == 2);
  CHECK(depth_discontinuities(d, rings_d[0], 0.1).empty());
  const auto sel = depth_discontinuities(d, rings_d[1], 0.1);
  REQUIRE(sel.size() == 1);
  CHECK(sel[0] >= rings_d[1].start);
  CHECK(sel[0] < rings_d[1].end);
}

TEST_CASE("combined extraction is the union of the single modes") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng(seed);
    const PointCloud c = random_cloud(rng);
    const auto combined = extract_edge_points(c, 0.1, 0.2, EdgeMode3D::kCombined);
    const auto depth_only = extract_edge_points(c, 0.1, 0.2, EdgeMode3D::kDepthOnly);
    const auto reflect_only = extract_edge_points(c, 0.1, 0.2, EdgeMode3D::kReflectOnly);

    for (const EdgePoint &p : depth_only.points) CHECK(p.provenance == EdgeProvenance::kDepth);
    for (const EdgePoint &p : reflect_only.points)
      CHECK(p.provenance == EdgeProvenance::kReflectance);

    const auto d = all_indices(depth_only);
    const auto r = all_indices(reflect_only);
    std::set<std::size_t> expected = d;
    expected.insert(r.begin(), r.end());
    CHECK(all_indices(combined) == expected);

    // Provenance agrees with membership in the single-mode sets.
    for (const EdgePoint &p : combined.points) {
      const bool in_d = d.count(p.source_index) > 0;
      const bool in_r = r.count(p.source_index) > 0;
      const EdgeProvenance want = in_d && in_r ? EdgeProvenance::kBoth
                                  : in_d       ? EdgeProvenance::kDepth
                                               : EdgeProvenance::kReflectance;
      CHECK(p.provenance == want);
    }

    // Rows are members of the source cloud, unique and ascending.
    std::size_t prev_index = 0;
    bool first = true;
    for (const EdgePoint &p : combined.points) {
      REQUIRE(p.source_index < c.size());
      const CloudPoint &src = c.points[p.source_index];
      CHECK(p.x == src.x);
      CHECK(p.y == src.y);
      CHECK(p.z == src.z);
      CHECK(p.reflectance == src.reflectance);
      if (!first) CHECK(p.source_index > prev_index);
      prev_index = p.source_index;
      first = false;
    }
  }
}

TEST_CASE("depth selection is scale invariant") {
  for (std::uint64_t seed = 40; seed < 50; ++seed) {
    Rng rng(seed);
    PointCloud c = random_cloud(rng);
    PointCloud scaled = c;
    for (CloudPoint &p : scaled.points) {
      p.x *= 7.25;
      p.y *= 7.25;
      p.z *= 7.25;
    }
    const auto base = extract_edge_points(c, 0.1, 0.2, EdgeMode3D::kDepthOnly);
    const auto big = extract_edge_points(scaled, 0.1, 0.2, EdgeMode3D::kDepthOnly);
    CHECK(all_indices(base) == all_indices(big));
  }
}

TEST_CASE("depth-only mode ignores pure reflectance transitions") {
  PointCloud c = cloud_from_reflectance({0.1, 0.1, 0.9, 0.9, 0.1, 0.1});
  CHECK(extract_edge_points(c, 0.1, 0.2, EdgeMode3D::kDepthOnly).empty());
  CHECK_FALSE(extract_edge_points(c, 0.1, 0.2, EdgeMode3D::kReflectOnly).empty());
}

TEST_CASE("synthetic silhouette steps are recovered within one ring step") {
  const PipelineConfig cfg;  // exercises the default thresholds
  int depth_pairs = 0, depth_found = 0;
  int reflect_pairs = 0, reflect_found = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SceneSpec spec;
    Rng rng(seed);
    const auto [frame, truth] = generate_synthetic_frame(rng, spec);
    const auto set = extract_edge_points(frame.cloud, cfg.eps_depth, cfg.eps_reflect);

    const auto depth_set = source_indices(set, EdgeProvenance::kDepth, EdgeProvenance::kBoth);
    const auto reflect_set =
        source_indices(set, EdgeProvenance::kReflectance, EdgeProvenance::kBoth);
    auto near_hit = [](const std::set<std::size_t> &sel, std::size_t i) {
      return sel.count(i) || (i > 0 && sel.count(i - 1)) || sel.count(i + 1);
    };

    for (std::size_t k = 0; k < truth.ring_start.size(); ++k) {
      const std::size_t begin = truth.ring_start[k];
      const std::size_t end =
          k + 1 < truth.ring_start.size() ? truth.ring_start[k + 1] : frame.cloud.size();
      for (std::size_t i = begin; i + 1 < end; ++i) {
        const double r = frame.cloud.points[i].range();
        const double ratio = (frame.cloud.points[i + 1].range() - r) / r;
        if (std::abs(ratio) > 2.0 * cfg.eps_depth) {
          ++depth_pairs;
          depth_found += near_hit(depth_set, ratio > 0.0 ? i : i + 1) ? 1 : 0;
        }
        const double dr =
            frame.cloud.points[i + 1].reflectance - frame.cloud.points[i].reflectance;
        if (std::abs(dr) > 2.0 * cfg.eps_reflect) {
          ++reflect_pairs;
          reflect_found += near_hit(reflect_set, dr > 0.0 ? i : i + 1) ? 1 : 0;
        }
      }
    }
  }
  // The scenes must actually exercise both tests for this to mean anything.
  REQUIRE(depth_pairs > 50);
  REQUIRE(reflect_pairs > 10);
  CHECK(depth_found == depth_pairs);
  CHECK(reflect_found == reflect_pairs);
}

TEST_CASE("edge point debug dump is well formed") {
  PointCloud c = cloud_from_radii({5, 5, 5, 10, 10});
  // Reflectance step between indices 2 and 3 selects index 1, same as the
  // depth rule, so that row carries the "both" tag.
  for (std::size_t i = 3; i < 5; ++i) c.points[i].reflectance = 0.9;
  const auto set = extract_edge_points(c, 0.1, 0.2);
  std::ostringstream out;
  write_edge_points_csv(out, set);
  const std::string text = out.str();
  CHECK(text.rfind("x,y,z,reflectance,provenance\n", 0) == 0);
  CHECK(text.find("both") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(set.size()) + 1);
}

TEST_CASE("degenerate clouds extract nothing") {
  PointCloud empty;
  CHECK(extract_edge_points(empty, 0.1, 0.2).empty());
  PointCloud one;
  one.points.push_back({1.0, 2.0, 3.0, 0.4});
  CHECK(extract_edge_points(one, 0.1, 0.2).empty());
  CHECK_THROWS_AS(extract_edge_points(one, 0.1, -0.2), ValidationError);
}
