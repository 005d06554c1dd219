#include "edgereg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace edgereg {

double PlantedImageEdge::length_px() const {
  return std::hypot(u2 - u1, v2 - v1);
}

void SceneSpec::validate() const {
  if (!ground_enabled && max_boxes == 0)
    throw DegeneracyError("scene has no surfaces: ground disabled and no boxes");
  if (min_boxes < 0 || max_boxes < min_boxes)
    throw ValidationError("box count range is inverted");
  if (rings < 2) throw ValidationError("need at least 2 rings");
  if (!(elev_min_deg < elev_max_deg) || elev_max_deg >= 0.0)
    throw ValidationError("ring elevations must be negative and increasing");
  if (azimuth_step_deg <= 0.0) throw ValidationError("azimuth step must be > 0");
  if (image_width < 16 || image_height < 16) throw ValidationError("image too small");
  if (!(fx > 0.0 && fy > 0.0)) throw ValidationError("focal lengths must be > 0");
  if (ground_enabled && ground_z >= 0.0)
    throw ValidationError("ground must lie below the sensor");
}

namespace {

struct Box {
  Eigen::Vector3d lo, hi;
  double albedo = 0.5;
  double reflectance = 0.6;
};

struct Stripe {
  // Band x in [x0, x1], |y| <= y_max(x) keeps the stripe inside the wedge.
  double x0 = 0, x1 = 0;
  double tan_wedge = 0.6;
  bool contains(double x, double y) const {
    return x >= x0 && x <= x1 && std::abs(y) <= x * tan_wedge;
  }
};

struct Scene {
  SceneSpec spec;
  std::vector<Box> boxes;
  std::vector<Stripe> stripes;
  Eigen::Vector3d light = Eigen::Vector3d(-0.35, -0.25, 0.9).normalized();
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int surface = -1;                    // -1 none, 0 ground, 1+i box i
  Eigen::Vector3d normal{0, 0, 1};
  double albedo = 0.0;
  double reflectance = 0.0;
};

// Slab intersection; `normal` reports the entry face.
bool intersect_box(const Box &b, const Eigen::Vector3d &o, const Eigen::Vector3d &d,
                   double &t_enter, Eigen::Vector3d &normal) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d(a)) < 1e-12) {
      if (o(a) < b.lo(a) || o(a) > b.hi(a)) return false;
      continue;
    }
    double ta = (b.lo(a) - o(a)) / d(a);
    double tb = (b.hi(a) - o(a)) / d(a);
    double face_sign = -1.0;
    if (ta > tb) {
      std::swap(ta, tb);
      face_sign = 1.0;
    }
    if (ta > t0) {
      t0 = ta;
      axis = a;
      sign = face_sign;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (axis < 0 || t0 <= 1e-9) return false;  // inside or behind
  t_enter = t0;
  normal = Eigen::Vector3d::Zero();
  normal(axis) = sign;
  return true;
}

Hit cast_ray(const Scene &scene, const Eigen::Vector3d &o, const Eigen::Vector3d &d) {
  Hit best;
  if (scene.spec.ground_enabled && d.z() < -1e-12) {
    const double t = (scene.spec.ground_z - o.z()) / d.z();
    if (t > 1e-9) {
      const Eigen::Vector3d p = o + t * d;
      if (p.head<2>().norm() <= scene.spec.ground_radius) {
        best.t = t;
        best.surface = 0;
        best.normal = Eigen::Vector3d::UnitZ();
        bool striped = false;
        for (const auto &s : scene.stripes)
          if (s.contains(p.x(), p.y())) {
            striped = true;
            break;
          }
        best.albedo = striped ? scene.spec.stripe_albedo : scene.spec.ground_albedo;
        best.reflectance =
            striped ? scene.spec.stripe_reflectance : scene.spec.ground_reflectance;
      }
    }
  }
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    double t;
    Eigen::Vector3d n;
    if (intersect_box(scene.boxes[i], o, d, t, n) && t < best.t) {
      best.t = t;
      best.surface = 1 + static_cast<int>(i);
      best.normal = n;
      best.albedo = scene.boxes[i].albedo;
      best.reflectance = scene.boxes[i].reflectance;
    }
  }
  return best;
}

double shade(const Scene &scene, const Hit &hit) {
  const double lambert = std::max(0.0, hit.normal.dot(scene.light));
  return hit.albedo * (0.35 + 0.65 * lambert);
}

// Deterministic per-pixel noise so renders are reproducible byte for byte.
double pixel_noise(std::uint64_t seed, int u, int v, double amplitude) {
  const std::uint64_t h = splitmix64(
      seed ^ (static_cast<std::uint64_t>(u) * 0x9E3779B97F4A7C15ull) ^
      (static_cast<std::uint64_t>(v) * 0xBF58476D1CE4E5B9ull));
  const double unit = static_cast<double>(h >> 11) * 0x1.0p-53;
  return (2.0 * unit - 1.0) * amplitude;
}

Scene build_scene(Rng &rng, const SceneSpec &spec) {
  Scene scene;
  scene.spec = spec;
  const double wedge = deg_to_rad(spec.box_wedge_deg);

  auto overlaps = [&](const Box &b) {
    for (const auto &other : scene.boxes) {
      const bool apart = b.hi.x() + 0.5 < other.lo.x() || other.hi.x() + 0.5 < b.lo.x() ||
                         b.hi.y() + 0.5 < other.lo.y() || other.hi.y() + 0.5 < b.lo.y();
      if (!apart) return true;
    }
    return false;
  };

  auto place_box = [&](double azimuth, double dist) {
    const double sx = rng.uniform(spec.box_min_side, spec.box_max_side);
    const double sy = rng.uniform(spec.box_min_side, spec.box_max_side);
    const double h = rng.uniform(spec.box_min_height, spec.box_max_height);
    const double cx = dist * std::cos(azimuth);
    const double cy = dist * std::sin(azimuth);
    Box b;
    b.lo = {cx - sx / 2, cy - sy / 2, spec.ground_z};
    b.hi = {cx + sx / 2, cy + sy / 2, spec.ground_z + h};
    // Bright materials return more light in both sensors, so reflectance
    // tracks albedo up to per-surface jitter.
    b.albedo = rng.uniform(0.5, 0.82);
    const double brightness = (b.albedo - 0.5) / 0.32;
    b.reflectance =
        std::clamp(0.55 + 0.3 * brightness + rng.uniform(-0.04, 0.04), 0.55, 0.85);
    return b;
  };

  const int n_boxes = spec.min_boxes +
                      static_cast<int>(rng.uniform_int(
                          static_cast<std::uint64_t>(spec.max_boxes - spec.min_boxes + 1)));
  for (int i = 0; i < n_boxes; ++i) {
    for (int attempt = 0; attempt < 60; ++attempt) {
      Box b = place_box(rng.uniform(-wedge, wedge),
                        rng.uniform(spec.box_min_dist, spec.box_max_dist));
      if (!overlaps(b)) {
        scene.boxes.push_back(b);
        break;
      }
    }
  }
  for (int i = 0; i < spec.outside_boxes; ++i) {
    for (int attempt = 0; attempt < 60; ++attempt) {
      const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
      Box b = place_box(side * rng.uniform(deg_to_rad(60.0), deg_to_rad(130.0)),
                        rng.uniform(5.0, 14.0));
      if (!overlaps(b)) {
        scene.boxes.push_back(b);
        break;
      }
    }
  }

  if (spec.ground_enabled) {
    for (int i = 0; i < spec.stripe_count; ++i) {
      Stripe s;
      s.x0 = rng.uniform(spec.stripe_min_dist, spec.stripe_max_dist);
      s.x1 = s.x0 + spec.stripe_width;
      s.tan_wedge = std::tan(wedge);
      scene.stripes.push_back(s);
    }
  }
  return scene;
}

PoseSE3 sample_camera_pose(Rng &rng, const SceneSpec &spec) {
  // Camera axes in LiDAR coordinates: z forward (+x), x right (-y), y down (-z).
  PoseSE3 base;
  base.R << 0, -1, 0,
            0, 0, -1,
            1, 0, 0;
  const double j = deg_to_rad(spec.cam_jitter_deg);
  PoseSE3 jitter = se3_compose(
      se3_compose(PoseSE3::rot_x(rng.uniform(-j, j)), PoseSE3::rot_y(rng.uniform(-j, j))),
      PoseSE3::rot_z(rng.uniform(-j, j)));
  jitter.t << rng.uniform(-spec.cam_jitter_trans, spec.cam_jitter_trans),
      rng.uniform(-spec.cam_jitter_trans, spec.cam_jitter_trans),
      rng.uniform(-spec.cam_jitter_trans, spec.cam_jitter_trans);
  return se3_compose(jitter, base);
}

float snap_f32(double v) { return static_cast<float>(v); }

void scan_lidar(const Scene &scene, PointCloud &cloud, SyntheticTruth &truth) {
  const SceneSpec &spec = scene.spec;
  const int n_az = static_cast<int>(std::lround(360.0 / spec.azimuth_step_deg));
  const Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  for (int k = 0; k < spec.rings; ++k) {
    truth.ring_start.push_back(cloud.size());
    const double elev = deg_to_rad(
        spec.elev_min_deg +
        (spec.elev_max_deg - spec.elev_min_deg) * k / static_cast<double>(spec.rings - 1));
    const double ce = std::cos(elev), se = std::sin(elev);
    for (int a = 0; a < n_az; ++a) {
      const double az = -kPi + (a + 0.5) * 2.0 * kPi / n_az;
      const Eigen::Vector3d d(ce * std::cos(az), ce * std::sin(az), se);
      const Hit hit = cast_ray(scene, origin, d);
      if (hit.surface < 0 || hit.t > spec.max_range) continue;
      const Eigen::Vector3d p = origin + hit.t * d;
      CloudPoint cp;
      cp.x = snap_f32(p.x());
      cp.y = snap_f32(p.y());
      cp.z = snap_f32(p.z());
      cp.reflectance = snap_f32(hit.reflectance);
      cloud.points.push_back(cp);
      truth.point_surface.push_back(hit.surface);
    }
  }
  // Rings that got no returns would leave empty ranges; drop those markers.
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < truth.ring_start.size(); ++i) {
    const std::size_t end =
        i + 1 < truth.ring_start.size() ? truth.ring_start[i + 1] : cloud.size();
    if (end > truth.ring_start[i]) starts.push_back(truth.ring_start[i]);
  }
  truth.ring_start = std::move(starts);
}

void render_image(const Scene &scene, const CameraIntrinsics &K, const PoseSE3 &T_gt,
                  std::uint64_t noise_seed, GrayImage &image, SyntheticTruth &truth) {
  const SceneSpec &spec = scene.spec;
  image = GrayImage::filled(spec.image_width, spec.image_height, 0.0);
  truth.surface_id.assign(image.intensities.size(), -1);
  truth.depth_buffer.assign(image.intensities.size(),
                            std::numeric_limits<double>::infinity());
  const PoseSE3 cam_to_lidar = se3_invert(T_gt);
  const Eigen::Vector3d origin = cam_to_lidar.t;
  for (int v = 0; v < spec.image_height; ++v) {
    for (int u = 0; u < spec.image_width; ++u) {
      // 3x3 supersampling: without it, step edges land on half-integer pixel
      // boundaries and edge detectors localize the staircase, not the line.
      double value = 0.0;
      for (int sv = -1; sv <= 1; ++sv)
        for (int su = -1; su <= 1; ++su) {
          // Ray through the continuous coordinate; z-component 1 makes the
          // ray parameter equal the camera depth.
          const Eigen::Vector3d d_cam((u + su / 3.0 - K.cx) / K.fx,
                                      (v + sv / 3.0 - K.cy) / K.fy, 1.0);
          const Eigen::Vector3d d = cam_to_lidar.R * d_cam;
          const Hit hit = cast_ray(scene, origin, d);
          value += hit.surface >= 0 ? shade(scene, hit) : spec.sky_intensity;
        }
      value /= 9.0;
      // Truth buffers stay point-sampled through the pixel center.
      const Eigen::Vector3d d_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      const Hit hit = cast_ray(scene, origin, cam_to_lidar.R * d_cam);
      const std::size_t idx = static_cast<std::size_t>(v) * spec.image_width + u;
      if (hit.surface >= 0) {
        truth.surface_id[idx] = hit.surface;
        truth.depth_buffer[idx] = hit.t;
      }
      value += pixel_noise(noise_seed, u, v, spec.noise_amplitude);
      // Snap to the 8-bit grid so the in-memory frame equals its file form.
      value = std::clamp(value, 0.0, 1.0);
      value = std::lround(value * 255.0) / 255.0;
      image.at(u, v) = value;
    }
  }
}

// Projected screen-space segment of a box edge, used to keep planted runs
// clear of junctions with other edges.
struct ScreenEdge {
  double u1 = 0, v1 = 0, u2 = 0, v2 = 0;
};

double point_segment_distance(double px, double py, const ScreenEdge &e) {
  const double dx = e.u2 - e.u1, dy = e.v2 - e.v1;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 1e-12) t = std::clamp(((px - e.u1) * dx + (py - e.v1) * dy) / len2, 0.0, 1.0);
  return std::hypot(px - (e.u1 + t * dx), py - (e.v1 + t * dy));
}

// Walks one vertical box edge, samples visibility against the depth buffer and
// local contrast in the rendered image, and emits maximal good runs.
void plant_vertical_edge(const Scene &scene, const CameraIntrinsics &K,
                         const PoseSE3 &T_gt, const GrayImage &image,
                         const SyntheticTruth &truth, const Eigen::Vector3d &bottom,
                         const Eigen::Vector3d &top,
                         const std::vector<ScreenEdge> &other_edges,
                         std::vector<PlantedImageEdge> &out) {
  const SceneSpec &spec = scene.spec;
  const int steps = 220;
  struct Sample {
    double u, v;
    bool good;
  };
  std::vector<Sample> samples;
  samples.reserve(steps + 1);

  const Projection pb = project_point(K, T_gt, bottom);
  const Projection pt = project_point(K, T_gt, top);
  if (!pb.in_front || !pt.in_front) return;
  const double du = pt.u - pb.u, dv = pt.v - pb.v;
  const double len = std::hypot(du, dv);
  if (len < 1.0) return;
  // Unit normal to the projected edge, used for the contrast probe.
  const double nu = -dv / len, nv = du / len;

  for (int s = 0; s <= steps; ++s) {
    const double f = s / static_cast<double>(steps);
    const Eigen::Vector3d p = bottom + f * (top - bottom);
    const Projection pr = project_point(K, T_gt, p);
    Sample smp{pr.u, pr.v, false};
    const int ui = static_cast<int>(std::lround(pr.u));
    const int vi = static_cast<int>(std::lround(pr.v));
    if (pr.in_front && ui >= 2 && ui < spec.image_width - 2 && vi >= 2 &&
        vi < spec.image_height - 2) {
      // Visible when the depth buffer near the edge agrees with the edge depth.
      bool visible = false;
      for (int dy = -1; dy <= 1 && !visible; ++dy)
        for (int dx = -1; dx <= 1 && !visible; ++dx) {
          const double buf =
              truth.depth_buffer[static_cast<std::size_t>(vi + dy) * spec.image_width +
                                 (ui + dx)];
          if (std::isfinite(buf) && std::abs(buf - pr.depth) < 0.25) visible = true;
        }
      if (visible) {
        // Probe two offsets per side: a genuine step edge is locally flat on
        // each side and contrasty across. A thin sliver between two surfaces
        // fails the flatness check and is not an honest step edge.
        const auto probe = [&](double k, double &val) {
          const int pu = static_cast<int>(std::lround(pr.u + k * nu));
          const int pv = static_cast<int>(std::lround(pr.v + k * nv));
          if (!image.in_bounds(pu, pv)) return false;
          val = image.at(pu, pv);
          return true;
        };
        double p1 = 0, p2 = 0, m1 = 0, m2 = 0;
        if (probe(1.3, p1) && probe(2.6, p2) && probe(-1.3, m1) && probe(-2.6, m2)) {
          const bool flat = std::abs(p1 - p2) <= 0.05 && std::abs(m1 - m2) <= 0.05;
          const double contrast = std::abs(0.5 * (p1 + p2) - 0.5 * (m1 + m2));
          smp.good = flat && contrast >= spec.image_edge_min_contrast;
        }
        // Runs must end before junctions: near a crossing or touching edge
        // the image is a corner, not a step.
        for (const ScreenEdge &e : other_edges) {
          if (!smp.good) break;
          if (point_segment_distance(pr.u, pr.v, e) < 2.5) smp.good = false;
        }
      }
    }
    samples.push_back(smp);
  }

  // Maximal runs of good samples become planted edges if long enough.
  std::size_t i = 0;
  while (i < samples.size()) {
    if (!samples[i].good) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < samples.size() && samples[j + 1].good) ++j;
    PlantedImageEdge e{samples[i].u, samples[i].v, samples[j].u, samples[j].v};
    if (e.length_px() >= spec.image_edge_min_px) out.push_back(e);
    i = j + 1;
  }
}

void plant_image_edges(const Scene &scene, const CameraIntrinsics &K, const PoseSE3 &T_gt,
                       const GrayImage &image, SyntheticTruth &truth) {
  // Project every box edge (4 vertical + 8 horizontal per box). A planted run
  // keeps clear of all edges except the one being walked, which both rejects
  // nearly edge-on boxes (a parallel edge inside the blur radius) and ends
  // runs at T-junctions with other boxes.
  struct Candidate {
    Eigen::Vector3d bottom, top;
    std::size_t screen_index = 0;  // position in `edges` when projectable
    bool projectable = false;
  };
  std::vector<ScreenEdge> edges;
  std::vector<Candidate> candidates;
  const auto add_edge = [&](const Eigen::Vector3d &a, const Eigen::Vector3d &b) {
    const Projection pa = project_point(K, T_gt, a);
    const Projection pb = project_point(K, T_gt, b);
    if (!pa.in_front || !pb.in_front) return false;
    edges.push_back({pa.u, pa.v, pb.u, pb.v});
    return true;
  };
  for (const auto &b : scene.boxes) {
    const double x0 = b.lo.x(), x1 = b.hi.x(), y0 = b.lo.y(), y1 = b.hi.y();
    const double z0 = b.lo.z(), z1 = b.hi.z();
    for (const auto &[x, y] : {std::pair{x0, y0}, {x0, y1}, {x1, y0}, {x1, y1}}) {
      Candidate c;
      c.bottom = {x, y, z0};
      c.top = {x, y, z1};
      c.projectable = add_edge(c.bottom, c.top);
      if (c.projectable) c.screen_index = edges.size() - 1;
      candidates.push_back(c);
    }
    for (const double z : {z0, z1}) {
      add_edge({x0, y0, z}, {x1, y0, z});
      add_edge({x0, y1, z}, {x1, y1, z});
      add_edge({x0, y0, z}, {x0, y1, z});
      add_edge({x1, y0, z}, {x1, y1, z});
    }
  }

  // Stripe boundaries paint strong lines on the ground and the horizon ends
  // it; both form junctions where box edges cross them on screen.
  if (scene.spec.ground_enabled) {
    for (const Stripe &s : scene.stripes)
      for (const double xb : {s.x0, s.x1})
        add_edge({xb, -xb * s.tan_wedge, scene.spec.ground_z},
                 {xb, xb * s.tan_wedge, scene.spec.ground_z});
    // Horizon: pixels whose viewing ray is parallel to the ground plane.
    // With d_cam = ((u-cx)/fx, (v-cy)/fy, 1), the condition is
    // row3(R_cam_to_lidar) . d_cam = 0, a line in (u, v).
    const Eigen::Vector3d r3 = T_gt.R.col(2);  // third row of the inverse
    if (std::abs(r3.y()) > 1e-6) {
      const auto horizon_v = [&](double u) {
        return K.cy - K.fy * (r3.z() + r3.x() * (u - K.cx) / K.fx) / r3.y();
      };
      edges.push_back({-10.0, horizon_v(-10.0), scene.spec.image_width + 10.0,
                       horizon_v(scene.spec.image_width + 10.0)});
    }
  }

  for (const Candidate &c : candidates) {
    if (!c.projectable) continue;
    std::vector<ScreenEdge> others;
    others.reserve(edges.size() - 1);
    for (std::size_t j = 0; j < edges.size(); ++j)
      if (j != c.screen_index) others.push_back(edges[j]);

    // A touching near-collinear edge makes the detector fit one merged,
    // slightly bent segment whose line is not the candidate's; skip the
    // candidate outright rather than plant a run the fit will drift from.
    const ScreenEdge &ce = edges[c.screen_index];
    const double c_ang = std::atan2(ce.v2 - ce.v1, ce.u2 - ce.u1);
    bool contaminated = false;
    for (const ScreenEdge &e : others) {
      if (std::hypot(e.u2 - e.u1, e.v2 - e.v1) < 8.0) continue;
      // Anything within the detector's 22.5 degree merge tolerance can fuse.
      double d = std::abs(std::remainder(std::atan2(e.v2 - e.v1, e.u2 - e.u1) - c_ang, kPi));
      if (std::min(d, kPi - d) > deg_to_rad(25.0)) continue;
      for (int s = 0; s <= 8 && !contaminated; ++s) {
        const double f = s / 8.0;
        if (point_segment_distance(ce.u1 + f * (ce.u2 - ce.u1),
                                   ce.v1 + f * (ce.v2 - ce.v1), e) < 2.5)
          contaminated = true;
      }
      if (contaminated) break;
    }
    if (contaminated) continue;

    plant_vertical_edge(scene, K, T_gt, image, truth, c.bottom, c.top, others,
                        truth.image_edges);
  }
}

}  // namespace

SyntheticFrame generate_synthetic_frame(Rng &rng, const SceneSpec &spec) {
  spec.validate();
  const std::uint64_t noise_seed = rng.next_u64();
  Scene scene = build_scene(rng, spec);

  SyntheticFrame out;
  out.frame.K.fx = spec.fx;
  out.frame.K.fy = spec.fy;
  out.frame.K.cx = spec.image_width / 2.0;
  out.frame.K.cy = spec.image_height / 2.0;
  out.frame.T_gt = sample_camera_pose(rng, spec);

  scan_lidar(scene, out.frame.cloud, out.truth);
  render_image(scene, out.frame.K, out.frame.T_gt, noise_seed, out.frame.image, out.truth);
  plant_image_edges(scene, out.frame.K, out.frame.T_gt, out.frame.image, out.truth);
  return out;
}

}  // namespace edgereg
