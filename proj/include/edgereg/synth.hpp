#pragma once

#include <cstdint>
#include <vector>

#include "edgereg/dataio.hpp"
#include "edgereg/geometry.hpp"
#include "edgereg/rng.hpp"

namespace edgereg {

// Desk-scale scene: a ground plane with high-reflectance painted stripes and a
// handful of axis-aligned boxes, scanned by a ring LiDAR at the origin and
// photographed by a forward-looking camera. Every discontinuity the pipeline
// is supposed to find exists by construction and is recorded as ground truth.
struct SceneSpec {
  int min_boxes = 4, max_boxes = 6;     // inside the camera wedge
  int outside_boxes = 2;                // behind / beside the camera, FOV negatives
  double box_min_dist = 6.0, box_max_dist = 20.0;
  double box_wedge_deg = 34.0;          // wedge half-angle for in-view boxes
  double box_min_side = 0.9, box_max_side = 2.8;
  double box_min_height = 1.0, box_max_height = 2.6;

  bool ground_enabled = true;
  double ground_z = -1.7;
  double ground_radius = 200.0;
  double ground_albedo = 0.22, ground_reflectance = 0.12;

  int stripe_count = 6;                 // painted bands, clipped to the wedge
  double stripe_width = 0.5;
  double stripe_min_dist = 5.0, stripe_max_dist = 26.0;
  double stripe_albedo = 0.88, stripe_reflectance = 0.9;

  int rings = 24;
  double elev_min_deg = -25.0, elev_max_deg = -2.0;
  double azimuth_step_deg = 0.5;
  double max_range = 80.0;

  int image_width = 320, image_height = 160;
  double fx = 190.0, fy = 190.0;        // principal point at the image center
  double cam_jitter_deg = 3.0;
  double cam_jitter_trans = 0.15;       // meters
  double sky_intensity = 0.92;
  double noise_amplitude = 0.0045;      // about one 8-bit gray level

  double image_edge_min_contrast = 0.12;
  int image_edge_min_px = 16;

  void validate() const;  // DegeneracyError when the scene has no surfaces
};

// A visible, contrast-checked straight intensity edge in the rendered image.
struct PlantedImageEdge {
  double u1 = 0, v1 = 0, u2 = 0, v2 = 0;
  double length_px() const;
};

struct SyntheticTruth {
  // Per pixel, row-major: -1 sky, 0 ground/stripe, 1+i box i.
  std::vector<int> surface_id;
  std::vector<double> depth_buffer;  // camera-frame z, +inf for sky
  std::vector<PlantedImageEdge> image_edges;
  std::vector<std::size_t> ring_start;  // index of each ring's first cloud point
  std::vector<int> point_surface;       // per cloud point, same id scheme

  bool surface_at(int u, int v, int width) const {
    return surface_id[static_cast<std::size_t>(v) * width + u] >= 0;
  }
};

struct SyntheticFrame {
  FramePair frame;
  SyntheticTruth truth;
};

SyntheticFrame generate_synthetic_frame(Rng &rng, const SceneSpec &spec);

}  // namespace edgereg
