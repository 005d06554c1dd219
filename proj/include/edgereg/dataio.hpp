#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "edgereg/errors.hpp"
#include "edgereg/geometry.hpp"
#include "edgereg/rng.hpp"

namespace edgereg {

struct CloudPoint {
  double x = 0.0, y = 0.0, z = 0.0;
  double reflectance = 0.0;  // sensor return intensity in [0,1]

  Eigen::Vector3d xyz() const { return {x, y, z}; }
  double range() const { return std::sqrt(x * x + y * y + z * z); }
};

// Points kept in sensor scan order; ring segmentation depends on it.
struct PointCloud {
  std::vector<CloudPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct GrayImage {
  int width = 0, height = 0;
  std::vector<double> intensities;  // row-major, [0,1]

  static GrayImage filled(int w, int h, double value);
  double at(int u, int v) const { return intensities[static_cast<std::size_t>(v) * width + u]; }
  double &at(int u, int v) { return intensities[static_cast<std::size_t>(v) * width + u]; }
  bool in_bounds(int u, int v) const { return u >= 0 && u < width && v >= 0 && v < height; }
};

struct RgbImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  static RgbImage from_gray(const GrayImage &g);
  void set(int u, int v, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

struct FramePair {
  PointCloud cloud;
  GrayImage image;
  CameraIntrinsics K;
  PoseSE3 T_gt;  // LiDAR frame -> camera frame
};

enum class EdgeSource2D { kLsd, kSobel, kCanny };
enum class EdgeMode3D { kDepthOnly, kReflectOnly, kCombined };

struct PipelineConfig {
  // Edge thresholds.
  double eps_depth = 0.1;
  double eps_reflect = 0.2;
  double eps_corr = 3.0;  // pixels, GT pairing radius
  EdgeSource2D edge_source = EdgeSource2D::kLsd;
  EdgeMode3D edge_mode = EdgeMode3D::kCombined;
  double sobel_low = 0.0, sobel_high = 150.0;   // 0-255 gradient scale
  double canny_low = 50.0, canny_high = 150.0;  // 0-255 gradient scale

  // Network shape.
  std::int64_t feature_dim = 64;
  std::int64_t point_downsample = 20480;
  std::int64_t fps_count = 2048;  // first abstraction stage; second uses a quarter
  std::int64_t exchange_blocks = 6;
  std::int64_t attention_heads = 4;
  bool exchange_enabled = true;  // ablation: bypass the exchange stack
  bool layer_norm = false;
  double sa_radius1 = 2.0, sa_radius2 = 8.0;  // meters
  std::int64_t sa_k_max = 16;
  std::int64_t max_edge_pixels = 512;  // per-frame cap fed to the matcher
  std::int64_t max_edge_points = 384;

  // Losses and optimization.
  double lambda_fov = 1.0, lambda_sigma = 1.0, lambda_match = 1.0;
  double learning_rate = 1e-3;
  double grad_clip = 10.0;
  double aug_max_xy = 10.0;  // training augmentation translation range

  // Pose solver.
  double ransac_threshold_px = 3.0;
  double ransac_confidence = 0.999;
  std::int64_t ransac_max_iters = 2000;
  double min_match_confidence = 0.0;

  std::uint64_t seed = 0;

  void validate() const;  // throws ValidationError on out-of-range fields
};

PipelineConfig load_pipeline_config(const std::string &path);
void save_pipeline_config(const PipelineConfig &cfg, const std::string &path);
// Parses from JSON text; unknown keys rejected so typos fail loudly.
PipelineConfig pipeline_config_from_json_text(const std::string &text);
std::string pipeline_config_to_json_text(const PipelineConfig &cfg);

EdgeSource2D parse_edge_source(const std::string &name);
EdgeMode3D parse_edge_mode(const std::string &name);
std::string edge_source_name(EdgeSource2D s);
std::string edge_mode_name(EdgeMode3D m);

// KITTI velodyne layout: consecutive little-endian float32 (x, y, z, r).
PointCloud read_point_cloud_bin(const std::string &path);
void write_point_cloud_bin(const std::string &path, const PointCloud &cloud);

// Portable graymap/pixmap, binary or ASCII, 8-bit. RGB collapses to luma.
GrayImage load_grayscale(const std::string &path);
void write_graymap(const std::string &path, const GrayImage &image);
void write_pixmap(const std::string &path, const RgbImage &image);

// KITTI calib.txt: K from the left 3x3 of P2; the P2 baseline column is
// folded into the returned extrinsic so K * T reproduces P2 * Tr.
struct KittiCalibration {
  CameraIntrinsics K;
  PoseSE3 T_gt;
};
KittiCalibration parse_kitti_calibration(const std::string &path);

// Uniform subset without replacement, original order kept. Identity when the
// cloud is already small enough.
PointCloud downsample_random(const PointCloud &cloud, std::int64_t target, Rng &rng);

// One dataset split: frame file paths plus exact ground truth.
struct ManifestEntry {
  std::string cloud_path;
  std::string image_path;
  CameraIntrinsics K;
  PoseSE3 T_gt;
};
struct DatasetManifest {
  std::vector<ManifestEntry> frames;
};
DatasetManifest read_manifest(const std::string &path);
void write_manifest(const DatasetManifest &m, const std::string &path);
FramePair load_frame(const ManifestEntry &entry);

}  // namespace edgereg
