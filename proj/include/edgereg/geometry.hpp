#pragma once

#include <Eigen/Core>

#include <vector>

#include "edgereg/errors.hpp"
#include "edgereg/rng.hpp"

namespace edgereg {

// Rigid transform: p' = R * p + t.
struct PoseSE3 {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static PoseSE3 identity() { return {}; }
  static PoseSE3 rot_x(double rad);
  static PoseSE3 rot_y(double rad);
  static PoseSE3 rot_z(double rad);
  static PoseSE3 translation(double x, double y, double z);

  Eigen::Vector3d apply(const Eigen::Vector3d &p) const { return R * p + t; }

  // RtR = I and det R = +1, both within tol.
  bool is_valid(double tol = 1e-9) const;

  // Nearest rotation by SVD; translation untouched.
  PoseSE3 orthonormalized() const;
};

// Applies b first, then a.
PoseSE3 se3_compose(const PoseSE3 &a, const PoseSE3 &b);
PoseSE3 se3_invert(const PoseSE3 &T);

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  bool is_valid() const { return fx > 0.0 && fy > 0.0; }
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;   // camera-frame z, also the homogeneous scale
  bool in_front = false;  // u, v meaningful only when true
};

Projection project_point(const CameraIntrinsics &K, const PoseSE3 &T,
                         const Eigen::Vector3d &p);
std::vector<Projection> project_points(const CameraIntrinsics &K, const PoseSE3 &T,
                                       const std::vector<Eigen::Vector3d> &points);

struct PoseError {
  double rre_deg = 0.0;
  double rte_m = 0.0;
};

// Rotation error is the sum of absolute Euler angles of R_gt^-1 * R_est under
// a fixed X-then-Y-then-Z factorization; translation error is the plain L2
// distance between the two translations.
PoseError compute_pose_error(const PoseSE3 &T_gt, const PoseSE3 &T_est);

// Training augmentation: free yaw, planar translation. t.z stays 0.
PoseSE3 sample_pose_perturbation(Rng &rng, double max_xy);

constexpr double kPi = 3.14159265358979323846;
inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

}  // namespace edgereg
