#include "edgereg/geometry.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>

namespace edgereg {

PoseSE3 PoseSE3::rot_x(double rad) {
  PoseSE3 T;
  const double c = std::cos(rad), s = std::sin(rad);
  T.R << 1, 0, 0,
         0, c, -s,
         0, s, c;
  return T;
}

PoseSE3 PoseSE3::rot_y(double rad) {
  PoseSE3 T;
  const double c = std::cos(rad), s = std::sin(rad);
  T.R << c, 0, s,
         0, 1, 0,
        -s, 0, c;
  return T;
}

PoseSE3 PoseSE3::rot_z(double rad) {
  PoseSE3 T;
  const double c = std::cos(rad), s = std::sin(rad);
  T.R << c, -s, 0,
         s, c, 0,
         0, 0, 1;
  return T;
}

PoseSE3 PoseSE3::translation(double x, double y, double z) {
  PoseSE3 T;
  T.t << x, y, z;
  return T;
}

bool PoseSE3::is_valid(double tol) const {
  if (!R.allFinite() || !t.allFinite()) return false;
  const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

PoseSE3 PoseSE3::orthonormalized() const {
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d X = R;
  const double dev = (X.transpose() * X - I).cwiseAbs().maxCoeff();
  if (!(dev < 0.1) || X.determinant() <= 0.0) {
    // Far from a rotation: seed from the SVD polar factor, det sign fixed.
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d U = svd.matrixU();
    const Eigen::Matrix3d V = svd.matrixV();
    if ((U * V.transpose()).determinant() < 0.0) U.col(2) *= -1.0;
    X = U * V.transpose();
  }
  // Newton-Schulz polar polish: quadratic convergence, and for near-rotation
  // inputs far more accurate than the SVD snap alone.
  for (int i = 0; i < 8; ++i) {
    const Eigen::Matrix3d E = X.transpose() * X - I;
    if (E.cwiseAbs().maxCoeff() < 1e-15) break;
    X = X * (I - 0.5 * E);
  }
  PoseSE3 out;
  out.R = X;
  out.t = t;
  return out;
}

PoseSE3 se3_compose(const PoseSE3 &a, const PoseSE3 &b) {
  PoseSE3 out;
  out.R = a.R * b.R;
  out.t = a.R * b.t + a.t;
  // Long composition chains drift off SO(3); snap back when measurably off.
  if (!out.is_valid(1e-12)) out = out.orthonormalized();
  return out;
}

PoseSE3 se3_invert(const PoseSE3 &T) {
  PoseSE3 out;
  out.R = T.R.transpose();
  out.t = -(out.R * T.t);
  return out;
}

Projection project_point(const CameraIntrinsics &K, const PoseSE3 &T,
                         const Eigen::Vector3d &p) {
  const Eigen::Vector3d pc = T.apply(p);
  Projection out;
  out.depth = pc.z();
  out.in_front = pc.z() > 0.0;
  if (out.in_front) {
    out.u = K.fx * pc.x() / pc.z() + K.cx;
    out.v = K.fy * pc.y() / pc.z() + K.cy;
  }
  return out;
}

std::vector<Projection> project_points(const CameraIntrinsics &K, const PoseSE3 &T,
                                       const std::vector<Eigen::Vector3d> &points) {
  std::vector<Projection> out;
  out.reserve(points.size());
  for (const auto &p : points) out.push_back(project_point(K, T, p));
  return out;
}

PoseError compute_pose_error(const PoseSE3 &T_gt, const PoseSE3 &T_est) {
  const Eigen::Matrix3d M = T_gt.R.transpose() * T_est.R;
  // Factor M = Rx(g1) * Ry(g2) * Rz(g3). Then M(0,2) = sin g2,
  // M(1,2) = -sin g1 cos g2, M(2,2) = cos g1 cos g2,
  // M(0,1) = -cos g2 sin g3, M(0,0) = cos g2 cos g3.
  double g1, g2, g3;
  const double s2 = std::clamp(M(0, 2), -1.0, 1.0);
  g2 = std::asin(s2);
  if (std::abs(M(0, 2)) > 1.0 - 1e-9) {
    // cos g2 = 0: only g1 + g3 (or g1 - g3) is determined; put it all in g1.
    g1 = std::atan2(M(1, 0), M(1, 1));
    g3 = 0.0;
  } else {
    g1 = std::atan2(-M(1, 2), M(2, 2));
    g3 = std::atan2(-M(0, 1), M(0, 0));
  }
  PoseError err;
  err.rre_deg = rad_to_deg(std::abs(g1) + std::abs(g2) + std::abs(g3));
  err.rte_m = (T_gt.t - T_est.t).norm();
  return err;
}

PoseSE3 sample_pose_perturbation(Rng &rng, double max_xy) {
  if (!(max_xy > 0.0)) throw ValidationError("sample_pose_perturbation: max_xy must be > 0");
  const double yaw = rng.uniform(0.0, 2.0 * kPi);
  const double tx = rng.uniform(-max_xy, max_xy);
  const double ty = rng.uniform(-max_xy, max_xy);
  PoseSE3 T = PoseSE3::rot_z(yaw);
  T.t << tx, ty, 0.0;
  return T;
}

}  // namespace edgereg
