#include "edgereg/pose.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>

namespace edgereg {

namespace {

constexpr double kPlanarRelSv = 1e-6;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Everything epnp precomputes once: control points, barycentric weights, the
// trailing eigenvectors of the projection normal matrix, and the control
// distances that constrain the betas.
struct EpnpSetup {
  int m = 4;                        // control points; 3 for coplanar input
  std::vector<Eigen::Vector3d> cw;  // control points, world frame
  Eigen::MatrixXd alphas;           // n x m barycentric weights
  Eigen::MatrixXd basis;            // 3m x nb null-space candidates
  std::vector<std::pair<int, int>> pairs;
  Eigen::VectorXd dist2;            // squared control distance per pair
  // Per basis column k and pair p, the difference of the two control-point
  // blocks; all beta constraints are bilinear in these.
  std::vector<std::vector<Eigen::Vector3d>> w;
};

EpnpSetup build_setup(const Eigen::MatrixXd &pw,
                      const std::vector<Eigen::Vector2d> &uv,
                      const CameraIntrinsics &K) {
  const std::int64_t n = pw.rows();
  EpnpSetup s;

  const Eigen::RowVector3d centroid = pw.colwise().mean();
  const Eigen::MatrixXd centered = pw.rowwise() - centroid;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) < kPlanarRelSv * sv(0))
    throw DegeneracyError("epnp: correspondences are collinear");
  s.m = sv(2) < kPlanarRelSv * sv(0) ? 3 : 4;

  s.cw.push_back(centroid.transpose());
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int k = 0; k + 1 < s.m; ++k)
    s.cw.push_back(centroid.transpose() + sv(k) * scale * svd.matrixV().col(k));

  Eigen::MatrixXd span(3, s.m - 1);
  for (int k = 1; k < s.m; ++k) span.col(k - 1) = s.cw[static_cast<std::size_t>(k)] - s.cw[0];
  const auto gram = (span.transpose() * span).ldlt();
  s.alphas.resize(n, s.m);
  for (std::int64_t i = 0; i < n; ++i) {
    const Eigen::VectorXd b =
        gram.solve(span.transpose() * (pw.row(i).transpose() - s.cw[0]));
    s.alphas(i, 0) = 1.0 - b.sum();
    for (int k = 1; k < s.m; ++k) s.alphas(i, k) = b(k - 1);
  }

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2 * n, 3 * s.m);
  for (std::int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < s.m; ++j) {
      const double a = s.alphas(i, j);
      M(2 * i, 3 * j) = a * K.fx;
      M(2 * i, 3 * j + 2) = a * (K.cx - uv[static_cast<std::size_t>(i)].x());
      M(2 * i + 1, 3 * j + 1) = a * K.fy;
      M(2 * i + 1, 3 * j + 2) = a * (K.cy - uv[static_cast<std::size_t>(i)].y());
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M.transpose() * M);
  const int nb = s.m == 4 ? 4 : 2;
  s.basis = es.eigenvectors().leftCols(nb);

  for (int a = 0; a < s.m; ++a)
    for (int b = a + 1; b < s.m; ++b) s.pairs.push_back({a, b});
  s.dist2.resize(static_cast<std::int64_t>(s.pairs.size()));
  s.w.assign(static_cast<std::size_t>(nb), {});
  for (std::size_t p = 0; p < s.pairs.size(); ++p) {
    const auto [a, b] = s.pairs[p];
    s.dist2(static_cast<std::int64_t>(p)) =
        (s.cw[static_cast<std::size_t>(a)] - s.cw[static_cast<std::size_t>(b)]).squaredNorm();
    for (int k = 0; k < nb; ++k)
      s.w[static_cast<std::size_t>(k)].push_back(s.basis.col(k).segment<3>(3 * a) -
                                                 s.basis.col(k).segment<3>(3 * b));
  }
  return s;
}

// Column of the linearized distance system for the quadratic term
// beta_k * beta_l; diagonal terms get coefficient |w_k|^2, mixed 2 w_k.w_l.
Eigen::VectorXd quad_column(const EpnpSetup &s, int k, int l) {
  const std::size_t rows = s.pairs.size();
  Eigen::VectorXd c(static_cast<std::int64_t>(rows));
  for (std::size_t p = 0; p < rows; ++p) {
    const double d = s.w[static_cast<std::size_t>(k)][p].dot(s.w[static_cast<std::size_t>(l)][p]);
    c(static_cast<std::int64_t>(p)) = k == l ? d : 2.0 * d;
  }
  return c;
}

// Canonical sign recovery from the linearized quadratic solutions.
Eigen::VectorXd betas_from_first_row(const Eigen::VectorXd &y, int nb) {
  // y = [B11, B12, B13, ...]: scale from B11, the rest divided out.
  Eigen::VectorXd ysigned = y(0) < 0.0 ? Eigen::VectorXd(-y) : y;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(nb);
  const double b1 = std::sqrt(std::max(ysigned(0), 0.0));
  beta(0) = b1;
  if (b1 > 0.0)
    for (int k = 1; k < y.size() && k < nb; ++k) beta(k) = ysigned(k) / b1;
  return beta;
}

Eigen::VectorXd betas_from_pair(const Eigen::VectorXd &y, int nb) {
  // y = [B11, B12, B22].
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(nb);
  if (y(0) < 0.0) {
    beta(0) = std::sqrt(-y(0));
    beta(1) = y(2) < 0.0 ? std::sqrt(-y(2)) : 0.0;
  } else {
    beta(0) = std::sqrt(y(0));
    beta(1) = y(2) > 0.0 ? std::sqrt(y(2)) : 0.0;
  }
  if (y(1) < 0.0) beta(0) = -beta(0);
  return beta;
}

Eigen::VectorXd betas_from_triple(const Eigen::VectorXd &y, int nb) {
  // y = [B11, B12, B22, B13, B23, B33].
  Eigen::VectorXd beta = betas_from_pair(y.head(3), nb);
  if (beta(0) != 0.0) beta(2) = y(3) / beta(0);
  return beta;
}

std::vector<Eigen::VectorXd> beta_candidates(const EpnpSetup &s) {
  const int nb = static_cast<int>(s.w.size());
  std::vector<Eigen::VectorXd> out;
  if (s.m == 4) {
    Eigen::MatrixXd l4(s.dist2.size(), 4);
    l4 << quad_column(s, 0, 0), quad_column(s, 0, 1), quad_column(s, 0, 2),
        quad_column(s, 0, 3);
    out.push_back(betas_from_first_row(l4.colPivHouseholderQr().solve(s.dist2), nb));

    Eigen::MatrixXd l3(s.dist2.size(), 3);
    l3 << quad_column(s, 0, 0), quad_column(s, 0, 1), quad_column(s, 1, 1);
    out.push_back(betas_from_pair(l3.colPivHouseholderQr().solve(s.dist2), nb));

    Eigen::MatrixXd l6(s.dist2.size(), 6);
    l6 << quad_column(s, 0, 0), quad_column(s, 0, 1), quad_column(s, 1, 1),
        quad_column(s, 0, 2), quad_column(s, 1, 2), quad_column(s, 2, 2);
    out.push_back(betas_from_triple(l6.colPivHouseholderQr().solve(s.dist2), nb));
  } else {
    // Coplanar: a pure scale candidate and the two-vector case.
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < s.pairs.size(); ++p) {
      const double wn = s.w[0][p].norm();
      num += wn * std::sqrt(s.dist2(static_cast<std::int64_t>(p)));
      den += wn * wn;
    }
    Eigen::VectorXd scale = Eigen::VectorXd::Zero(nb);
    if (den > 0.0) scale(0) = num / den;
    out.push_back(scale);

    Eigen::MatrixXd l3(s.dist2.size(), 3);
    l3 << quad_column(s, 0, 0), quad_column(s, 0, 1), quad_column(s, 1, 1);
    out.push_back(betas_from_pair(l3.colPivHouseholderQr().solve(s.dist2), nb));
  }
  return out;
}

// One Gauss-Newton step on the control-distance residuals.
Eigen::VectorXd refine_betas_once(const EpnpSetup &s, const Eigen::VectorXd &beta) {
  const int nb = static_cast<int>(beta.size());
  const std::int64_t rows = s.dist2.size();
  Eigen::MatrixXd jac(rows, nb);
  Eigen::VectorXd res(rows);
  for (std::int64_t p = 0; p < rows; ++p) {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    for (int k = 0; k < nb; ++k) x += beta(k) * s.w[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)];
    res(p) = x.squaredNorm() - s.dist2(p);
    for (int k = 0; k < nb; ++k)
      jac(p, k) = 2.0 * x.dot(s.w[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)]);
  }
  const Eigen::VectorXd delta = jac.colPivHouseholderQr().solve(-res);
  if (!delta.allFinite()) return beta;
  return beta + delta;
}

PoseSE3 pose_from_betas(const EpnpSetup &s, const Eigen::MatrixXd &pw,
                        const Eigen::VectorXd &beta) {
  const std::int64_t n = pw.rows();
  const Eigen::VectorXd x = s.basis * beta;
  Eigen::MatrixXd pc(n, 3);
  for (std::int64_t i = 0; i < n; ++i) {
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (int j = 0; j < s.m; ++j) acc += s.alphas(i, j) * x.segment<3>(3 * j);
    pc.row(i) = acc.transpose();
  }

  // The null vectors carry a global sign; flip if the scene reconstructs
  // behind the camera.
  std::int64_t behind = 0;
  for (std::int64_t i = 0; i < n; ++i)
    if (pc(i, 2) < 0.0) ++behind;
  if (2 * behind > n) pc = -pc;

  const Eigen::RowVector3d mw = pw.colwise().mean();
  const Eigen::RowVector3d mc = pc.colwise().mean();
  const Eigen::Matrix3d cov =
      (pw.rowwise() - mw).transpose() * (pc.rowwise() - mc);  // sum of pw pc^T
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
  flip(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  PoseSE3 T;
  T.R = svd.matrixV() * flip * svd.matrixU().transpose();
  T.t = mc.transpose() - T.R * mw.transpose();
  return T;
}

double total_squared_reproj(const Eigen::MatrixXd &pw,
                            const std::vector<Eigen::Vector2d> &uv,
                            const CameraIntrinsics &K, const PoseSE3 &T) {
  double sum = 0.0;
  for (std::int64_t i = 0; i < pw.rows(); ++i) {
    const Projection pr = project_point(K, T, pw.row(i).transpose());
    if (!pr.in_front) return kInf;
    const double du = pr.u - uv[static_cast<std::size_t>(i)].x();
    const double dv = pr.v - uv[static_cast<std::size_t>(i)].y();
    sum += du * du + dv * dv;
  }
  return sum;
}

void unpack(const CorrespondenceSet &corr, Eigen::MatrixXd &pw,
            std::vector<Eigen::Vector2d> &uv) {
  const std::int64_t n = static_cast<std::int64_t>(corr.size());
  pw.resize(n, 3);
  uv.clear();
  uv.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const Correspondence &c = corr.pairs[static_cast<std::size_t>(i)];
    pw.row(i) << c.x, c.y, c.z;
    uv.emplace_back(c.u, c.v);
  }
}

}  // namespace

std::int64_t RansacResult::inlier_count() const {
  return static_cast<std::int64_t>(
      std::count(inlier_mask.begin(), inlier_mask.end(), true));
}

std::vector<double> reprojection_errors(const CorrespondenceSet &corr,
                                        const CameraIntrinsics &K,
                                        const PoseSE3 &T) {
  if (!K.is_valid())
    throw ValidationError("reprojection_errors: invalid intrinsics");
  if (!T.is_valid(1e-6))
    throw ValidationError("reprojection_errors: pose is not a rigid transform");
  std::vector<double> out(corr.size(), 0.0);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const Correspondence &c = corr.pairs[i];
    const Projection pr = project_point(K, T, {c.x, c.y, c.z});
    out[i] = pr.in_front ? std::hypot(pr.u - c.u, pr.v - c.v) : kInf;
  }
  return out;
}

PoseSE3 epnp(const CorrespondenceSet &corr, const CameraIntrinsics &K) {
  if (corr.size() < 4)
    throw ContractError("epnp: at least 4 correspondences required, got " +
                        std::to_string(corr.size()));
  if (!K.is_valid()) throw ValidationError("epnp: invalid intrinsics");

  Eigen::MatrixXd pw;
  std::vector<Eigen::Vector2d> uv;
  unpack(corr, pw, uv);
  const EpnpSetup s = build_setup(pw, uv, K);

  PoseSE3 best;
  double best_err = kInf;
  for (const Eigen::VectorXd &guess : beta_candidates(s)) {
    const Eigen::VectorXd beta = refine_betas_once(s, guess);
    if (!beta.allFinite()) continue;
    const PoseSE3 T = pose_from_betas(s, pw, beta);
    if (!T.R.allFinite() || !T.t.allFinite()) continue;
    const double err = total_squared_reproj(pw, uv, K, T);
    if (err < best_err) {
      best_err = err;
      best = T;
    }
  }
  if (!(best_err < kInf))
    throw DegeneracyError("epnp: no candidate produced a usable pose");
  return best;
}

RansacResult ransac_epnp(const CorrespondenceSet &corr, const CameraIntrinsics &K,
                         double threshold_px, double confidence,
                         std::int64_t max_iters, Rng &rng) {
  const std::int64_t n = static_cast<std::int64_t>(corr.size());
  if (n < 4)
    throw ContractError("ransac_epnp: at least 4 correspondences required");
  if (!(threshold_px > 0.0))
    throw ValidationError("ransac_epnp: threshold must be positive");
  if (!(confidence > 0.0 && confidence < 1.0))
    throw ValidationError("ransac_epnp: confidence must lie in (0, 1)");
  if (max_iters < 1)
    throw ValidationError("ransac_epnp: at least one iteration required");

  RansacResult out;
  out.inlier_mask.assign(static_cast<std::size_t>(n), false);

  std::vector<bool> best_mask(static_cast<std::size_t>(n), false);
  PoseSE3 best_pose;
  std::int64_t best_count = 0;
  std::int64_t limit = max_iters;
  std::int64_t used = 0;

  while (used < limit) {
    ++used;
    std::array<std::int64_t, 4> pick{};
    for (int k = 0; k < 4; ++k) {
      bool fresh = false;
      while (!fresh) {
        pick[static_cast<std::size_t>(k)] = rng.uniform_int(n);
        fresh = true;
        for (int l = 0; l < k; ++l)
          if (pick[static_cast<std::size_t>(l)] == pick[static_cast<std::size_t>(k)])
            fresh = false;
      }
    }
    CorrespondenceSet sample;
    for (const std::int64_t idx : pick)
      sample.pairs.push_back(corr.pairs[static_cast<std::size_t>(idx)]);

    PoseSE3 T;
    try {
      T = epnp(sample, K);
    } catch (const DegeneracyError &) {
      continue;
    }

    const std::vector<double> errs = reprojection_errors(corr, K, T);
    std::int64_t count = 0;
    for (const double e : errs)
      if (e <= threshold_px) ++count;
    if (count <= best_count) continue;

    best_count = count;
    best_pose = T;
    for (std::int64_t i = 0; i < n; ++i)
      best_mask[static_cast<std::size_t>(i)] = errs[static_cast<std::size_t>(i)] <= threshold_px;

    const double w = static_cast<double>(count) / static_cast<double>(n);
    if (w >= 1.0) {
      limit = used;
    } else {
      const double denom = std::log1p(-std::pow(w, 4));
      if (denom < 0.0) {
        const double need = std::ceil(std::log1p(-confidence) / denom);
        if (std::isfinite(need) && need < static_cast<double>(limit))
          limit = std::max<std::int64_t>(static_cast<std::int64_t>(need), 1);
      }
    }
  }

  out.iterations_used = used;
  if (best_count < 4) {
    out.mean_inlier_reproj_error = kInf;
    return out;
  }

  // Re-fit on the full consensus set; keep the hypothesis pose if the re-fit
  // degenerates or loses the consensus.
  PoseSE3 final_pose = best_pose;
  CorrespondenceSet inliers;
  for (std::int64_t i = 0; i < n; ++i)
    if (best_mask[static_cast<std::size_t>(i)])
      inliers.pairs.push_back(corr.pairs[static_cast<std::size_t>(i)]);
  try {
    final_pose = epnp(inliers, K);
  } catch (const Error &) {
    final_pose = best_pose;
  }

  std::vector<double> errs = reprojection_errors(corr, K, final_pose);
  std::int64_t count = 0;
  for (const double e : errs)
    if (e <= threshold_px) ++count;
  if (count < 4) {
    final_pose = best_pose;
    errs = reprojection_errors(corr, K, final_pose);
  }

  double sum = 0.0;
  std::int64_t kept = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const bool in = errs[static_cast<std::size_t>(i)] <= threshold_px;
    out.inlier_mask[static_cast<std::size_t>(i)] = in;
    if (in) {
      sum += errs[static_cast<std::size_t>(i)];
      ++kept;
    }
  }
  out.pose = final_pose;
  out.mean_inlier_reproj_error = sum / static_cast<double>(kept);
  out.success = true;
  return out;
}

RansacResult ransac_epnp(const CorrespondenceSet &corr, const CameraIntrinsics &K,
                         const PipelineConfig &cfg, Rng &rng) {
  return ransac_epnp(corr, K, cfg.ransac_threshold_px, cfg.ransac_confidence,
                     cfg.ransac_max_iters, rng);
}

}  // namespace edgereg
