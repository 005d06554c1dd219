#include "edgereg/matchlayer.hpp"

#include <cassert>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace edgereg {

namespace {

constexpr double kProbFloor = 1e-12;

std::int64_t checked_match_dim(std::int64_t dim) {
  if (dim < 1) throw ValidationError("MatchHeads: feature width must be positive");
  return dim;
}

void require_rank2(const Tensor &v, const char *ctx) {
  if (v.rank() != 2)
    throw ValidationError(std::string(ctx) + ": rank-2 tensor required, got " +
                          shape_str(v.shape));
}

void require_column(const Tensor &v, std::int64_t rows, const char *ctx) {
  if (v.rank() != 2 || v.shape[0] != rows || v.shape[1] != 1)
    throw ValidationError(std::string(ctx) + ": expected {" + std::to_string(rows) +
                          ", 1} column, got " + shape_str(v.shape));
}

// mean over rows of -[y log p + (1 - y) log(1 - p)], p clamped away from the
// endpoints so the logs stay finite.
Var mean_bce(Tape &t, Var probs, const std::vector<double> &targets, const char *ctx) {
  const Tensor &pv = t.value(probs);
  require_column(pv, static_cast<std::int64_t>(targets.size()), ctx);
  const Var y = t.leaf(Tensor({pv.shape[0], 1}, targets));
  const Var p = t.clamp(probs, kProbFloor, 1.0 - kProbFloor);
  const Var ll = t.add(t.mul(y, t.log(p)),
                       t.mul(t.one_minus(y), t.log(t.one_minus(p))));
  return t.affine(t.mean(ll), -1.0, 0.0);
}

}  // namespace

Var similarity_matrix(Tape &t, Var f_2d, Var f_3d, const Linear &map_2d,
                      const Linear &map_3d) {
  return t.matmul(map_2d(t, f_2d), t.transpose(map_3d(t, f_3d)));
}

Var score_head(Tape &t, Var features, const Linear &head) {
  if (head.out_dim() != 1)
    throw ValidationError("score_head: head must have a single output channel");
  return t.sigmoid(head(t, features));
}

Var assignment_matrix(Tape &t, Var s, Var sigma_2d, Var sigma_3d) {
  const Tensor &sv = t.value(s);
  require_rank2(sv, "assignment_matrix");
  require_column(t.value(sigma_2d), sv.shape[0], "assignment_matrix: sigma_2d");
  require_column(t.value(sigma_3d), sv.shape[1], "assignment_matrix: sigma_3d");
  const Var over_points = t.softmax(s);                            // rows sum to 1
  const Var over_pixels = t.transpose(t.softmax(t.transpose(s)));  // columns sum to 1
  const Var gates = t.mul(sigma_2d, t.transpose(sigma_3d));        // outer product
  return t.mul(t.mul(over_points, over_pixels), gates);
}

MatchHeads::MatchHeads(ParamStore &store, std::int64_t dim, std::uint64_t seed)
    : sim_2d_(store, "match.sim2d", checked_match_dim(dim), dim, seed),
      sim_3d_(store, "match.sim3d", dim, dim, seed),
      gate_2d_(store, "match.gate2d", dim, 1, seed),
      gate_3d_(store, "match.gate3d", dim, 1, seed),
      fov_(store, "match.fov", dim, 1, seed),
      dim_(dim) {}

Var MatchHeads::similarity(Tape &t, Var f_2d, Var f_3d) const {
  return similarity_matrix(t, f_2d, f_3d, sim_2d_, sim_3d_);
}

Var MatchHeads::matchability_2d(Tape &t, Var f_2d) const {
  return score_head(t, f_2d, gate_2d_);
}

Var MatchHeads::matchability_3d(Tape &t, Var f_3d) const {
  return score_head(t, f_3d, gate_3d_);
}

Var MatchHeads::fov_scores(Tape &t, Var f_3d) const {
  return score_head(t, f_3d, fov_);
}

AssignmentMatrix MatchHeads::assignment(Tape &t, Var f_2d, Var f_3d) const {
  const Var s = similarity(t, f_2d, f_3d);
  const Var g2 = matchability_2d(t, f_2d);
  const Var g3 = matchability_3d(t, f_3d);
  return {s, g2, g3, assignment_matrix(t, s, g2, g3)};
}

std::vector<MatchPair> mutual_argmax_pairs(const Tensor &p, double min_confidence) {
  require_rank2(p, "mutual_argmax_pairs");
  const std::int64_t rows = p.shape[0], cols = p.shape[1];
  const auto at = [&](std::int64_t i, std::int64_t j) {
    return p.data[static_cast<std::size_t>(i * cols + j)];
  };

  // Strict winners per row/column; -1 marks a tied maximum.
  std::vector<std::int64_t> row_win(static_cast<std::size_t>(rows), -1);
  std::vector<std::int64_t> col_win(static_cast<std::size_t>(cols), -1);
  for (std::int64_t i = 0; i < rows; ++i) {
    std::int64_t best = 0;
    bool tied = false;
    for (std::int64_t j = 1; j < cols; ++j) {
      if (at(i, j) > at(i, best)) {
        best = j;
        tied = false;
      } else if (at(i, j) == at(i, best)) {
        tied = true;
      }
    }
    row_win[static_cast<std::size_t>(i)] = tied ? -1 : best;
  }
  for (std::int64_t j = 0; j < cols; ++j) {
    std::int64_t best = 0;
    bool tied = false;
    for (std::int64_t i = 1; i < rows; ++i) {
      if (at(i, j) > at(best, j)) {
        best = i;
        tied = false;
      } else if (at(i, j) == at(best, j)) {
        tied = true;
      }
    }
    col_win[static_cast<std::size_t>(j)] = tied ? -1 : best;
  }

  std::vector<MatchPair> out;
  for (std::int64_t i = 0; i < rows; ++i) {
    const std::int64_t j = row_win[static_cast<std::size_t>(i)];
    if (j < 0 || col_win[static_cast<std::size_t>(j)] != i) continue;
    if (at(i, j) < min_confidence) continue;
    out.push_back({i, j, at(i, j)});
  }
  return out;
}

CorrespondenceSet extract_correspondences(const Tensor &p, const EdgePixelSet &pixels,
                                          const EdgePointSet &points,
                                          double min_confidence) {
  require_rank2(p, "extract_correspondences");
  if (p.shape[0] != static_cast<std::int64_t>(pixels.size()) ||
      p.shape[1] != static_cast<std::int64_t>(points.size()))
    throw ValidationError("extract_correspondences: matrix " + shape_str(p.shape) +
                          " does not match " + std::to_string(pixels.size()) +
                          " pixels x " + std::to_string(points.size()) + " points");

  CorrespondenceSet out;
  for (const MatchPair &m : mutual_argmax_pairs(p, min_confidence)) {
    const EdgePixel &px = pixels.pixels[static_cast<std::size_t>(m.pixel)];
    const EdgePoint &pt = points.points[static_cast<std::size_t>(m.point)];
    Correspondence c;
    c.pixel = m.pixel;
    c.point = m.point;
    c.confidence = m.confidence;
    c.u = px.u;
    c.v = px.v;
    c.x = pt.x;
    c.y = pt.y;
    c.z = pt.z;
    out.pairs.push_back(c);
  }
  return out;
}

void write_correspondences_csv(std::ostream &out, const CorrespondenceSet &set) {
  std::ostringstream text;
  text << std::setprecision(17);
  text << "i,u,v,j,x,y,z,confidence\n";
  for (const Correspondence &c : set.pairs) {
    text << c.pixel << ',' << c.u << ',' << c.v << ',' << c.point << ',' << c.x
         << ',' << c.y << ',' << c.z << ',' << c.confidence << '\n';
  }
  out << text.str();
}

GroundTruthLabels ground_truth_labels(const EdgePixelSet &pixels,
                                      const EdgePointSet &points,
                                      const CameraIntrinsics &K,
                                      const PoseSE3 &T_gt, int width, int height,
                                      double eps_corr) {
  if (!(eps_corr > 0.0))
    throw ValidationError("ground_truth_labels: eps_corr must be positive");
  if (!K.is_valid())
    throw ValidationError("ground_truth_labels: invalid intrinsics");
  if (width < 1 || height < 1)
    throw ValidationError("ground_truth_labels: empty image");

  GroundTruthLabels out;
  out.s_hat_3d.assign(points.size(), 0.0);
  out.sigma_hat_2d.assign(pixels.size(), 0.0);
  out.sigma_hat_3d.assign(points.size(), 0.0);

  const double eps2 = eps_corr * eps_corr;
  for (std::size_t j = 0; j < points.size(); ++j) {
    const Projection pr = project_point(K, T_gt, points.points[j].xyz());
    if (!pr.in_front) continue;
    if (pr.u < 0.0 || pr.u > width - 1.0 || pr.v < 0.0 || pr.v > height - 1.0)
      continue;
    out.s_hat_3d[j] = 1.0;

    std::int64_t best = -1;
    double best_d2 = eps2;  // strict < keeps exact-threshold pixels out and
                            // resolves distance ties to the lowest index
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const double du = pr.u - pixels.pixels[i].u;
      const double dv = pr.v - pixels.pixels[i].v;
      const double d2 = du * du + dv * dv;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = static_cast<std::int64_t>(i);
      }
    }
    if (best >= 0) {
      out.matches.push_back({best, static_cast<std::int64_t>(j)});
      out.sigma_hat_2d[static_cast<std::size_t>(best)] = 1.0;
      out.sigma_hat_3d[j] = 1.0;
    }
  }

#ifndef NDEBUG
  for (const IndexPair &m : out.matches) {
    assert(out.sigma_hat_2d[static_cast<std::size_t>(m.pixel)] == 1.0);
    assert(out.sigma_hat_3d[static_cast<std::size_t>(m.point)] == 1.0);
    assert(out.s_hat_3d[static_cast<std::size_t>(m.point)] == 1.0);
  }
#endif
  return out;
}

LossBundle compute_losses(Tape &t, const AssignmentMatrix &am, Var s_3d,
                          const GroundTruthLabels &labels,
                          const LossWeights &weights) {
  const Tensor &pv = t.value(am.p);
  require_rank2(pv, "compute_losses");
  const std::int64_t n2 = pv.shape[0], n3 = pv.shape[1];
  if (static_cast<std::int64_t>(labels.sigma_hat_2d.size()) != n2 ||
      static_cast<std::int64_t>(labels.sigma_hat_3d.size()) != n3 ||
      static_cast<std::int64_t>(labels.s_hat_3d.size()) != n3)
    throw ValidationError("compute_losses: label sizes do not match the assignment");

  LossBundle out;
  out.l_fov = mean_bce(t, s_3d, labels.s_hat_3d, "compute_losses: s_3d");
  out.l_sigma =
      t.add(mean_bce(t, am.sigma_2d, labels.sigma_hat_2d, "compute_losses: sigma_2d"),
            mean_bce(t, am.sigma_3d, labels.sigma_hat_3d, "compute_losses: sigma_3d"));

  if (labels.matches.empty()) {
    out.l_match = t.constant(0.0);
    out.has_match_supervision = false;
  } else {
    std::vector<std::int64_t> flat;
    flat.reserve(labels.matches.size());
    for (const IndexPair &m : labels.matches) {
      if (m.pixel < 0 || m.pixel >= n2 || m.point < 0 || m.point >= n3)
        throw ValidationError("compute_losses: match index out of range");
      flat.push_back(m.pixel * n3 + m.point);
    }
    const Var picked = t.gather_rows(t.reshape(am.p, {n2 * n3, 1}), flat);
    const Var lp = t.log(t.clamp(picked, kProbFloor, 1.0 - kProbFloor));
    out.l_match = t.affine(t.mean(lp), -1.0, 0.0);
    out.has_match_supervision = true;
  }

  out.total = t.add(t.add(t.affine(out.l_fov, weights.fov, 0.0),
                          t.affine(out.l_sigma, weights.sigma, 0.0)),
                    t.affine(out.l_match, weights.match, 0.0));
  return out;
}

}  // namespace edgereg
