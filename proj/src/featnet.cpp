#include "edgereg/featnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "edgereg/errors.hpp"

namespace edgereg {

namespace {

// One stride-2 3x3 convolution with zero padding, expressed as gather +
// reshape + matmul so it lives on the tape. Output cell (ox, oy) is centered
// on input (2ox, 2oy); the kernel rows are ordered (ky, kx)-major with the
// input channel minor, matching the reshape of the gathered patch block.
Var conv3x3_stride2(Tape &t, Var x, std::int64_t in_w, std::int64_t in_h, const Linear &lin,
                    std::int64_t &out_w, std::int64_t &out_h) {
  const std::int64_t c = lin.in_dim() / 9;
  out_w = (in_w + 1) / 2;
  out_h = (in_h + 1) / 2;
  const std::int64_t zero_row = in_w * in_h;  // appended all-zero padding row
  Var padded = t.concat(x, t.leaf(Tensor::zeros({1, c})), 0);
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(out_w * out_h * 9));
  for (std::int64_t oy = 0; oy < out_h; ++oy)
    for (std::int64_t ox = 0; ox < out_w; ++ox)
      for (std::int64_t ky = -1; ky <= 1; ++ky)
        for (std::int64_t kx = -1; kx <= 1; ++kx) {
          const std::int64_t iy = 2 * oy + ky, ix = 2 * ox + kx;
          const bool inside = ix >= 0 && ix < in_w && iy >= 0 && iy < in_h;
          idx.push_back(inside ? iy * in_w + ix : zero_row);
        }
  Var col = t.reshape(t.gather_rows(padded, idx), {out_w * out_h, 9 * c});
  return t.relu(lin(t, col));
}

std::vector<Eigen::Vector3d> cloud_positions(const PointCloud &cloud) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(cloud.size());
  for (const CloudPoint &p : cloud.points) out.push_back(p.xyz());
  return out;
}

}  // namespace

std::vector<std::size_t> farthest_point_sample(const std::vector<Eigen::Vector3d> &points,
                                               std::size_t count, Rng &rng) {
  const std::size_t m = points.size();
  if (count < 1 || count > m)
    throw ContractError("farthest point sample count must be in [1, point count]");
  std::vector<std::size_t> picked;
  picked.reserve(count);
  std::vector<double> dist(m, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(m, false);
  std::size_t cur = static_cast<std::size_t>(rng.uniform_int(m));
  picked.push_back(cur);
  taken[cur] = true;
  for (std::size_t k = 1; k < count; ++k) {
    std::size_t best = m;
    double best_d = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      dist[i] = std::min(dist[i], (points[i] - points[cur]).squaredNorm());
      // Strict > keeps the lowest index among equally distant candidates.
      if (!taken[i] && dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    cur = best;
    picked.push_back(cur);
    taken[cur] = true;
  }
  return picked;
}

PointFeatureSet set_abstraction(Tape &t, const std::vector<Eigen::Vector3d> &positions,
                                Var features, const std::vector<std::size_t> &centers,
                                double radius, std::int64_t k_max, const Mlp &mlp) {
  if (!(radius > 0.0)) throw ValidationError("abstraction radius must be > 0");
  if (k_max < 1) throw ValidationError("abstraction k_max must be >= 1");
  if (centers.empty()) throw ValidationError("no abstraction centers");
  if (t.value(features).vrows() != static_cast<std::int64_t>(positions.size()))
    throw ValidationError("feature rows do not match positions");
  for (std::size_t c : centers)
    if (c >= positions.size()) throw ValidationError("abstraction center outside cloud");

  const double r2 = radius * radius;
  std::vector<std::int64_t> gather_idx;
  std::vector<std::int64_t> offsets{0};
  std::vector<double> rel;
  for (std::size_t c : centers) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (i == c) continue;
      const double d2 = (positions[i] - positions[c]).squaredNorm();
      if (d2 <= r2) cand.emplace_back(d2, i);
    }
    std::sort(cand.begin(), cand.end());  // (distance, index) ascending
    gather_idx.push_back(static_cast<std::int64_t>(c));
    rel.insert(rel.end(), {0.0, 0.0, 0.0});
    for (std::size_t k = 0; k < cand.size() && k + 1 < static_cast<std::size_t>(k_max); ++k) {
      const Eigen::Vector3d off = positions[cand[k].second] - positions[c];
      gather_idx.push_back(static_cast<std::int64_t>(cand[k].second));
      rel.insert(rel.end(), {off.x(), off.y(), off.z()});
    }
    offsets.push_back(static_cast<std::int64_t>(gather_idx.size()));
  }

  const std::int64_t total = static_cast<std::int64_t>(gather_idx.size());
  Var offsets_var = t.leaf(Tensor({total, 3}, std::move(rel)));
  Var encoded = mlp(t, t.concat(offsets_var, t.gather_rows(features, gather_idx), 1));
  PointFeatureSet out;
  out.positions.reserve(centers.size());
  for (std::size_t c : centers) out.positions.push_back(positions[c]);
  out.features = t.segment_max(encoded, offsets);
  return out;
}

Var interpolate_features(Tape &t, const std::vector<Eigen::Vector3d> &targets,
                         const PointFeatureSet &sources) {
  if (sources.positions.empty()) throw ValidationError("no propagation sources");
  if (targets.empty()) throw ValidationError("no propagation targets");
  const std::size_t n = targets.size();
  const std::size_t m = sources.positions.size();
  const std::size_t k = std::min<std::size_t>(3, m);
  Tensor weights = Tensor::zeros({static_cast<std::int64_t>(n), static_cast<std::int64_t>(m)});
  std::vector<std::pair<double, std::size_t>> cand(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j)
      cand[j] = {(sources.positions[j] - targets[i]).squaredNorm(), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += 1.0 / (cand[j].first + 1e-8);
    for (std::size_t j = 0; j < k; ++j)
      weights.at(static_cast<std::int64_t>(i), static_cast<std::int64_t>(cand[j].second)) =
          1.0 / (cand[j].first + 1e-8) / total;
  }
  return t.matmul(t.leaf(std::move(weights)), sources.features);
}

Var feature_propagation(Tape &t, const EdgePointSet &targets, const PointFeatureSet &sources,
                        const Mlp &unit_mlp) {
  std::vector<Eigen::Vector3d> pos;
  std::vector<double> attrs;
  pos.reserve(targets.size());
  attrs.reserve(targets.size() * 4);
  for (const EdgePoint &p : targets.points) {
    pos.push_back(p.xyz());
    attrs.insert(attrs.end(), {p.x, p.y, p.z, p.reflectance});
  }
  Var interp = interpolate_features(t, pos, sources);
  Var own = t.leaf(Tensor({static_cast<std::int64_t>(targets.size()), 4}, std::move(attrs)));
  return unit_mlp(t, t.concat(interp, own, 1));
}

FeatNet::FeatNet(ParamStore &store, const PipelineConfig &config, std::uint64_t seed)
    : dim_(config.feature_dim),
      fps1_(config.fps_count),
      fps2_(std::max<std::int64_t>(1, config.fps_count / 4)),
      radius1_(config.sa_radius1),
      radius2_(config.sa_radius2),
      k_max_(config.sa_k_max),
      conv1_(store, "img.conv1", 9, 16, seed),
      conv2_(store, "img.conv2", 9 * 16, 32, seed),
      conv3_(store, "img.conv3", 9 * 32, config.feature_dim, seed),
      sa1_(store, "pt.sa1", {4, config.feature_dim, config.feature_dim}, seed),
      sa2_(store, "pt.sa2", {3 + config.feature_dim, config.feature_dim, config.feature_dim},
           seed),
      fp_(store, "pt.fp", {config.feature_dim + 4, config.feature_dim, config.feature_dim},
          seed),
      pos2d_(store, "pos2d.mlp", {2, 2 * config.feature_dim, config.feature_dim}, seed),
      pos3d_(store, "pos3d.mlp", {4, 2 * config.feature_dim, config.feature_dim}, seed) {
  if (config.feature_dim < 1) throw ValidationError("feature dim must be >= 1");
  if (config.fps_count < 1) throw ValidationError("fps count must be >= 1");
}

ImageFeatureGrid FeatNet::extract_image_features(Tape &t, const GrayImage &image) const {
  if (image.width < 8 || image.height < 8) throw ValidationError("image must be at least 8x8");
  if (image.intensities.size() !=
      static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height))
    throw ValidationError("image buffer does not match its dimensions");
  // Row-major pixels (v, u) line up with the grid's (gy, gx) layout.
  Var x = t.leaf(Tensor({static_cast<std::int64_t>(image.height) * image.width, 1},
                        image.intensities));
  std::int64_t w = image.width, h = image.height, w2 = 0, h2 = 0;
  x = conv3x3_stride2(t, x, w, h, conv1_, w2, h2);
  x = conv3x3_stride2(t, x, w2, h2, conv2_, w, h);
  x = conv3x3_stride2(t, x, w, h, conv3_, w2, h2);
  return {w2, h2, dim_, x};
}

Var FeatNet::sample_bilinear(Tape &t, const ImageFeatureGrid &grid,
                             const EdgePixelSet &pixels) const {
  if (pixels.empty()) throw ValidationError("no pixels to sample");
  const std::int64_t n = static_cast<std::int64_t>(pixels.size());
  std::vector<std::int64_t> i00, i10, i01, i11;
  std::vector<double> w00, w10, w01, w11;
  for (const EdgePixel &p : pixels.pixels) {
    if (p.u < 0 || p.v < 0) throw ValidationError("pixel outside image bounds");
    const double gx = std::min(p.u / 8.0, static_cast<double>(grid.gw - 1));
    const double gy = std::min(p.v / 8.0, static_cast<double>(grid.gh - 1));
    const std::int64_t x0 = std::min(static_cast<std::int64_t>(gx), grid.gw - 1);
    const std::int64_t y0 = std::min(static_cast<std::int64_t>(gy), grid.gh - 1);
    const std::int64_t x1 = std::min(x0 + 1, grid.gw - 1);
    const std::int64_t y1 = std::min(y0 + 1, grid.gh - 1);
    const double fx = gx - static_cast<double>(x0);
    const double fy = gy - static_cast<double>(y0);
    i00.push_back(y0 * grid.gw + x0);
    i10.push_back(y0 * grid.gw + x1);
    i01.push_back(y1 * grid.gw + x0);
    i11.push_back(y1 * grid.gw + x1);
    w00.push_back((1.0 - fx) * (1.0 - fy));
    w10.push_back(fx * (1.0 - fy));
    w01.push_back((1.0 - fx) * fy);
    w11.push_back(fx * fy);
  }
  auto corner = [&](const std::vector<std::int64_t> &idx, std::vector<double> &w) {
    return t.mul(t.gather_rows(grid.cells, idx), t.leaf(Tensor({n, 1}, std::move(w))));
  };
  return t.add(t.add(corner(i00, w00), corner(i10, w10)),
               t.add(corner(i01, w01), corner(i11, w11)));
}

PointFeatureSet FeatNet::encode_cloud(Tape &t, const PointCloud &cloud, Rng &rng) const {
  if (cloud.empty()) throw ValidationError("cannot encode an empty cloud");
  const std::vector<Eigen::Vector3d> positions = cloud_positions(cloud);
  std::vector<double> refl;
  refl.reserve(cloud.size());
  for (const CloudPoint &p : cloud.points) refl.push_back(p.reflectance);
  Var f0 = t.leaf(Tensor({static_cast<std::int64_t>(cloud.size()), 1}, std::move(refl)));

  const std::size_t n1 = std::min<std::size_t>(static_cast<std::size_t>(fps1_), cloud.size());
  const auto centers1 = farthest_point_sample(positions, n1, rng);
  PointFeatureSet s1 = set_abstraction(t, positions, f0, centers1, radius1_, k_max_, sa1_);

  const std::size_t n2 = std::min<std::size_t>(static_cast<std::size_t>(fps2_), n1);
  const auto centers2 = farthest_point_sample(s1.positions, n2, rng);
  return set_abstraction(t, s1.positions, s1.features, centers2, radius2_, k_max_, sa2_);
}

Var FeatNet::propagate_to_edges(Tape &t, const PointFeatureSet &sources,
                                const EdgePointSet &edges) const {
  return feature_propagation(t, edges, sources, fp_);
}

Var FeatNet::positional_embedding_2d(Tape &t, const EdgePixelSet &pixels, int width,
                                     int height) const {
  if (width < 2 || height < 2) throw ValidationError("image dims too small to normalize");
  if (pixels.empty()) throw ValidationError("no pixels to embed");
  std::vector<double> coords;
  coords.reserve(pixels.size() * 2);
  for (const EdgePixel &p : pixels.pixels) {
    coords.push_back(2.0 * p.u / (width - 1.0) - 1.0);
    coords.push_back(2.0 * p.v / (height - 1.0) - 1.0);
  }
  Var in = t.leaf(Tensor({static_cast<std::int64_t>(pixels.size()), 2}, std::move(coords)));
  return pos2d_(t, in);
}

Var FeatNet::positional_embedding_3d(Tape &t, const EdgePointSet &points) const {
  if (points.empty()) throw ValidationError("no points to embed");
  std::vector<double> coords;
  coords.reserve(points.size() * 4);
  for (const EdgePoint &p : points.points) {
    // Coordinates bounded by /100 m; reflectance is already in [0, 1].
    coords.insert(coords.end(), {p.x / 100.0, p.y / 100.0, p.z / 100.0, p.reflectance});
  }
  Var in = t.leaf(Tensor({static_cast<std::int64_t>(points.size()), 4}, std::move(coords)));
  return pos3d_(t, in);
}

}  // namespace edgereg
