#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "doctest.h"
#include "edgereg/errors.hpp"
#include "edgereg/featnet.hpp"

using namespace edgereg;

namespace {

PipelineConfig small_config(std::int64_t dim = 8) {
  PipelineConfig c;
  c.feature_dim = dim;
  c.fps_count = 8;
  c.sa_radius1 = 4.0;
  c.sa_radius2 = 20.0;
  c.sa_k_max = 8;
  return c;
}

GrayImage random_image(Rng &rng, int w, int h) {
  GrayImage im = GrayImage::filled(w, h, 0.0);
  for (double &v : im.intensities) v = rng.uniform();
  return im;
}

EdgePixelSet pixels_of(std::initializer_list<EdgePixel> px) {
  EdgePixelSet s;
  s.pixels = px;
  return s;
}

PointCloud random_cloud(Rng &rng, int n, double span) {
  PointCloud c;
  for (int i = 0; i < n; ++i) {
    CloudPoint p;
    p.x = rng.uniform(-span, span);
    p.y = rng.uniform(-span, span);
    p.z = rng.uniform(-span, span);
    p.reflectance = rng.uniform();
    c.points.push_back(p);
  }
  return c;
}

std::vector<Eigen::Vector3d> positions_of(const PointCloud &c) {
  std::vector<Eigen::Vector3d> out;
  for (const CloudPoint &p : c.points) out.push_back(p.xyz());
  return out;
}

EdgePointSet edge_points_of(const PointCloud &c, std::size_t stride = 1) {
  EdgePointSet s;
  for (std::size_t i = 0; i < c.size(); i += stride) {
    const CloudPoint &p = c.points[i];
    s.points.push_back({i, p.x, p.y, p.z, p.reflectance, EdgeProvenance::kDepth});
  }
  return s;
}

std::vector<Tensor *> params_with_prefix(ParamStore &store, const std::string &prefix) {
  std::vector<Tensor *> out;
  for (const std::string &name : store.names())
    if (name.rfind(prefix, 0) == 0) out.push_back(&store.get(name));
  return out;
}

// Reference greedy max-min selection, recomputing distances from scratch.
std::vector<std::size_t> fps_oracle(const std::vector<Eigen::Vector3d> &pts, std::size_t count,
                                    std::size_t first) {
  std::vector<std::size_t> sel{first};
  while (sel.size() < count) {
    std::size_t best = pts.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(sel.begin(), sel.end(), i) != sel.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t j : sel) d = std::min(d, (pts[i] - pts[j]).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    sel.push_back(best);
  }
  return sel;
}

}  // namespace

TEST_CASE("image grid has the contracted shape") {
  ParamStore store;
  FeatNet net(store, small_config(32), 1);
  Tape t;
  Rng rng(3);
  const auto grid = net.extract_image_features(t, random_image(rng, 64, 64));
  CHECK(grid.gw == 8);
  CHECK(grid.gh == 8);
  CHECK(grid.dim == 32);
  CHECK(t.value(grid.cells).shape == Shape{64, 32});

  const auto odd = net.extract_image_features(t, random_image(rng, 65, 33));
  CHECK(odd.gw == 9);
  CHECK(odd.gh == 5);
  CHECK(t.value(odd.cells).shape == Shape{45, 32});

  CHECK_THROWS_AS(net.extract_image_features(t, random_image(rng, 7, 32)), ValidationError);
}

TEST_CASE("zero image with zero biases gives a zero grid") {
  ParamStore store;
  FeatNet net(store, small_config(8), 2);  // biases are zero-initialized
  Tape t;
  const auto grid = net.extract_image_features(t, GrayImage::filled(16, 16, 0.0));
  for (double v : t.value(grid.cells).data) CHECK(v == 0.0);
}

TEST_CASE("conv stack gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ParamStore store;
    FeatNet net(store, small_config(8), seed);
    Rng rng(seed);
    const GrayImage im = random_image(rng, 8, 8);
    const double err = check_gradients(
        [&](Tape &t) { return t.sum(net.extract_image_features(t, im).cells); },
        params_with_prefix(store, "img."), 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("bilinear sampling closed forms") {
  ParamStore store;
  FeatNet net(store, small_config(8), 1);
  Tape t;
  ImageFeatureGrid g;
  g.gw = 2;
  g.gh = 2;
  g.dim = 1;
  g.cells = t.leaf(Tensor({4, 1}, {0.0, 1.0, 2.0, 3.0}));

  // Grid midpoint blends all four cells equally.
  const Var mid = net.sample_bilinear(t, g, pixels_of({{4, 4}}));
  CHECK(t.value(mid).at(0, 0) == doctest::Approx(1.5).epsilon(1e-12));

  // Cell centers return the cell values untouched.
  const Var centers = net.sample_bilinear(t, g, pixels_of({{0, 0}, {8, 0}, {0, 8}, {8, 8}}));
  for (int i = 0; i < 4; ++i)
    CHECK(t.value(centers).at(i, 0) == doctest::Approx(i).epsilon(1e-12));

  // Constant grids sample to the constant everywhere, including past the
  // border where the lookup clamps.
  ImageFeatureGrid c;
  c.gw = 2;
  c.gh = 2;
  c.dim = 1;
  c.cells = t.leaf(Tensor({4, 1}, {7.0, 7.0, 7.0, 7.0}));
  const Var flat = net.sample_bilinear(t, c, pixels_of({{3, 5}, {15, 15}, {0, 13}}));
  for (int i = 0; i < 3; ++i)
    CHECK(t.value(flat).at(i, 0) == doctest::Approx(7.0).epsilon(1e-12));

  CHECK_THROWS_AS(net.sample_bilinear(t, g, EdgePixelSet{}), ValidationError);
  CHECK_THROWS_AS(net.sample_bilinear(t, g, pixels_of({{-1, 2}})), ValidationError);
}

TEST_CASE("fps collinear example selects the far end") {
  std::vector<Eigen::Vector3d> line;
  for (int i = 0; i < 10; ++i) line.push_back({static_cast<double>(i), 0.0, 0.0});
  // Find a seed whose first draw lands on index 0.
  std::uint64_t seed0 = 0;
  bool found = false;
  for (std::uint64_t s = 0; s < 1000 && !found; ++s) {
    Rng probe(s);
    if (probe.uniform_int(10) == 0) {
      seed0 = s;
      found = true;
    }
  }
  REQUIRE(found);
  Rng rng(seed0);
  CHECK(farthest_point_sample(line, 2, rng) == std::vector<std::size_t>{0, 9});

  Rng rng2(5);
  const auto all = farthest_point_sample(line, 10, rng2);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 10);

  Rng rng3(6);
  CHECK_THROWS_AS(farthest_point_sample(line, 0, rng3), ContractError);
  CHECK_THROWS_AS(farthest_point_sample(line, 11, rng3), ContractError);
}

TEST_CASE("fps matches the brute-force greedy oracle") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng data(seed * 77);
    const auto pts = positions_of(random_cloud(data, 20, 5.0));
    Rng a(seed), b(seed);
    const auto got = farthest_point_sample(pts, 7, a);
    const auto want = fps_oracle(pts, 7, static_cast<std::size_t>(b.uniform_int(20)));
    CHECK(got == want);
  }
}

TEST_CASE("fps greedy max-min invariant") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng data(seed * 31);
    const auto pts = positions_of(random_cloud(data, 40, 8.0));
    Rng rng(seed);
    const auto sel = farthest_point_sample(pts, 8, rng);
    const std::set<std::size_t> chosen(sel.begin(), sel.end());

    double min_pairwise = std::numeric_limits<double>::infinity();
    for (std::size_t i : chosen)
      for (std::size_t j : chosen)
        if (i < j) min_pairwise = std::min(min_pairwise, (pts[i] - pts[j]).norm());

    double max_outside = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (chosen.count(i)) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t j : chosen) d = std::min(d, (pts[i] - pts[j]).norm());
      max_outside = std::max(max_outside, d);
    }
    CHECK(min_pairwise >= max_outside);
  }
}

TEST_CASE("set abstraction singleton matches a direct mlp call") {
  ParamStore store;
  Mlp mlp(store, "t.sa", {4, 8, 8}, 3);
  Tape t;
  const std::vector<Eigen::Vector3d> pos{{1.0, 2.0, 3.0}};
  Var f = t.leaf(Tensor({1, 1}, {0.7}));
  const auto out = set_abstraction(t, pos, f, {0}, 1.0, 4, mlp);
  REQUIRE(out.positions.size() == 1);
  CHECK(out.positions[0].isApprox(pos[0]));

  const Var manual = mlp(t, t.leaf(Tensor({1, 4}, {0.0, 0.0, 0.0, 0.7})));
  const Tensor &a = t.value(out.features);
  const Tensor &b = t.value(manual);
  REQUIRE(a.shape == b.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-14));
}

TEST_CASE("set abstraction is translation invariant") {
  ParamStore store;
  Mlp mlp(store, "t.sa", {5, 8, 8}, 4);
  Rng rng(9);
  const PointCloud cloud = random_cloud(rng, 12, 2.0);
  std::vector<double> fdata;
  for (int i = 0; i < 24; ++i) fdata.push_back(rng.uniform(-1.0, 1.0));
  const std::vector<std::size_t> centers{0, 3, 5};

  Tape t;
  Var f = t.leaf(Tensor({12, 2}, fdata));
  auto base = set_abstraction(t, positions_of(cloud), f, centers, 4.0, 6, mlp);

  std::vector<Eigen::Vector3d> shifted = positions_of(cloud);
  for (auto &p : shifted) p += Eigen::Vector3d(100.0, -50.0, 7.0);
  Var f2 = t.leaf(Tensor({12, 2}, fdata));
  auto moved = set_abstraction(t, shifted, f2, centers, 4.0, 6, mlp);

  const Tensor &a = t.value(base.features);
  const Tensor &b = t.value(moved.features);
  REQUIRE(a.shape == b.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-9));
}

TEST_CASE("duplicating a neighbor never changes pooled output") {
  ParamStore store;
  Mlp mlp(store, "t.sa", {5, 8, 8}, 5);
  Rng rng(21);
  PointCloud cloud = random_cloud(rng, 10, 3.0);
  std::vector<double> fdata;
  for (int i = 0; i < 20; ++i) fdata.push_back(rng.uniform(-1.0, 1.0));

  Tape t;
  Var f = t.leaf(Tensor({10, 2}, fdata));
  auto base = set_abstraction(t, positions_of(cloud), f, {2}, 100.0, 64, mlp);

  PointCloud bigger = cloud;
  bigger.points.push_back(cloud.points[7]);
  std::vector<double> fdata2 = fdata;
  fdata2.push_back(fdata[14]);
  fdata2.push_back(fdata[15]);
  Var f2 = t.leaf(Tensor({11, 2}, fdata2));
  auto dup = set_abstraction(t, positions_of(bigger), f2, {2}, 100.0, 64, mlp);

  const Tensor &a = t.value(base.features);
  const Tensor &b = t.value(dup.features);
  REQUIRE(a.shape == b.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("set abstraction caps neighborhoods nearest-first") {
  ParamStore store;
  Mlp mlp(store, "t.cap", {4, 1}, 6);
  // Weights read out exactly the scalar feature channel, so the max-pool
  // reports the largest feature inside the admitted neighborhood.
  store.get("t.cap.0.w").data = {0.0, 0.0, 0.0, 1.0};

  std::vector<Eigen::Vector3d> pos;
  std::vector<double> fdata;
  for (int i = 0; i < 10; ++i) {
    pos.push_back({static_cast<double>(i), 0.0, 0.0});
    fdata.push_back(static_cast<double>(i));
  }
  Tape t;
  Var f = t.leaf(Tensor({10, 1}, fdata));

  // k_max 4 keeps self plus the three nearest: features {0,1,2,3}.
  auto capped = set_abstraction(t, pos, f, {0}, 100.0, 4, mlp);
  CHECK(t.value(capped.features).at(0, 0) == doctest::Approx(3.0).epsilon(1e-12));

  // Radius 2.5 admits x in {0,1,2} even with room for more.
  Var f2 = t.leaf(Tensor({10, 1}, fdata));
  auto gated = set_abstraction(t, pos, f2, {0}, 2.5, 64, mlp);
  CHECK(t.value(gated.features).at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));

  Var f3 = t.leaf(Tensor({10, 1}, fdata));
  CHECK_THROWS_AS(set_abstraction(t, pos, f3, {0}, -1.0, 4, mlp), ValidationError);
  CHECK_THROWS_AS(set_abstraction(t, pos, f3, {12}, 1.0, 4, mlp), ValidationError);
  CHECK_THROWS_AS(set_abstraction(t, pos, f3, {}, 1.0, 4, mlp), ValidationError);
}

TEST_CASE("set abstraction gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ParamStore store;
    Mlp mlp(store, "t.sa", {5, 8, 8}, seed);
    Tensor &src = store.create("t.src", {6, 2}, seed + 100);
    Rng rng(seed);
    const auto pts = positions_of(random_cloud(rng, 6, 2.0));
    const std::vector<std::size_t> centers{0, 4};
    const double err = check_gradients(
        [&](Tape &t) {
          auto out = set_abstraction(t, pts, t.param(&src), centers, 3.0, 4, mlp);
          return t.sum(out.features);
        },
        params_with_prefix(store, "t."), 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("interpolation limits") {
  ParamStore store;
  Tape t;
  PointFeatureSet sources;
  sources.positions = {{0.0, 0.0, 0.0}, {10.0, 0.0, 0.0}, {0.0, 10.0, 0.0}};
  sources.features = t.leaf(Tensor({3, 2}, {1.0, -1.0, 5.0, 2.0, -3.0, 4.0}));

  // A target on top of a source is dominated by that source's row.
  const Var on = interpolate_features(t, {{0.0, 0.0, 0.0}}, sources);
  CHECK(t.value(on).at(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(t.value(on).at(0, 1) == doctest::Approx(-1.0).epsilon(1e-7));

  // Identical source rows interpolate to that row exactly.
  PointFeatureSet flat = sources;
  flat.features = t.leaf(Tensor({3, 2}, {0.3, -0.4, 0.3, -0.4, 0.3, -0.4}));
  const Var mid = interpolate_features(t, {{3.0, 3.0, 1.0}, {-4.0, 2.0, 0.5}}, flat);
  for (int i = 0; i < 2; ++i) {
    CHECK(t.value(mid).at(i, 0) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(t.value(mid).at(i, 1) == doctest::Approx(-0.4).epsilon(1e-12));
  }

  CHECK_THROWS_AS(interpolate_features(t, {}, sources), ValidationError);
  PointFeatureSet none;
  CHECK_THROWS_AS(interpolate_features(t, {{0.0, 0.0, 0.0}}, none), ValidationError);
}

TEST_CASE("feature propagation gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ParamStore store;
    Mlp unit(store, "t.fp", {2 + 4, 8, 8}, seed);
    Tensor &src = store.create("t.src", {5, 2}, seed + 50);
    Rng rng(seed + 7);
    const auto src_pts = positions_of(random_cloud(rng, 5, 4.0));
    const EdgePointSet targets = edge_points_of(random_cloud(rng, 4, 4.0));
    const double err = check_gradients(
        [&](Tape &t) {
          PointFeatureSet sources{src_pts, t.param(&src)};
          return t.sum(feature_propagation(t, targets, sources, unit));
        },
        params_with_prefix(store, "t."), 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("positional embeddings behave as pure position functions") {
  ParamStore store;
  FeatNet net(store, small_config(8), 11);
  Tape t;

  const Var two = net.positional_embedding_2d(t, pixels_of({{5, 7}, {5, 7}, {9, 1}}), 32, 16);
  CHECK(t.value(two).shape == Shape{3, 8});
  for (int d = 0; d < 8; ++d) {
    CHECK(t.value(two).at(0, d) == t.value(two).at(1, d));
  }

  PointCloud pc;
  pc.points.push_back({1.0, 2.0, 3.0, 0.5});
  pc.points.push_back({1.0, 2.0, 3.0, 0.5});
  const Var three = net.positional_embedding_3d(t, edge_points_of(pc));
  CHECK(t.value(three).shape == Shape{2, 8});
  for (int d = 0; d < 8; ++d) CHECK(t.value(three).at(0, d) == t.value(three).at(1, d));

  // Zeroing the MLPs silences the embedding entirely.
  for (const std::string &name : store.names())
    if (name.rfind("pos2d.", 0) == 0 || name.rfind("pos3d.", 0) == 0)
      std::fill(store.get(name).data.begin(), store.get(name).data.end(), 0.0);
  const Var z2 = net.positional_embedding_2d(t, pixels_of({{3, 4}}), 32, 16);
  const Var z3 = net.positional_embedding_3d(t, edge_points_of(pc));
  for (double v : t.value(z2).data) CHECK(v == 0.0);
  for (double v : t.value(z3).data) CHECK(v == 0.0);
}

TEST_CASE("positional embedding gradients match finite differences") {
  ParamStore store;
  FeatNet net(store, small_config(8), 13);
  const EdgePixelSet px = pixels_of({{2, 3}, {11, 8}, {0, 15}});
  Rng rng(5);
  const PointCloud pc = random_cloud(rng, 4, 3.0);
  const EdgePointSet ep = edge_points_of(pc);
  const double e2 = check_gradients(
      [&](Tape &t) { return t.sum(net.positional_embedding_2d(t, px, 32, 16)); },
      params_with_prefix(store, "pos2d."), 1e-5);
  CHECK(e2 < 1e-4);
  const double e3 = check_gradients(
      [&](Tape &t) { return t.sum(net.positional_embedding_3d(t, ep)); },
      params_with_prefix(store, "pos3d."), 1e-5);
  CHECK(e3 < 1e-4);
}

TEST_CASE("sampled rows follow pixel order") {
  ParamStore store;
  FeatNet net(store, small_config(8), 17);
  Rng rng(17);
  const GrayImage im = random_image(rng, 32, 32);
  Tape t;
  const auto grid = net.extract_image_features(t, im);
  const EdgePixelSet fwd = pixels_of({{1, 2}, {9, 3}, {20, 17}});
  const EdgePixelSet rev = pixels_of({{20, 17}, {9, 3}, {1, 2}});
  const Tensor &a = t.value(net.sample_bilinear(t, grid, fwd));
  const Tensor &b = t.value(net.sample_bilinear(t, grid, rev));
  for (int d = 0; d < 8; ++d) {
    CHECK(a.at(0, d) == b.at(2, d));
    CHECK(a.at(1, d) == b.at(1, d));
    CHECK(a.at(2, d) == b.at(0, d));
  }
}

TEST_CASE("image branch end-to-end gradient through sampling") {
  ParamStore store;
  FeatNet net(store, small_config(8), 19);
  Rng rng(19);
  const GrayImage im = random_image(rng, 8, 8);
  const EdgePixelSet px = pixels_of({{1, 1}, {6, 3}});
  const double err = check_gradients(
      [&](Tape &t) {
        const auto grid = net.extract_image_features(t, im);
        return t.sum(net.sample_bilinear(t, grid, px));
      },
      params_with_prefix(store, "img."), 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("point branch end-to-end gradient") {
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    ParamStore store;
    PipelineConfig cfg = small_config(8);
    cfg.fps_count = 8;
    FeatNet net(store, cfg, seed);
    Rng data(seed + 3);
    const PointCloud cloud = random_cloud(data, 12, 3.0);
    const EdgePointSet edges = edge_points_of(cloud, 3);
    const double err = check_gradients(
        [&](Tape &t) {
          Rng fps(seed);  // fresh stream per rebuild keeps FPS identical
          const PointFeatureSet enc = net.encode_cloud(t, cloud, fps);
          return t.sum(net.propagate_to_edges(t, enc, edges));
        },
        params_with_prefix(store, "pt."), 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("cloud order permutation leaves propagated features unchanged") {
  PipelineConfig cfg = small_config(8);
  cfg.fps_count = 12;
  Rng data(11);
  const PointCloud cloud = random_cloud(data, 30, 6.0);
  const EdgePointSet edges = edge_points_of(cloud, 6);

  // Permute the cloud (edge targets keep their own coordinates).
  std::vector<std::size_t> perm(cloud.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng shuffle(23);
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(shuffle.uniform_int(i))]);
  PointCloud permuted;
  permuted.points.resize(cloud.size());
  for (std::size_t i = 0; i < perm.size(); ++i) permuted.points[i] = cloud.points[perm[i]];

  // encode_cloud draws the two FPS starts from its rng. Pick the baseline
  // seed, then search for a seed whose draws land on the same physical
  // point for stage one and the same selection slot for stage two.
  const std::uint64_t seed_a = 7;
  std::size_t first_a = 0, second_a = 0;
  {
    Rng probe(seed_a);
    first_a = static_cast<std::size_t>(probe.uniform_int(30));
    second_a = static_cast<std::size_t>(probe.uniform_int(12));
  }
  std::size_t target_first = 0;
  for (std::size_t j = 0; j < perm.size(); ++j)
    if (perm[j] == first_a) target_first = j;
  std::uint64_t seed_b = 0;
  bool found = false;
  for (std::uint64_t s = 0; s < 100000 && !found; ++s) {
    Rng probe(s);
    if (static_cast<std::size_t>(probe.uniform_int(30)) == target_first &&
        static_cast<std::size_t>(probe.uniform_int(12)) == second_a) {
      seed_b = s;
      found = true;
    }
  }
  REQUIRE(found);

  ParamStore store_a;
  FeatNet net_a(store_a, cfg, 31);
  Tape ta;
  Rng fps_a(seed_a);
  const Var out_a = net_a.propagate_to_edges(ta, net_a.encode_cloud(ta, cloud, fps_a), edges);

  ParamStore store_b;
  FeatNet net_b(store_b, cfg, 31);  // same init seed -> identical parameters
  Tape tb;
  Rng fps_b(seed_b);
  const Var out_b =
      net_b.propagate_to_edges(tb, net_b.encode_cloud(tb, permuted, fps_b), edges);

  const Tensor &a = ta.value(out_a);
  const Tensor &b = tb.value(out_b);
  REQUIRE(a.shape == b.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-9));
}

TEST_CASE("parameters live under the documented prefixes") {
  ParamStore store;
  FeatNet net(store, small_config(16), 3);
  CHECK(store.size() > 0);
  int img = 0, pt = 0, p2 = 0, p3 = 0;
  for (const std::string &name : store.names()) {
    const bool is_img = name.rfind("img.", 0) == 0;
    const bool is_pt = name.rfind("pt.", 0) == 0;
    const bool is_p2 = name.rfind("pos2d.", 0) == 0;
    const bool is_p3 = name.rfind("pos3d.", 0) == 0;
    CHECK((is_img || is_pt || is_p2 || is_p3));
    img += is_img;
    pt += is_pt;
    p2 += is_p2;
    p3 += is_p3;
  }
  CHECK(img > 0);
  CHECK(pt > 0);
  CHECK(p2 > 0);
  CHECK(p3 > 0);
}

TEST_CASE("degenerate inputs are rejected") {
  ParamStore store;
  FeatNet net(store, small_config(8), 2);
  Tape t;
  Rng rng(1);
  PointCloud empty;
  CHECK_THROWS_AS(net.encode_cloud(t, empty, rng), ValidationError);
  CHECK_THROWS_AS(net.positional_embedding_3d(t, EdgePointSet{}), ValidationError);

  // A one-point cloud is degenerate but legal: both stages collapse to it.
  PointCloud one;
  one.points.push_back({0.0, 0.0, 0.0, 0.1});
  Rng rng2(2);
  const PointFeatureSet enc = net.encode_cloud(t, one, rng2);
  CHECK(t.value(enc.features).shape == Shape{1, 8});
}
