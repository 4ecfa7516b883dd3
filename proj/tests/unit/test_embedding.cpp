#include <algorithm>
#include <cmath>
#include <numbers>

#include <doctest.h>

#include "msub/embedding.hpp"
#include "msub/random.hpp"
#include "support.hpp"

using namespace msub;
using msub::test::error_code_of;

namespace {

std::vector<Vec2> random_sites(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec2> s(static_cast<std::size_t>(n));
  for (auto& p : s) p = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
  return s;
}

Eigen::MatrixXd distance_matrix(const std::vector<Vec2>& p) {
  const auto n = static_cast<Eigen::Index>(p.size());
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (p[static_cast<std::size_t>(i)] - p[static_cast<std::size_t>(j)]).norm();
  return d;
}

}  // namespace

TEST_CASE("knn graph on points along a line") {
  std::vector<Vec2> p;
  for (double x : {0.0, 1.0, 3.0, 7.0, 15.0}) p.emplace_back(x, 0.0);
  const auto g = knn_graph(distance_matrix(p), 2);
  CHECK(g.k == 2);
  CHECK(g.neighbors[0] == std::vector<int>{1, 2});
  CHECK(g.neighbors[2] == std::vector<int>{1, 0});
  CHECK(g.neighbors[4] == std::vector<int>{3, 2});
  CHECK(g.distances[3] == std::vector<double>{4.0, 6.0});
  CHECK(g.is_neighbor(3, 2));
  CHECK_FALSE(g.is_neighbor(2, 3));
  CHECK(error_code_of([&] { knn_graph(distance_matrix(p), 5); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([&] { knn_graph(distance_matrix(p), 0); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([] { knn_graph(Eigen::MatrixXd::Zero(3, 4), 1); }) == ErrorCode::invalid_input);
}

TEST_CASE("knn graph from a generator uses correspondence distances") {
  GeneratorSpec spec{"linear", 3, 40, 5};
  const auto gen = make_generator(spec);
  Rng rng(2);
  std::vector<LatentVector> z(6, LatentVector(3));
  for (auto& v : z)
    for (int k = 0; k < 3; ++k) v[k] = rng.uniform(-1, 1);
  const auto g = knn_graph(*gen, z, 3);
  Eigen::MatrixXd d(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) d(i, j) = correspondence_distance(*gen, z[i], z[j]);
  const auto ref = knn_graph(d, 3);
  CHECK(g.neighbors == ref.neighbors);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) CHECK(g.distances[i][j] == doctest::Approx(ref.distances[i][j]).epsilon(1e-12));
}

TEST_CASE("triplet loss values and gradient") {
  const std::vector<Vec2> a{{0, 0}}, p{{1, 0}}, n{{0, 2}};
  // 1 - 4 + 0.5 < 0: satisfied
  CHECK(triplet_loss(a, p, n, 0.5) == 0.0);
  // 1 - 4 + 5 = 2
  CHECK(triplet_loss(a, p, n, 5.0) == doctest::Approx(2.0));
  CHECK(error_code_of([&] { triplet_loss(a, p, std::vector<Vec2>{}, 1.0); }) == ErrorCode::invalid_input);

  const auto x = random_sites(8, 4);
  std::vector<Triplet> t{{0, 1, 2}, {3, 4, 5}, {6, 7, 0}, {2, 5, 7}, {1, 3, 6}};
  std::vector<Vec2> g;
  const double alpha = 3.0;
  const double base = triplet_loss(x, t, alpha, &g);
  CHECK(base > 0.0);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int k = 0; k < 2; ++k) {
      auto xp = x, xm = x;
      xp[i][k] += h;
      xm[i][k] -= h;
      const double fd = (triplet_loss(xp, t, alpha) - triplet_loss(xm, t, alpha)) / (2 * h);
      CHECK(g[i][k] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
    }
}

TEST_CASE("stage 1 layout is normalised, seeded and reduces the loss") {
  // Ground-truth planar layout; its distance graph should be reproducible in 2D.
  const auto truth = random_sites(12, 9);
  const auto graph = knn_graph(distance_matrix(truth), 4);
  Stage1Config cfg;
  cfg.seed = 3;
  const auto e = embed_stage1(graph, cfg);
  REQUIRE(e.positions.size() == 12);
  Vec2 mean = Vec2::Zero();
  double ms = 0.0;
  for (const auto& p : e.positions) mean += p;
  mean /= 12.0;
  for (const auto& p : e.positions) ms += (p - mean).squaredNorm();
  CHECK(mean.norm() < 1e-12);
  CHECK(ms / 12.0 == doctest::Approx(1.0).epsilon(1e-12));

  // Every neighbour should be closer than the mean non-neighbour for most anchors.
  int ordered = 0;
  for (int a = 0; a < 12; ++a) {
    double far = 0.0, near = 0.0;
    int nf = 0;
    for (int b = 0; b < 12; ++b) {
      if (b == a) continue;
      const double d = (e.positions[a] - e.positions[b]).norm();
      if (graph.is_neighbor(a, b)) near = std::max(near, d);
      else {
        far += d;
        ++nf;
      }
    }
    if (near < far / nf) ++ordered;
  }
  CHECK(ordered >= 10);

  const auto same = embed_stage1(graph, cfg);
  CHECK(same.positions == e.positions);
  cfg.seed = 4;
  CHECK(embed_stage1(graph, cfg).positions != e.positions);
}

TEST_CASE("minimum interior angle") {
  const std::vector<Vec2> eq{{0, 0}, {1, 0}, {0.5, std::sqrt(3.0) / 2}};
  const std::vector<Face> f{{0, 1, 2}};
  CHECK(min_interior_angle(eq, f) == doctest::Approx(std::numbers::pi / 3));
  const std::vector<Vec2> rt{{0, 0}, {2, 0}, {0, 1}};
  CHECK(min_interior_angle(rt, f) == doctest::Approx(std::atan(0.5)));
}

TEST_CASE("stage 2 loss gradient matches central differences") {
  auto x = random_sites(10, 21);
  const auto tri = delaunay(x);
  Stage2Config cfg;
  cfg.angle_threshold_deg = 40.0;  // activate the angle term on some triangles
  std::vector<Vec2> g;
  const double base = stage2_loss(x, tri.triangles, cfg, &g);
  CHECK(base > 0.0);
  const double h = 1e-7;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int k = 0; k < 2; ++k) {
      auto xp = x, xm = x;
      xp[i][k] += h;
      xm[i][k] -= h;
      const double fd = (stage2_loss(xp, tri.triangles, cfg) - stage2_loss(xm, tri.triangles, cfg)) / (2 * h);
      CHECK(g[i][k] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
  // Equal-area equilateral triangles above the threshold have zero loss.
  const std::vector<Vec2> eq{{0, 0}, {1, 0}, {0.5, std::sqrt(3.0) / 2}};
  CHECK(stage2_loss(eq, std::vector<Face>{{0, 1, 2}}, Stage2Config{}) == 0.0);
}

TEST_CASE("stage 2 keeps the hull, never lowers the minimum angle and stays valid") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    CAPTURE(seed);
    Embedding2D in;
    in.positions = random_sites(14, 100 + seed);
    const auto tri0 = delaunay(in.positions);
    Stage2Report rep;
    const auto out = embed_stage2(in, Stage2Config{}, &rep);
    std::vector<int> hull = tri0.hull;
    std::sort(hull.begin(), hull.end());
    CHECK(out.pinned == hull);
    for (int h : hull) CHECK(out.positions[h] == in.positions[h]);
    const auto tri1 = delaunay(out.positions);
    CHECK(is_delaunay(tri1));
    CHECK(min_interior_angle(out.positions, tri1.triangles) >= rep.start_min_angle - 1e-6);
    CHECK(rep.loss_trace.back() <= rep.loss_trace.front());
    std::vector<Vec2> hp;
    for (int h : tri0.hull) hp.push_back(in.positions[h]);
    for (int s : rep.snapped) CHECK(distance_to_polygon(hp, out.positions[s]) < 1e-12);
  }
  Embedding2D tiny;
  tiny.positions = random_sites(2, 1);
  CHECK(error_code_of([&] { embed_stage2(tiny); }) == ErrorCode::invalid_input);
}

TEST_CASE("stage configs round trip through json") {
  Stage1Config s1;
  s1.iters = 12;
  s1.alpha = 0.25;
  const auto b1 = Stage1Config::from_json(s1.to_json());
  CHECK(b1.iters == 12);
  CHECK(b1.alpha == 0.25);
  Stage2Config s2;
  s2.angle_threshold_deg = 25.0;
  const auto b2 = Stage2Config::from_json(s2.to_json());
  CHECK(b2.angle_threshold_deg == 25.0);
  CHECK(error_code_of([] { Stage1Config::from_json({{"lr", -1.0}}); }) == ErrorCode::invalid_input);
}
