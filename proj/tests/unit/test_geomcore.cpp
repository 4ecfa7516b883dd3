#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

#include <doctest.h>

#include "msub/geomcore.hpp"
#include "msub/random.hpp"
#include "support.hpp"

using namespace msub;
using msub::test::TempDir;
using msub::test::error_code_of;

namespace {

TriMesh unit_square() {
  TriMesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

Points random_points(int n, std::uint64_t seed) {
  Rng rng(seed);
  Points p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) p(i, k) = rng.uniform(-1, 1);
  return p;
}

// Brute-force symmetric mean-of-squares Chamfer.
double chamfer_oracle(const Points& a, const Points& b) {
  auto one_way = [](const Points& x, const Points& y) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < y.rows(); ++j) best = std::min(best, (x.row(i) - y.row(j)).squaredNorm());
      s += best;
    }
    return s / static_cast<double>(x.rows());
  };
  return one_way(a, b) + one_way(b, a);
}

// Circumcircle test computed from the circumcenter (independent of the
// determinant predicate used by the triangulator).
bool strictly_inside_circumcircle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& q, double tol) {
  const double d = 2.0 * (a.x() * (b.y() - c.y()) + b.x() * (c.y() - a.y()) + c.x() * (a.y() - b.y()));
  const double ux = (a.squaredNorm() * (b.y() - c.y()) + b.squaredNorm() * (c.y() - a.y()) +
                     c.squaredNorm() * (a.y() - b.y())) / d;
  const double uy = (a.squaredNorm() * (c.x() - b.x()) + b.squaredNorm() * (a.x() - c.x()) +
                     c.squaredNorm() * (b.x() - a.x())) / d;
  const Vec2 center(ux, uy);
  const double r = (a - center).norm();
  return (q - center).norm() < r - tol * std::max(1.0, r);
}

void check_empty_circumcircles(const Triangulation2D& tri) {
  for (const auto& t : tri.triangles) {
    const Vec2 &a = tri.sites[t[0]], &b = tri.sites[t[1]], &c = tri.sites[t[2]];
    for (std::size_t s = 0; s < tri.sites.size(); ++s) {
      if (static_cast<int>(s) == t[0] || static_cast<int>(s) == t[1] || static_cast<int>(s) == t[2]) continue;
      CHECK_FALSE(strictly_inside_circumcircle(a, b, c, tri.sites[s], 1e-9));
    }
  }
}

std::set<std::array<int, 2>> triangle_edge_union(const Triangulation2D& tri) {
  std::set<std::array<int, 2>> e;
  for (const auto& t : tri.triangles)
    for (int k = 0; k < 3; ++k) e.insert({std::min(t[k], t[(k + 1) % 3]), std::max(t[k], t[(k + 1) % 3])});
  return e;
}

std::vector<Vec2> random_sites(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec2> s;
  for (int i = 0; i < n; ++i) s.emplace_back(rng.uniform(), rng.uniform());
  return s;
}

}  // namespace

TEST_CASE("sample_surface splits samples by area on a unit square") {
  const auto cloud = sample_surface(unit_square(), 10000, 3);
  int lower = 0;  // triangle (0,1,2) covers y <= x
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    CHECK(cloud.points(i, 2) == 0.0);
    if (cloud.points(i, 1) <= cloud.points(i, 0)) ++lower;
  }
  CHECK(std::abs(lower - 5000) <= 300);
  CHECK(std::abs((10000 - lower) - 5000) <= 300);
}

TEST_CASE("sample_surface single point lies inside its triangle") {
  TriMesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0, 0, 0, 2, 0, 0, 0, 3, 0;
  m.faces = {{0, 1, 2}};
  const auto c = sample_surface(m, 1, 11);
  REQUIRE(c.size() == 1);
  const Vec2 q(c.points(0, 0), c.points(0, 1));
  const auto bc = barycentric(Vec2(0, 0), Vec2(2, 0), Vec2(0, 3), q);
  CHECK(bc.minCoeff() >= -1e-12);
  CHECK(bc.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sample_surface is deterministic and validates its input") {
  const auto a = sample_surface(unit_square(), 500, 9);
  const auto b = sample_surface(unit_square(), 500, 9);
  CHECK(a.points == b.points);
  TriMesh empty;
  CHECK(error_code_of([&] { sample_surface(empty, 10, 1); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([&] { sample_surface(unit_square(), 0, 1); }) == ErrorCode::invalid_input);
}

TEST_CASE("sample_surface area weighting passes a chi-square test") {
  // Three triangles with areas 1 : 2 : 5 in the plane.
  TriMesh m;
  m.vertices.resize(9, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 2, 0,   //
      5, 0, 0, 7, 0, 0, 5, 2, 0,             //
      10, 0, 0, 15, 0, 0, 10, 2, 0;
  m.faces = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
  const int n = 100000;
  const auto c = sample_surface(m, n, 5);
  double counts[3] = {0, 0, 0};
  for (Eigen::Index i = 0; i < c.points.rows(); ++i) counts[c.points(i, 0) < 4 ? 0 : c.points(i, 0) < 9 ? 1 : 2] += 1;
  const double p[3] = {1.0 / 8, 2.0 / 8, 5.0 / 8};
  double chi2 = 0.0;
  for (int k = 0; k < 3; ++k) chi2 += std::pow(counts[k] - n * p[k], 2) / (n * p[k]);
  CHECK(chi2 < 13.82);  // chi-square(2) quantile at p = 0.001
}

TEST_CASE("chamfer basics") {
  const Points p = random_points(50, 1);
  CHECK(chamfer(p, p) == 0.0);
  Points a(1, 3), b(1, 3);
  a << 0, 0, 0;
  b << 1, 0, 0;
  CHECK(chamfer(a, b) == doctest::Approx(2.0));
  CHECK(error_code_of([&] { chamfer(Points(0, 3), b); }) == ErrorCode::invalid_input);
}

TEST_CASE("chamfer matches the brute-force oracle and is symmetric") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Points a = random_points(100, 10 + s), b = random_points(100, 20 + s);
    CHECK(std::abs(chamfer(a, b) - chamfer_oracle(a, b)) < 1e-12);
    CHECK(chamfer(a, b) == chamfer(b, a));
  }
}

TEST_CASE("chamfer is zero iff the point sets coincide") {
  Points a = random_points(20, 4);
  Points b = a.colwise().reverse();  // same set, different order
  CHECK(chamfer(a, b) == 0.0);
  b(3, 1) += 1e-6;
  CHECK(chamfer(a, b) > 0.0);
}

TEST_CASE("kd-tree nearest agrees with a linear scan") {
  const Points p = random_points(300, 8);
  const KdTree3 tree(p);
  Rng rng(2);
  for (int q = 0; q < 200; ++q) {
    const Vec3 x(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < p.rows(); ++i) best = std::min(best, (p.row(i).transpose() - x).squaredNorm());
    CHECK(tree.nearest(x).squared_distance == doctest::Approx(best).epsilon(1e-14));
  }
}

TEST_CASE("delaunay of a unit square") {
  const std::vector<Vec2> s{{0, 0}, {1, 0}, {1, 1.0000001}, {0, 1}};
  const auto tri = delaunay(s);
  CHECK(tri.triangles.size() == 2);
  CHECK(tri.edges.size() == 5);
  CHECK(tri.hull.size() == 4);
}

TEST_CASE("delaunay of a regular pentagon plus center") {
  std::vector<Vec2> s;
  for (int k = 0; k < 5; ++k) s.emplace_back(std::cos(2 * std::numbers::pi * k / 5), std::sin(2 * std::numbers::pi * k / 5));
  s.emplace_back(0, 0);
  const auto tri = delaunay(s);
  REQUIRE(tri.triangles.size() == 5);
  for (const auto& t : tri.triangles) CHECK(std::find(t.begin(), t.end(), 5) != t.end());
  check_empty_circumcircles(tri);
}

TEST_CASE("delaunay of random sites satisfies the empty-circumcircle property") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto tri = delaunay(random_sites(50, seed));
    check_empty_circumcircles(tri);
    CHECK(is_delaunay(tri));
    const auto u = triangle_edge_union(tri);
    CHECK(std::vector<std::array<int, 2>>(u.begin(), u.end()) == tri.edges);
    for (std::size_t t = 0; t < tri.triangles.size(); ++t) CHECK(tri.triangle_area(static_cast<int>(t)) > 0.0);
    // Euler: T = 2n - 2 - h for a triangulated point set
    CHECK(tri.triangles.size() == 2 * tri.sites.size() - 2 - tri.hull.size());
  }
}

TEST_CASE("delaunay is invariant under site permutation") {
  const auto sites = random_sites(30, 77);
  std::vector<int> perm(sites.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  Rng rng(5);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  std::vector<Vec2> shuffled;
  for (int p : perm) shuffled.push_back(sites[static_cast<std::size_t>(p)]);
  const auto a = delaunay(sites), b = delaunay(shuffled);
  auto canon = [](const Triangulation2D& t, const std::vector<int>* map) {
    std::set<std::array<int, 3>> out;
    for (const auto& f : t.triangles) {
      std::array<int, 3> g{};
      for (int k = 0; k < 3; ++k) g[k] = map ? (*map)[static_cast<std::size_t>(f[k])] : f[k];
      std::sort(g.begin(), g.end());
      out.insert(g);
    }
    return out;
  };
  CHECK(canon(a, nullptr) == canon(b, &perm));
}

TEST_CASE("delaunay rejects degenerate input") {
  const std::vector<Vec2> collinear{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  CHECK(error_code_of([&] { delaunay(collinear); }) == ErrorCode::degenerate_input);
  const std::vector<Vec2> dup{{0, 0}, {1, 0}, {0, 1}, {1e-12, 0}};
  const auto msg = msub::test::error_message_of([&] { delaunay(dup); });
  CHECK(msg.find('0') != std::string::npos);
  CHECK(msg.find('3') != std::string::npos);
  CHECK(error_code_of([&] { delaunay(std::vector<Vec2>{{0, 0}, {1, 0}}); }) != ErrorCode::not_found);
}

TEST_CASE("locate: centroid, vertex and outside") {
  const auto tri = delaunay(random_sites(20, 3));
  for (std::size_t t = 0; t < tri.triangles.size(); ++t) {
    const auto& f = tri.triangles[t];
    const Vec2 c = (tri.sites[f[0]] + tri.sites[f[1]] + tri.sites[f[2]]) / 3.0;
    const auto loc = locate(tri, c);
    REQUIRE(loc);
    CHECK(loc->triangle == static_cast<int>(t));
    CHECK((loc->barycentric - Eigen::Vector3d::Constant(1.0 / 3.0)).cwiseAbs().maxCoeff() < 1e-12);
  }
  const auto at_site = locate(tri, tri.sites[4]);
  REQUIRE(at_site);
  CHECK(at_site->barycentric.maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(locate(tri, Vec2(50, 50)));
}

TEST_CASE("locate reconstructs interior points") {
  const auto tri = delaunay(random_sites(30, 12));
  Rng rng(4);
  int inside = 0;
  for (int i = 0; i < 500; ++i) {
    const Vec2 q(rng.uniform(), rng.uniform());
    const auto loc = locate(tri, q);
    if (!loc) continue;
    ++inside;
    const auto& f = tri.triangles[static_cast<std::size_t>(loc->triangle)];
    const Vec2 r = loc->barycentric[0] * tri.sites[f[0]] + loc->barycentric[1] * tri.sites[f[1]] +
                   loc->barycentric[2] * tri.sites[f[2]];
    CHECK((r - q).norm() < 1e-9);
    CHECK(loc->barycentric.minCoeff() >= -1e-12);
    CHECK(loc->barycentric.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(inside > 300);
}

TEST_CASE("voronoi_cell_of") {
  const auto sites = random_sites(20, 9);
  CHECK(voronoi_cell_of(sites, sites[3]) == 3);
  const std::vector<Vec2> two{{0, 0}, {1, 0}};
  CHECK(voronoi_cell_of(two, Vec2(0.5, 0)) == 0);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec2 q(rng.uniform(), rng.uniform());
    int best = 0;
    for (int s = 1; s < 20; ++s)
      if ((sites[s] - q).norm() < (sites[best] - q).norm()) best = s;
    CHECK(voronoi_cell_of(sites, q) == best);
  }
}

TEST_CASE("clipped Voronoi cells tile the hull") {
  const auto sites = random_sites(12, 21);
  const auto tri = delaunay(sites);
  std::vector<Vec2> hull;
  for (int v : tri.hull) hull.push_back(sites[static_cast<std::size_t>(v)]);
  const auto cells = voronoi_cells_clipped(sites, hull);
  REQUIRE(cells.size() == sites.size());
  double total = 0.0;
  for (const auto& c : cells) total += polygon_area(c);
  CHECK(std::abs(total - polygon_area(hull)) < 1e-6 * polygon_area(hull));
  // every cell contains its own site
  for (std::size_t i = 0; i < sites.size(); ++i) CHECK(inside_convex(cells[i], sites[i], 1e-9));
}

TEST_CASE("OBJ round trip, attributes and fan triangulation") {
  TempDir dir("obj");
  const auto ico = icosphere(1);
  write_obj(ico, dir / "a.obj");
  const auto back = read_obj(dir / "a.obj");
  CHECK(back.vertices == ico.vertices);
  CHECK(back.faces == ico.faces);

  std::ofstream(dir / "quad.obj") << "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\n";
  const auto quad = read_obj(dir / "quad.obj");
  CHECK(quad.faces.size() == 2);
  CHECK(quad.area() == doctest::Approx(1.0));

  std::ofstream(dir / "bad.obj") << "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 9\n";
  CHECK(error_code_of([&] { read_obj(dir / "bad.obj"); }) == ErrorCode::invalid_input);
  std::ofstream(dir / "flat.obj") << "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n";
  CHECK(error_code_of([&] { read_obj(dir / "flat.obj"); }) == ErrorCode::degenerate_input);
  CHECK(error_code_of([&] { read_obj(dir / "missing.obj"); }) == ErrorCode::io);
}

TEST_CASE("point cloud files round trip through f32") {
  TempDir dir("cloud");
  PointCloud c(random_points(64, 3));
  write_cloud(c, dir / "c.bin");
  const auto back = read_cloud(dir / "c.bin");
  REQUIRE(back.size() == 64);
  CHECK((back.points - c.points).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(std::filesystem::file_size(dir / "c.bin") == 8 + 64 * 12);
}

TEST_CASE("icosphere is a closed unit sphere mesh") {
  const auto m = icosphere(2);
  CHECK(m.vertices.rows() == 162);
  CHECK(m.faces.size() == 320);
  CHECK((m.vertices.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-12);
  m.validate();
}
