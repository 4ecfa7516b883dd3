#include <cmath>
#include <set>

#include <doctest.h>

#include "msub/random.hpp"
#include "msub/submanifold.hpp"
#include "support.hpp"

using namespace msub;
using msub::test::error_code_of;

namespace {

std::vector<Vec2> pentagon_sites() {
  std::vector<Vec2> s{{0.0, 0.0}};
  for (int i = 0; i < 5; ++i) {
    const double a = 2.0 * std::numbers::pi * i / 5.0 + 0.1;
    s.emplace_back(std::cos(a), std::sin(a));
  }
  return s;
}

double total_area(const Triangulation2D& tri) {
  double a = 0.0;
  for (std::size_t t = 0; t < tri.triangles.size(); ++t) a += tri.triangle_area(static_cast<int>(t));
  return a;
}

std::vector<LatentVector> random_latents(std::size_t n, int d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LatentVector> z(n, LatentVector(d));
  for (auto& v : z)
    for (int k = 0; k < d; ++k) v[k] = rng.uniform(-0.8, 0.8);
  return z;
}

std::vector<GeodesicPolyline> straight_boundary(const Triangulation2D& tri, const std::vector<LatentVector>& z,
                                                std::size_t nodes = 9) {
  std::vector<GeodesicPolyline> b;
  for (const auto& e : tri.edges) b.push_back(straight_polyline(z[e[0]], z[e[1]], nodes));
  return b;
}

// Point of triangle t at barycentric (w0, w1, w2).
Vec2 point_in(const Triangulation2D& tri, int t, double w1, double w2) {
  const auto& f = tri.triangles[static_cast<std::size_t>(t)];
  return (1 - w1 - w2) * tri.sites[f[0]] + w1 * tri.sites[f[1]] + w2 * tri.sites[f[2]];
}

}  // namespace

TEST_CASE("fem counts follow the lattice formulas") {
  const auto tri = delaunay(pentagon_sites());
  const auto T = tri.triangles.size(), V = tri.sites.size(), E = tri.edges.size();
  for (int k : {1, 2, 3, 5, 8}) {
    CAPTURE(k);
    const auto fem = discretize_level(tri, k);
    const std::size_t kk = static_cast<std::size_t>(k);
    CHECK(fem.faces.size() == T * kk * kk);
    const std::size_t interior = k >= 3 ? T * (kk - 1) * (kk - 2) / 2 : 0;
    CHECK(fem.vertices.size() == V + E * (kk - 1) + interior);
    CHECK(fem.tags.size() == fem.vertices.size());
    CHECK(stitching_mismatches(fem) == 0);

    double area = 0.0;
    for (std::size_t f = 0; f < fem.faces.size(); ++f) {
      CHECK(fem.areas[f] > 0.0);
      area += fem.areas[f];
      // All sub-faces of a facet share its area / k^2.
      CHECK(fem.areas[f] ==
            doctest::Approx(tri.triangle_area(fem.face_facet[f]) / static_cast<double>(kk * kk)).epsilon(1e-12));
    }
    CHECK(area == doctest::Approx(total_area(tri)).epsilon(1e-12));

    std::size_t landmarks = 0, boundary = 0;
    for (std::size_t v = 0; v < fem.tags.size(); ++v) {
      const auto& tag = fem.tags[v];
      if (tag.kind == VertexTag::Kind::landmark) {
        ++landmarks;
        CHECK((fem.vertices[v] - tri.sites[tag.landmark]).norm() == 0.0);
      } else if (tag.kind == VertexTag::Kind::boundary) {
        ++boundary;
        const auto& e = tri.edges[tag.edge];
        const Vec2 expect = (1 - tag.t) * tri.sites[e[0]] + tag.t * tri.sites[e[1]];
        CHECK((fem.vertices[v] - expect).norm() < 1e-12);
      }
    }
    CHECK(landmarks == V);
    CHECK(boundary == E * (kk - 1));
  }
  CHECK(error_code_of([&] { discretize_level(tri, 0); }) == ErrorCode::invalid_input);
}

TEST_CASE("density picks the level") {
  const auto tri = delaunay(pentagon_sites());
  const double area = total_area(tri);
  const double T = static_cast<double>(tri.triangles.size());
  for (double faces : {50.0, 300.0, 2000.0}) {
    const int k = level_for_density(tri, faces / area);
    CHECK(k == std::max(1, static_cast<int>(std::lround(std::sqrt(faces / T)))));
    const auto fem = discretize(tri, faces / area);
    CHECK(fem.level == k);
  }
  CHECK(error_code_of([&] { level_for_density(tri, 0.0); }) == ErrorCode::invalid_input);
}

TEST_CASE("fem locate returns a containing face") {
  const auto tri = delaunay(pentagon_sites());
  const auto fem = discretize_level(tri, 6);
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    const int t = static_cast<int>(rng.index(tri.triangles.size()));
    double a = rng.uniform(), b = rng.uniform();
    if (a + b > 1) {
      a = 1 - a;
      b = 1 - b;
    }
    const Vec2 q = point_in(tri, t, a, b);
    const auto hit = fem.locate(q);
    REQUIRE(hit.has_value());
    const auto& f = fem.faces[hit->face];
    const Vec2 back =
        hit->barycentric[0] * fem.vertices[f[0]] + hit->barycentric[1] * fem.vertices[f[1]] +
        hit->barycentric[2] * fem.vertices[f[2]];
    CHECK((back - q).norm() < 1e-12);
    CHECK(hit->barycentric.minCoeff() >= -1e-12);
  }
  CHECK_FALSE(fem.locate(Vec2(5.0, 5.0)).has_value());
}

TEST_CASE("face jacobian and dirichlet energy of an affine field") {
  const auto tri = delaunay(pentagon_sites());
  const auto fem = discretize_level(tri, 4);
  Eigen::MatrixXd M(3, 2);
  M << 1.0, -2.0, 0.5, 0.25, 3.0, 1.0;
  const Eigen::Vector3d c(0.1, 0.2, -0.3);
  std::vector<Eigen::VectorXd> lifted;
  for (const auto& v : fem.vertices) lifted.push_back(M * v + c);
  for (std::size_t f = 0; f < fem.faces.size(); f += 7) {
    const auto& fc = fem.faces[f];
    const auto J = face_jacobian(fem, static_cast<int>(f), lifted[fc[0]], lifted[fc[1]], lifted[fc[2]]);
    CHECK((J - M).norm() < 1e-12);
  }
  // Integral of |grad f|^2 over the domain.
  CHECK(dirichlet_energy(fem, lifted) == doctest::Approx(total_area(tri) * M.squaredNorm()).epsilon(1e-12));
  // A face subset adds up its own areas.
  const std::vector<int> subset{0, 3, 5};
  double sub_area = 0.0;
  for (int f : subset) sub_area += fem.areas[f];
  CHECK(dirichlet_energy(fem, lifted, subset) == doctest::Approx(sub_area * M.squaredNorm()).epsilon(1e-12));
  CHECK(error_code_of([&] { dirichlet_energy(fem, std::vector<Eigen::VectorXd>(3)); }) == ErrorCode::invalid_input);
}

TEST_CASE("barycentric latents interpolate each facet") {
  const auto tri = delaunay(pentagon_sites());
  const auto fem = discretize_level(tri, 5);
  const auto z = random_latents(tri.sites.size(), 3, 7);
  const auto lat = barycentric_latents(fem, z);
  for (std::size_t f = 0; f < fem.faces.size(); ++f) {
    const auto& t = tri.triangles[fem.face_facet[f]];
    for (int v : fem.faces[f]) {
      const Eigen::Vector3d w = barycentric(tri.sites[t[0]], tri.sites[t[1]], tri.sites[t[2]], fem.vertices[v]);
      const LatentVector expect = w[0] * z[t[0]] + w[1] * z[t[1]] + w[2] * z[t[2]];
      CHECK((lat[v] - expect).norm() < 1e-12);
    }
  }
}

TEST_CASE("map evaluation honours landmark and boundary constraints") {
  const auto tri = delaunay(pentagon_sites());
  const auto fem = discretize_level(tri, 4);
  const auto z = random_latents(tri.sites.size(), 3, 1);
  auto boundary = straight_boundary(tri, z);
  boundary[0].warp = Warp::through(0.3);
  const auto model = init_map_model(fem, boundary, z, {16, 16}, Encoding{}, 5);
  for (std::size_t v = 0; v < fem.vertices.size(); ++v) {
    const auto& tag = fem.tags[v];
    const LatentVector got = eval_map(model, fem, static_cast<int>(v));
    if (tag.kind == VertexTag::Kind::landmark) CHECK(got == z[tag.landmark]);
    if (tag.kind == VertexTag::Kind::boundary) CHECK(got == eval_polyline(boundary[tag.edge], tag.t));
    if (tag.kind == VertexTag::Kind::interior) CHECK((got - model.mlp_value(fem.vertices[v])).norm() == 0.0);
  }

  auto wrong = boundary;
  wrong.pop_back();
  CHECK(error_code_of([&] { init_map_model(fem, wrong, z, {8}, Encoding{}, 1); }) == ErrorCode::invalid_input);
  wrong = boundary;
  wrong[1].nodes.front()[0] += 1.0;
  CHECK(error_code_of([&] { init_map_model(fem, wrong, z, {8}, Encoding{}, 1); }) == ErrorCode::invalid_input);
}

TEST_CASE("trained map approaches the barycentric optimum of a linear generator") {
  // For an affine generator with straight boundary polylines, the facet-wise
  // barycentric map is the exact minimiser of the discrete energy.
  GeneratorSpec spec{"linear", 3, 32, 4};
  const auto gen = make_generator(spec);
  const auto tri = delaunay(pentagon_sites());
  const auto fem = discretize_level(tri, 4);
  const auto z = random_latents(tri.sites.size(), 3, 3);
  TrainConfig cfg;
  cfg.hidden = {64, 64};
  cfg.iters = 400;
  cfg.batch_faces = 40;
  cfg.optimizer.lr = 2e-3;
  cfg.seed = 8;
  const auto res = train_map(*gen, fem, straight_boundary(tri, z), z, cfg);
  const double bary = dirichlet_energy(*gen, fem, barycentric_latents(fem, z));
  CHECK(res.final_energy == doctest::Approx(dirichlet_energy(*gen, res.model, fem)).epsilon(1e-12));
  CHECK(res.final_energy < res.initial_energy);
  CHECK(res.final_energy >= bary * (1 - 1e-9));
  CHECK(res.final_energy < 1.5 * bary);
  CHECK(res.batches == 400);
  CHECK(res.trace.size() == 400);

  // Same seed, same model.
  const auto again = train_map(*gen, fem, straight_boundary(tri, z), z, cfg);
  CHECK(again.model.mlp.parameters() == res.model.mlp.parameters());
}

TEST_CASE("inference: latent blend, primal blend and continuity") {
  GeneratorSpec spec{"bump_ellipsoid", 5, 48, 2};
  const auto gen = make_generator(spec);
  const auto tri = delaunay(pentagon_sites());
  const auto fem = discretize_level(tri, 3);
  auto z = random_latents(tri.sites.size(), 5, 9);
  for (auto& v : z) v.head(3).array() += 1.0;
  const auto model = init_map_model(fem, straight_boundary(tri, z), z, {16}, Encoding{}, 3);
  const auto cache = build_inference_cache(*gen, model, fem);

  // At a FEM vertex both blends reproduce the vertex value.
  for (int v : {0, 3, 11}) {
    const auto inf = infer(*gen, cache, fem, fem.vertices[v], Blend::latent);
    CHECK((inf.latent - cache.latents[v]).norm() < 1e-12);
    const auto pr = infer(*gen, cache, fem, fem.vertices[v], Blend::primal);
    CHECK((pr.cloud.flat() - cache.lifts[v]).norm() < 1e-10);
  }

  // Cached and direct inference agree.
  const Vec2 q = point_in(tri, 2, 0.31, 0.27);
  const auto a = infer(*gen, model, fem, q, Blend::primal);
  const auto b = infer(*gen, cache, fem, q, Blend::primal);
  CHECK((a.cloud.points - b.cloud.points).norm() < 1e-12);
  CHECK((infer(*gen, model, fem, q, Blend::latent).cloud.points - gen->forward(a.latent).points).norm() < 1e-12);

  // Points straddling each Delaunay edge give matching outputs.
  Rng rng(6);
  for (std::size_t e = 0; e < tri.edges.size(); ++e) {
    const Vec2 p0 = tri.sites[tri.edges[e][0]], p1 = tri.sites[tri.edges[e][1]];
    const Vec2 mid = p0 + rng.uniform(0.05, 0.95) * (p1 - p0);
    const Vec2 n = Vec2(p0.y() - p1.y(), p1.x() - p0.x()).normalized();
    const Vec2 l = mid + 1e-9 * n, r = mid - 1e-9 * n;
    if (!fem.locate(l) || !fem.locate(r)) continue;  // hull edge
    CHECK((infer(*gen, cache, fem, l).cloud.points - infer(*gen, cache, fem, r).cloud.points).cwiseAbs().maxCoeff() <
          1e-6);
  }
  CHECK(error_code_of([&] { infer(*gen, cache, fem, Vec2(9, 9)); }) == ErrorCode::outside);
  CHECK(error_code_of([&] { infer(*gen, InferenceCache{}, fem, q); }) == ErrorCode::invalid_input);
}

TEST_CASE("train config and blend parsing") {
  TrainConfig c;
  c.hidden = {8, 8};
  c.iters = 17;
  c.encoding.max_frequency = 3;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.hidden == c.hidden);
  CHECK(back.iters == 17);
  CHECK(back.encoding.max_frequency == 3);
  CHECK(back.optimizer.lr == doctest::Approx(3e-4));
  CHECK(error_code_of([] { TrainConfig::from_json({{"batch_faces", 0}}); }) == ErrorCode::invalid_input);
  CHECK(blend_from_string("latent") == Blend::latent);
  CHECK(blend_from_string("primal") == Blend::primal);
  CHECK(error_code_of([] { blend_from_string("both"); }) == ErrorCode::invalid_input);
}
