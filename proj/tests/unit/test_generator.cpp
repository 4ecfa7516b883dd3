#include <cmath>

#include <doctest.h>

#include "msub/generator.hpp"
#include "msub/random.hpp"
#include "support.hpp"

using namespace msub;
using msub::test::error_code_of;

namespace {

GeneratorSpec spec_of(const std::string& family, int d = 6, int n = 64, std::uint64_t seed = 3) {
  GeneratorSpec s;
  s.family = family;
  s.latent_dim = d;
  s.point_count = n;
  s.seed = seed;
  return s;
}

LatentVector random_latent(int d, Rng& rng, double lo = -0.8, double hi = 0.8) {
  LatentVector z(d);
  for (int k = 0; k < d; ++k) z[k] = rng.uniform(lo, hi);
  return z;
}

// Central-difference directional derivative of <c, G(z)> along v.
double fd_directional(const Generator& g, const LatentVector& z, const Eigen::VectorXd& c, const LatentVector& v,
                      double h = 1e-6) {
  return (c.dot(g.forward_flat(z + h * v)) - c.dot(g.forward_flat(z - h * v))) / (2.0 * h);
}

}  // namespace

TEST_CASE("vjp matches central differences for every family") {
  for (const std::string family : {"linear", "bump_ellipsoid", "tanh_network"}) {
    CAPTURE(family);
    const auto g = make_generator(spec_of(family));
    Rng rng(17);
    for (int probe = 0; probe < 20; ++probe) {
      LatentVector z = random_latent(g->latent_dim(), rng);
      if (family == "bump_ellipsoid") z.head(3).array() += 1.0;
      Eigen::VectorXd c(g->flat_size());
      for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = rng.normal();
      LatentVector v = random_latent(g->latent_dim(), rng, -1, 1);
      const double analytic = g->vjp(z, c).dot(v);
      const double numeric = fd_directional(*g, z, c, v);
      CHECK(std::abs(analytic - numeric) <= 1e-4 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST_CASE("linear generator is exactly affine") {
  const auto g = make_generator(spec_of("linear"));
  Rng rng(5);
  const LatentVector a = random_latent(6, rng), b = random_latent(6, rng);
  const double t = 0.3;
  const Eigen::VectorXd mid = g->forward_flat((1 - t) * a + t * b);
  const Eigen::VectorXd blend = (1 - t) * g->forward_flat(a) + t * g->forward_flat(b);
  CHECK((mid - blend).norm() < 1e-12);
  // Zero latent is the template sphere.
  const Points p = g->forward(LatentVector::Zero(6)).points;
  CHECK((p - template_directions(64)).norm() < 1e-12);
}

TEST_CASE("bump ellipsoid closed-form cases") {
  const auto g = make_generator(spec_of("bump_ellipsoid", 8, 100));
  LatentVector z = LatentVector::Zero(8);
  z.head(3).setOnes();
  // No bumps: the unit sphere sampled on the template directions.
  const Points sphere = g->forward(z).points;
  CHECK((sphere - template_directions(100)).norm() < 1e-12);
  for (Eigen::Index i = 0; i < sphere.rows(); ++i) CHECK(sphere.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));

  // z0 = 2 doubles every x coordinate.
  z[0] = 2.0;
  const Points stretched = g->forward(z).points;
  CHECK((stretched.col(0) - 2.0 * sphere.col(0)).norm() < 1e-12);
  CHECK((stretched.rightCols(2) - sphere.rightCols(2)).norm() < 1e-12);

  // The bump terms are periodic in each bump coordinate.
  Rng rng(2);
  LatentVector w = random_latent(8, rng);
  w.head(3).array() += 1.0;
  LatentVector shifted = w;
  shifted[5] += 2.0 * std::numbers::pi / 2.0;  // default omega 2
  CHECK((g->forward_flat(w) - g->forward_flat(shifted)).norm() < 1e-10);
}

TEST_CASE("generators are deterministic and seed-dependent") {
  for (const std::string family : {"linear", "bump_ellipsoid", "tanh_network"}) {
    CAPTURE(family);
    const auto a = make_generator(spec_of(family, 6, 64, 3));
    const auto b = make_generator(spec_of(family, 6, 64, 3));
    const auto c = make_generator(spec_of(family, 6, 64, 4));
    LatentVector z = LatentVector::Constant(6, 0.4);
    z[0] = 1.2;
    CHECK(a->forward_flat(z) == b->forward_flat(z));
    CHECK((a->forward_flat(z) - c->forward_flat(z)).norm() > 1e-6);
  }
}

TEST_CASE("tanh network weights round trip") {
  const auto spec = spec_of("tanh_network", 5, 48, 9);
  const auto g = make_generator(spec);
  const auto w = g->weights();
  REQUIRE_FALSE(w.empty());
  const auto h = make_generator(spec, w);
  Rng rng(1);
  const LatentVector z = random_latent(5, rng);
  CHECK(g->forward_flat(z) == h->forward_flat(z));
  CHECK(h->weights() == w);

  auto bad = w;
  bad.pop_back();
  CHECK(error_code_of([&] { make_generator(spec, bad); }) == ErrorCode::invalid_input);
  bad = w;
  bad.push_back(0.f);
  CHECK(error_code_of([&] { make_generator(spec, bad); }) == ErrorCode::invalid_input);
}

TEST_CASE("surface evaluation agrees with forward on the template directions") {
  for (const std::string family : {"linear", "bump_ellipsoid", "tanh_network"}) {
    CAPTURE(family);
    const auto g = make_generator(spec_of(family, 6, 80));
    REQUIRE(g->has_surface());
    Rng rng(8);
    LatentVector z = random_latent(6, rng);
    z.head(3).array() += 1.0;
    const Points s = g->surface(template_directions(80), z);
    CHECK((s - g->forward(z).points).norm() < 1e-10);
  }
}

TEST_CASE("correspondence distance is the sum of per-index distances") {
  Points a(3, 3), b(3, 3);
  a << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  b << 3, 4, 0, 1, 0, 0, 0, 1, 2;
  CHECK(correspondence_distance(PointCloud(a), PointCloud(b)) == doctest::Approx(7.0));
  CHECK(correspondence_distance(PointCloud(a), PointCloud(a)) == 0.0);
  CHECK(error_code_of([&] { correspondence_distance(PointCloud(a), PointCloud(Points(2, 3))); }) ==
        ErrorCode::invalid_input);

  const auto g = make_generator(spec_of("linear"));
  Rng rng(4);
  const LatentVector z1 = random_latent(6, rng), z2 = random_latent(6, rng);
  CHECK(correspondence_distance(*g, z1, z2) == doctest::Approx(correspondence_distance(*g, z2, z1)));
}

TEST_CASE("generator input validation") {
  const auto g = make_generator(spec_of("bump_ellipsoid"));
  CHECK(error_code_of([&] { g->forward(LatentVector::Zero(5)); }) == ErrorCode::invalid_input);
  LatentVector nan = LatentVector::Ones(6);
  nan[2] = std::nan("");
  CHECK(error_code_of([&] { g->forward(nan); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([&] { g->vjp(LatentVector::Ones(6), Eigen::VectorXd::Zero(5)); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([&] { make_generator(spec_of("nope")); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([&] { make_generator(spec_of("bump_ellipsoid", 2)); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([&] { GeneratorSpec::from_json(nlohmann::json{{"latent_dim", 4}}); }) ==
        ErrorCode::invalid_input);
  CHECK(error_code_of([&] {
          GeneratorSpec::from_json({{"family", "linear"}, {"latent_dim", 0}});
        }) == ErrorCode::invalid_input);

  const auto spec = GeneratorSpec::from_json(spec_of("tanh_network", 4, 10, 77).to_json());
  CHECK(spec.family == "tanh_network");
  CHECK(spec.latent_dim == 4);
  CHECK(spec.point_count == 10);
  CHECK(spec.seed == 77);
}

TEST_CASE("template directions are unit and well spread") {
  const Points d = template_directions(200);
  for (Eigen::Index i = 0; i < d.rows(); ++i) CHECK(d.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  // Centroid near the origin for a balanced spherical layout.
  CHECK(d.colwise().mean().norm() < 0.02);
}
