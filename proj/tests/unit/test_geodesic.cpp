#include <cmath>
#include <numbers>

#include <doctest.h>

#include "msub/geodesic.hpp"
#include "msub/random.hpp"
#include "support.hpp"

using namespace msub;
using msub::test::error_code_of;

namespace {

// Paraboloid lift G(z) = (z0, z1, c |z|^2): straight chords through the
// origin dip into the bowl, circles |z| = r stay at constant height.
class Paraboloid final : public Generator {
 public:
  explicit Paraboloid(double c) : Generator(GeneratorSpec{"paraboloid", 2, 1}), c_(c) {}

 protected:
  void forward_impl(const LatentVector& z, Eigen::VectorXd& out) const override {
    out.resize(3);
    out << z[0], z[1], c_ * z.squaredNorm();
  }
  void vjp_impl(const LatentVector& z, const Eigen::VectorXd& cot, Eigen::VectorXd& out) const override {
    out.resize(2);
    out << cot[0] + 2 * c_ * z[0] * cot[2], cot[1] + 2 * c_ * z[1] * cot[2];
  }

 private:
  double c_;
};

}  // namespace

TEST_CASE("warp knots and evaluation") {
  const Warp id;
  CHECK(id.is_identity());
  CHECK(id(0.37) == doctest::Approx(0.37));
  const Warp w = Warp::through(0.3);
  CHECK_FALSE(w.is_identity());
  CHECK(w(0.5) == doctest::Approx(0.3));
  CHECK(w(0.25) == doctest::Approx(0.15));
  CHECK(w(0.75) == doctest::Approx(0.65));
  CHECK(w(-1.0) == 0.0);
  CHECK(w(2.0) == 1.0);
  CHECK(Warp::through(0.5).is_identity());
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double v = w(i / 100.0);
    CHECK(v > prev);
    prev = v;
  }
  CHECK(error_code_of([] { Warp({{0, 0}}); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([] { Warp({{0, 0}, {0.5, 0.6}, {0.4, 0.7}, {1, 1}}); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([] { Warp({{0, 0.1}, {1, 1}}); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([] { Warp({{0, 0}, {0.5, 0.5}, {0.7, 0.5}, {1, 1}}); }) == ErrorCode::invalid_input);
}

TEST_CASE("straight polylines, evaluation and subdivision") {
  const LatentVector a = (LatentVector(3) << 0, 1, 2).finished();
  const LatentVector b = (LatentVector(3) << 4, -1, 2).finished();
  auto p = straight_polyline(a, b, 5);
  REQUIRE(p.size() == 5);
  CHECK(p.nodes.front() == a);
  CHECK(p.nodes.back() == b);
  CHECK((p.nodes[2] - 0.5 * (a + b)).norm() < 1e-15);
  CHECK((eval_polyline(p, 0.3) - (0.7 * a + 0.3 * b)).norm() < 1e-14);
  CHECK(eval_polyline(p, 0.0) == a);
  CHECK(eval_polyline(p, 1.0) == b);

  const auto s = subdivide(p);
  CHECK(s.size() == 10);
  CHECK(s.nodes.front() == a);
  CHECK(s.nodes.back() == b);
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double t = static_cast<double>(j) / 9.0;
    CHECK((s.nodes[j] - ((1 - t) * a + t * b)).norm() < 1e-14);
  }

  // The warp remaps t before the node lookup.
  p.warp = Warp::through(0.25);
  CHECK((eval_polyline(p, 0.5) - (0.75 * a + 0.25 * b)).norm() < 1e-14);
  CHECK(error_code_of([&] { straight_polyline(a, b, 1); }) == ErrorCode::invalid_input);
  CHECK(error_code_of([&] { straight_polyline(a, LatentVector::Zero(2), 4); }) == ErrorCode::invalid_input);
}

TEST_CASE("path energy of a straight line under a linear generator") {
  GeneratorSpec spec{"linear", 4, 50, 6};
  const auto gen = make_generator(spec);
  Rng rng(3);
  LatentVector a(4), b(4);
  for (int k = 0; k < 4; ++k) {
    a[k] = rng.uniform(-1, 1);
    b[k] = rng.uniform(-1, 1);
  }
  const auto& lin = dynamic_cast<const LinearGenerator&>(*gen);
  const double chord = (lin.matrix() * (b - a)).squaredNorm();
  for (std::size_t n : {2u, 5u, 17u}) {
    const double e = path_energy(*gen, straight_polyline(a, b, n));
    CHECK(e == doctest::Approx(chord / static_cast<double>(n - 1)).epsilon(1e-12));
  }
}

TEST_CASE("geodesics of a linear generator are straight and evenly spaced") {
  GeneratorSpec spec{"linear", 5, 64, 2};
  const auto gen = make_generator(spec);
  LatentVector a = LatentVector::Constant(5, -0.5), b = LatentVector::Constant(5, 0.6);
  b[1] = -0.3;
  GeodesicConfig cfg;
  const auto res = optimize_geodesic(*gen, a, b, cfg);
  REQUIRE(static_cast<int>(res.polyline.size()) == cfg.max_nodes);
  CHECK(res.polyline.nodes.front() == a);
  CHECK(res.polyline.nodes.back() == b);
  const auto line = straight_polyline(a, b, res.polyline.size());
  double dev = 0.0;
  for (std::size_t i = 0; i < line.size(); ++i) dev = std::max(dev, (res.polyline.nodes[i] - line.nodes[i]).norm());
  CHECK(dev < 1e-4);
  CHECK(res.energy <= path_energy(*gen, line) * (1 + 1e-9));
}

TEST_CASE("geodesic on the paraboloid leaves the bowl") {
  const Paraboloid gen(4.0);
  const LatentVector a = (LatentVector(2) << -1.0, 0.05).finished();
  const LatentVector b = (LatentVector(2) << 1.0, 0.05).finished();
  GeodesicConfig cfg;
  cfg.subdivide_every = 400;
  cfg.final_iters = 600;
  cfg.max_nodes = 32;
  cfg.optimizer.lr = 0.02;
  const auto res = optimize_geodesic(gen, a, b, cfg);
  const std::size_t n = res.polyline.size();
  const double straight = path_energy(gen, straight_polyline(a, b, n));
  // The constant-height arc of radius |a| is one admissible path; the optimum
  // must be at least as short.
  const double r = a.norm();
  const double arc = r * (std::numbers::pi - 2.0 * std::asin(0.05 / r));
  CHECK(res.energy < 0.5 * straight);
  CHECK(res.energy * static_cast<double>(n - 1) <= 1.05 * arc * arc);
  // Midpoint sits far from the bowl bottom.
  CHECK(res.polyline.nodes[n / 2].norm() > 0.7);
}

TEST_CASE("optimized energy never exceeds the straight initialisation") {
  GeneratorSpec spec{"bump_ellipsoid", 6, 96, 8};
  const auto gen = make_generator(spec);
  Rng rng(12);
  for (int trial = 0; trial < 3; ++trial) {
    LatentVector a(6), b(6);
    for (int k = 0; k < 6; ++k) {
      a[k] = rng.uniform(-0.8, 0.8);
      b[k] = rng.uniform(-0.8, 0.8);
    }
    a.head(3).array() += 1.0;
    b.head(3).array() += 1.0;
    GeodesicConfig cfg;
    cfg.max_nodes = 16;
    const auto res = optimize_geodesic(*gen, a, b, cfg);
    CHECK(res.energy <= path_energy(*gen, straight_polyline(a, b, 16)) * (1 + 1e-12));
    CHECK(res.energy == doctest::Approx(path_energy(*gen, res.polyline)).epsilon(1e-14));
  }
}

TEST_CASE("geodesic node schedule and validation") {
  GeneratorSpec spec{"linear", 2, 8, 1};
  const auto gen = make_generator(spec);
  GeodesicConfig cfg;
  cfg.init_nodes = 3;
  cfg.max_nodes = 20;  // 3 -> 6 -> 12 -> 24 trimmed to 20
  cfg.subdivide_every = 5;
  cfg.final_iters = 5;
  const auto res = optimize_geodesic(*gen, LatentVector::Zero(2), LatentVector::Ones(2), cfg);
  CHECK(res.polyline.size() == 20);
  CHECK(res.trace.size() == 4 * 6);

  CHECK(error_code_of([&] { optimize_geodesic(*gen, LatentVector::Zero(3), LatentVector::Ones(2), cfg); }) ==
        ErrorCode::invalid_input);
  CHECK(error_code_of([] { GeodesicConfig::from_json({{"init_nodes", 10}, {"max_nodes", 5}}); }) ==
        ErrorCode::invalid_input);
  const auto back = GeodesicConfig::from_json(cfg.to_json());
  CHECK(back.max_nodes == 20);
  CHECK(back.init_nodes == 3);
  CHECK(back.subdivide_every == 5);
}
