#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msub/generator.hpp"
#include "msub/smallnet.hpp"

namespace msub {

/// Monotone piecewise-linear reparameterisation of [0, 1].
class Warp {
 public:
  Warp() = default;
  explicit Warp(std::vector<std::pair<double, double>> knots);

  static Warp through(double at_half);  // knots (0,0), (0.5, at_half), (1,1)

  double operator()(double t) const;
  bool is_identity() const;
  const std::vector<std::pair<double, double>>& knots() const { return knots_; }

 private:
  std::vector<std::pair<double, double>> knots_{{0.0, 0.0}, {1.0, 1.0}};
};

struct GeodesicPolyline {
  std::vector<LatentVector> nodes;  // endpoints fixed
  Warp warp;

  std::size_t size() const { return nodes.size(); }
};

GeodesicPolyline straight_polyline(const LatentVector& from, const LatentVector& to, std::size_t count);

/// Sum of squared primal distances between consecutive nodes.
double path_energy(const Generator& gen, const GeodesicPolyline& poly);
double path_energy(const Generator& gen, const std::vector<LatentVector>& nodes);
double path_energy(const std::vector<Eigen::VectorXd>& lifted);

/// Uniform resampling of the node-index parameterisation to 2n nodes.
GeodesicPolyline subdivide(const GeodesicPolyline& poly);

/// Linear interpolation at parameter warp(t); t outside [0,1] is clamped.
LatentVector eval_polyline(const GeodesicPolyline& poly, double t);

struct GeodesicConfig {
  int init_nodes = 8;
  int subdivide_every = 100;
  int max_nodes = 64;
  int final_iters = 100;  // iterations once max_nodes is reached
  OptimizerConfig optimizer{OptimizerConfig::Kind::adam, 0.01};
  bool cosine_final = true;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static GeodesicConfig from_json(const nlohmann::json& j);
};

struct GeodesicResult {
  GeodesicPolyline polyline;
  double energy = 0.0;
  std::vector<double> trace;
};

GeodesicResult optimize_geodesic(const Generator& gen, const LatentVector& z_src, const LatentVector& z_tar,
                                 const GeodesicConfig& config = {});

}  // namespace msub
