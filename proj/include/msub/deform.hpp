#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "msub/generator.hpp"
#include "msub/geodesic.hpp"
#include "msub/geomcore.hpp"
#include "msub/submanifold.hpp"

namespace msub {

// ---------------------------------------------------------------------------
// Thin-plate-spline interpolation with a degree-1 polynomial tail

double tps_kernel(double r);  // r^2 ln r, 0 at r = 0

struct RbfInterpolant {
  Points centers;
  Vec3 origin = Vec3::Zero();  // centers are shifted by -origin before solving
  Eigen::MatrixXd weights;     // N x 3
  Eigen::Matrix<double, 4, 3> poly = Eigen::Matrix<double, 4, 3>::Zero();  // rows: 1, x, y, z
  double lambda = 0.0;
  double residual = 0.0;        // relative residual of the RBF block
  double side_residual = 0.0;   // relative residual of the polynomial side condition

  Points eval(const Points& queries) const;
  Vec3 eval(const Vec3& q) const;
};

RbfInterpolant rbf_fit(const Points& centers, const Points& values, double lambda);
Points rbf_eval(const RbfInterpolant& interp, const Points& queries);

// ---------------------------------------------------------------------------
// Flow-field advection

/// Produces the generator sample cloud at an exploration-space point.
using CloudSampler = std::function<PointCloud(const Vec2&)>;

CloudSampler space_sampler(const Generator& gen, const InferenceCache& cache, const FemMesh& fem,
                           Blend blend = Blend::primal);

/// Moves every vertex by the smoothed flow between the two clouds.
Points flow_step(const PointCloud& from, const PointCloud& to, const Points& vertices, double lambda);
Points flow_step(const CloudSampler& sampler, const Vec2& x, const Vec2& x_next, const Points& vertices,
                 double lambda);

// Uniform arc-length resampling into `segments` pieces (segments + 1 points).
std::vector<Vec2> resample_path(std::span<const Vec2> path, int segments);

struct DeformOptions {
  int steps = 180;
  double lambda = 0.01;
};

std::vector<TriMesh> deform_along(const CloudSampler& sampler, const TriMesh& mesh, std::span<const Vec2> path,
                                  const DeformOptions& options = {});
// Final frame only.
TriMesh advect(const CloudSampler& sampler, const TriMesh& mesh, std::span<const Vec2> path,
               const DeformOptions& options = {});

// ---------------------------------------------------------------------------
// Switch points

/// Generator clouds along one Delaunay edge exactly as space inference sees
/// them: the edge polyline sampled at the FEM edge vertices, blended linearly.
class EdgeSampler {
 public:
  EdgeSampler(const Generator& gen, const GeodesicPolyline& poly, int level, Blend blend = Blend::primal);
  PointCloud at(double t) const;

 private:
  const Generator* gen_;
  int level_;
  Blend blend_;
  std::vector<LatentVector> latents_;
  std::vector<Eigen::VectorXd> lifts_;
};

struct SwitchConfig {
  int grid = 31;
  double lo = 0.35;
  double hi = 0.65;
  int steps = 180;
  double lambda = 0.01;

  std::vector<double> grid_values() const;
  nlohmann::json to_json() const;
  static SwitchConfig from_json(const nlohmann::json& j);
};

struct SwitchResult {
  double t_star = 0.5;
  std::vector<double> grid;
  std::vector<double> chamfers;  // between the two deformed vertex sets, per grid value
};

/// Deforms mesh_a forward (t: 0 -> 1) and mesh_b backward (t: 1 -> 0) along
/// the edge and returns the grid instant where the two agree best.
SwitchResult compute_switch_point(const EdgeSampler& edge, const TriMesh& mesh_a, const TriMesh& mesh_b,
                                  const SwitchConfig& config = {});
/// Chamfer between the two deformed meshes at a single instant.
double switch_chamfer(const EdgeSampler& edge, const TriMesh& mesh_a, const TriMesh& mesh_b, double t, int steps,
                      double lambda);

// Argmin with ties broken towards 0.5, then to the lower t.
double pick_switch_point(const std::vector<double>& grid, const std::vector<double>& chamfers);

GeodesicPolyline remap_edge(const GeodesicPolyline& poly, double t_star);

struct SwitchPlan {
  std::vector<double> t_star;  // per Delaunay edge

  Warp warp(int edge) const { return Warp::through(t_star.at(static_cast<std::size_t>(edge))); }
  nlohmann::json to_json() const;
  static SwitchPlan from_json(const nlohmann::json& j);
};

int active_mesh(std::span<const Vec2> landmark_positions, const Vec2& q);

}  // namespace msub
