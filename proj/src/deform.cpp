#include "msub/deform.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "msub/error.hpp"

namespace msub {

double tps_kernel(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

namespace {

void check_duplicates(const Points& c) {
  const auto n = c.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return c(a, 0) < c(b, 0); });
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = i + 1; j < order.size() && c(order[j], 0) - c(order[i], 0) <= 1e-9; ++j) {
      if ((c.row(order[i]) - c.row(order[j])).norm() <= 1e-9)
        fail(ErrorCode::invalid_input, "rbf_fit: duplicate centers " + std::to_string(std::min(order[i], order[j])) +
                                           " and " + std::to_string(std::max(order[i], order[j])));
    }
  }
}

}  // namespace

RbfInterpolant rbf_fit(const Points& centers, const Points& values, double lambda) {
  const Eigen::Index n = centers.rows();
  if (values.rows() != n) fail(ErrorCode::invalid_input, "rbf_fit: centers and values differ in length");
  if (n < 4) fail(ErrorCode::invalid_input, "rbf_fit: need at least 4 centers");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail(ErrorCode::invalid_input, "rbf_fit: lambda must be >= 0");
  if (!centers.allFinite() || !values.allFinite()) fail(ErrorCode::invalid_input, "rbf_fit: non-finite input");
  check_duplicates(centers);

  RbfInterpolant out;
  out.lambda = lambda;
  out.centers = centers;
  out.origin = centers.colwise().mean().transpose();
  const Points local = centers.rowwise() - out.origin.transpose();

  Eigen::MatrixXd P(n, 4);
  P.col(0).setOnes();
  P.rightCols(3) = local;
  if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(P).rank() < 4)
    fail(ErrorCode::invalid_input, "rbf_fit: centers are coplanar, affine tail is not determined");

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + 4, n + 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    M(i, i) = lambda;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double phi = tps_kernel((local.row(i) - local.row(j)).norm());
      M(i, j) = phi;
      M(j, i) = phi;
    }
  }
  M.topRightCorner(n, 4) = P;
  M.bottomLeftCorner(4, n) = P.transpose();

  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 4, 3);
  rhs.topRows(n) = values;

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
  const double rcond = lu.rcond();
  if (!(rcond > 1e-12))
    fail(ErrorCode::numerical, "rbf_fit: system is ill-conditioned (reciprocal condition " + std::to_string(rcond) +
                                   "); increase the smoothing lambda (currently " + std::to_string(lambda) + ")");
  Eigen::MatrixXd sol = lu.solve(rhs);

  const double bnorm = std::max(values.norm(), 1e-300);
  auto residuals = [&](const Eigen::MatrixXd& s) {
    const Eigen::MatrixXd r = M * s - rhs;
    return std::pair{r.topRows(n).norm() / bnorm, r.bottomRows(4).norm() / bnorm};
  };
  auto [r1, r2] = residuals(sol);
  if (r1 >= 1e-8 || r2 >= 1e-8) {  // one step of iterative refinement
    sol -= lu.solve(M * sol - rhs);
    std::tie(r1, r2) = residuals(sol);
  }
  if (values.norm() == 0.0) r1 = r2 = 0.0;
  if (r1 >= 1e-8 || r2 >= 1e-8)
    fail(ErrorCode::numerical, "rbf_fit: residual " + std::to_string(std::max(r1, r2)) +
                                   " above 1e-8; increase the smoothing lambda (currently " +
                                   std::to_string(lambda) + ")");
  out.weights = sol.topRows(n);
  out.poly = sol.bottomRows(4);
  out.residual = r1;
  out.side_residual = r2;
  return out;
}

Vec3 RbfInterpolant::eval(const Vec3& q) const {
  const Vec3 x = q - origin;
  Vec3 s = poly.row(0).transpose() + poly.bottomRows(3).transpose() * x;
  for (Eigen::Index i = 0; i < centers.rows(); ++i) {
    const Vec3 c = centers.row(i).transpose() - origin;
    s += tps_kernel((x - c).norm()) * weights.row(i).transpose();
  }
  return s;
}

Points RbfInterpolant::eval(const Points& queries) const {
  const Eigen::Index n = centers.rows();
  const Points local = centers.rowwise() - origin.transpose();
  Points out(queries.rows(), 3);
  Eigen::VectorXd phi(n);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const Eigen::RowVector3d x = queries.row(q) - origin.transpose();
    for (Eigen::Index i = 0; i < n; ++i) phi[i] = tps_kernel((x - local.row(i)).norm());
    out.row(q) = poly.row(0) + x * poly.bottomRows(3) + phi.transpose() * weights;
  }
  return out;
}

Points rbf_eval(const RbfInterpolant& interp, const Points& queries) { return interp.eval(queries); }

// ---------------------------------------------------------------------------

CloudSampler space_sampler(const Generator& gen, const InferenceCache& cache, const FemMesh& fem, Blend blend) {
  return [&gen, &cache, &fem, blend](const Vec2& x) { return infer(gen, cache, fem, x, blend).cloud; };
}

Points flow_step(const PointCloud& from, const PointCloud& to, const Points& vertices, double lambda) {
  if (from.size() != to.size()) fail(ErrorCode::invalid_input, "flow_step: clouds differ in size");
  const Points displacement = to.points - from.points;
  if (displacement.isZero(0.0)) return vertices;
  const RbfInterpolant rbf = rbf_fit(from.points, displacement, lambda);
  return vertices + rbf.eval(vertices);
}

Points flow_step(const CloudSampler& sampler, const Vec2& x, const Vec2& x_next, const Points& vertices,
                 double lambda) {
  if (x == x_next) return vertices;
  return flow_step(sampler(x), sampler(x_next), vertices, lambda);
}

std::vector<Vec2> resample_path(std::span<const Vec2> path, int segments) {
  if (path.size() < 2) fail(ErrorCode::invalid_input, "zero-length trajectory: a path needs at least two points");
  if (segments < 1) fail(ErrorCode::invalid_input, "resample_path: need at least one segment");
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < path.size(); ++i) cum.push_back(cum.back() + (path[i] - path[i - 1]).norm());
  const double total = cum.back();
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(segments) + 1);
  if (total == 0.0) {
    out.assign(static_cast<std::size_t>(segments) + 1, path.front());
    return out;
  }
  std::size_t seg = 0;
  for (int s = 0; s <= segments; ++s) {
    if (s == segments) {
      out.push_back(path.back());
      break;
    }
    const double target = total * s / segments;
    while (seg + 2 < cum.size() && cum[seg + 1] < target) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double f = len > 0.0 ? std::clamp((target - cum[seg]) / len, 0.0, 1.0) : 0.0;
    out.push_back(f == 0.0 ? path[seg] : (1.0 - f) * path[seg] + f * path[seg + 1]);
  }
  return out;
}

namespace {

template <typename OnFrame>
void integrate(const CloudSampler& sampler, const TriMesh& mesh, std::span<const Vec2> path,
               const DeformOptions& options, OnFrame&& on_frame) {
  mesh.validate();
  const auto pts = resample_path(path, options.steps);
  Points v = mesh.vertices;
  on_frame(v);
  PointCloud current = sampler(pts[0]);
  for (std::size_t s = 1; s < pts.size(); ++s) {
    if (pts[s] == pts[s - 1]) {
      on_frame(v);
      continue;
    }
    PointCloud next = sampler(pts[s]);
    v = flow_step(current, next, v, options.lambda);
    current = std::move(next);
    on_frame(v);
  }
}

}  // namespace

std::vector<TriMesh> deform_along(const CloudSampler& sampler, const TriMesh& mesh, std::span<const Vec2> path,
                                  const DeformOptions& options) {
  std::vector<TriMesh> frames;
  frames.reserve(static_cast<std::size_t>(options.steps) + 1);
  integrate(sampler, mesh, path, options, [&](const Points& v) { frames.push_back({v, mesh.faces}); });
  return frames;
}

TriMesh advect(const CloudSampler& sampler, const TriMesh& mesh, std::span<const Vec2> path,
               const DeformOptions& options) {
  TriMesh out{mesh.vertices, mesh.faces};
  integrate(sampler, mesh, path, options, [&](const Points& v) { out.vertices = v; });
  return out;
}

// ---------------------------------------------------------------------------

EdgeSampler::EdgeSampler(const Generator& gen, const GeodesicPolyline& poly, int level, Blend blend)
    : gen_(&gen), level_(level), blend_(blend) {
  if (level < 1) fail(ErrorCode::invalid_input, "EdgeSampler: level must be >= 1");
  for (int m = 0; m <= level; ++m) {
    latents_.push_back(eval_polyline(poly, static_cast<double>(m) / level));
    lifts_.push_back(gen.forward_flat(latents_.back()));
  }
}

PointCloud EdgeSampler::at(double t) const {
  t = std::clamp(t, 0.0, 1.0);
  const double s = t * level_;
  const int m = std::min(static_cast<int>(std::floor(s)), level_ - 1);
  const double f = s - m;
  if (blend_ == Blend::latent)
    return gen_->forward((1.0 - f) * latents_[static_cast<std::size_t>(m)] + f * latents_[static_cast<std::size_t>(m + 1)]);
  return PointCloud::from_flat((1.0 - f) * lifts_[static_cast<std::size_t>(m)] + f * lifts_[static_cast<std::size_t>(m + 1)]);
}

std::vector<double> SwitchConfig::grid_values() const {
  std::vector<double> g;
  for (int i = 0; i < grid; ++i) g.push_back(grid == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (grid - 1));
  return g;
}

nlohmann::json SwitchConfig::to_json() const {
  return {{"grid", grid}, {"lo", lo}, {"hi", hi}, {"steps", steps}, {"lambda", lambda}};
}

SwitchConfig SwitchConfig::from_json(const nlohmann::json& j) {
  SwitchConfig c;
  if (!j.is_object()) return c;
  c.grid = j.value("grid", c.grid);
  c.lo = j.value("lo", c.lo);
  c.hi = j.value("hi", c.hi);
  c.steps = j.value("steps", c.steps);
  c.lambda = j.value("lambda", c.lambda);
  if (c.grid < 1 || !(c.lo > 0.0) || !(c.hi < 1.0) || c.lo > c.hi || c.steps < 1 || c.lambda < 0.0)
    fail(ErrorCode::invalid_input, "switchpoints: bad config");
  return c;
}

namespace {

// Integrates mesh along the edge through the parameter sequence; calls
// on_param(i, vertices) at every parameter.
template <typename F>
void integrate_edge(const EdgeSampler& edge, const TriMesh& mesh, const std::vector<double>& params, double lambda,
                    F&& on_param) {
  Points v = mesh.vertices;
  PointCloud current = edge.at(params.front());
  on_param(0, v);
  for (std::size_t i = 1; i < params.size(); ++i) {
    if (params[i] != params[i - 1]) {
      PointCloud next = edge.at(params[i]);
      v = flow_step(current, next, v, lambda);
      current = std::move(next);
    }
    on_param(i, v);
  }
}

std::vector<double> union_params(int steps, const std::vector<double>& extra) {
  std::vector<double> p;
  for (int s = 0; s <= steps; ++s) p.push_back(static_cast<double>(s) / steps);
  p.insert(p.end(), extra.begin(), extra.end());
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  return p;
}

PointCloud vertex_cloud(const Points& v) { return PointCloud(v); }

}  // namespace

double pick_switch_point(const std::vector<double>& grid, const std::vector<double>& chamfers) {
  if (grid.empty() || grid.size() != chamfers.size()) fail(ErrorCode::invalid_input, "pick_switch_point: bad grid");
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double dc = chamfers[i] - chamfers[best];
    if (dc < 0.0) {
      best = i;
    } else if (dc == 0.0) {
      const double di = std::abs(grid[i] - 0.5), db = std::abs(grid[best] - 0.5);
      if (di < db || (di == db && grid[i] < grid[best])) best = i;
    }
  }
  return grid[best];
}

SwitchResult compute_switch_point(const EdgeSampler& edge, const TriMesh& mesh_a, const TriMesh& mesh_b,
                                  const SwitchConfig& config) {
  mesh_a.validate();
  mesh_b.validate();
  SwitchResult r;
  r.grid = config.grid_values();
  const auto params = union_params(config.steps, r.grid);
  std::vector<Points> forward(r.grid.size()), backward(r.grid.size());
  auto slot = [&](double p) {
    auto it = std::find(r.grid.begin(), r.grid.end(), p);
    return it == r.grid.end() ? -1 : static_cast<int>(it - r.grid.begin());
  };
  integrate_edge(edge, mesh_a, params, config.lambda, [&](std::size_t i, const Points& v) {
    if (const int s = slot(params[i]); s >= 0) forward[static_cast<std::size_t>(s)] = v;
  });
  const std::vector<double> reversed(params.rbegin(), params.rend());
  integrate_edge(edge, mesh_b, reversed, config.lambda, [&](std::size_t i, const Points& v) {
    if (const int s = slot(reversed[i]); s >= 0) backward[static_cast<std::size_t>(s)] = v;
  });
  for (std::size_t g = 0; g < r.grid.size(); ++g)
    r.chamfers.push_back(chamfer(vertex_cloud(forward[g]), vertex_cloud(backward[g])));
  r.t_star = pick_switch_point(r.grid, r.chamfers);
  return r;
}

double switch_chamfer(const EdgeSampler& edge, const TriMesh& mesh_a, const TriMesh& mesh_b, double t, int steps,
                      double lambda) {
  const auto params = union_params(steps, {t});
  std::vector<double> fwd, bwd;
  for (double p : params) {
    if (p <= t) fwd.push_back(p);
    if (p >= t) bwd.push_back(p);
  }
  std::reverse(bwd.begin(), bwd.end());
  Points a, b;
  integrate_edge(edge, mesh_a, fwd, lambda, [&](std::size_t, const Points& v) { a = v; });
  integrate_edge(edge, mesh_b, bwd, lambda, [&](std::size_t, const Points& v) { b = v; });
  return chamfer(vertex_cloud(a), vertex_cloud(b));
}

GeodesicPolyline remap_edge(const GeodesicPolyline& poly, double t_star) {
  if (!(t_star > 0.0 && t_star < 1.0))
    fail(ErrorCode::invalid_input, "remap_edge: t* = " + std::to_string(t_star) + " must lie in (0, 1)");
  GeodesicPolyline out = poly;
  out.warp = Warp::through(t_star);
  return out;
}

nlohmann::json SwitchPlan::to_json() const {
  nlohmann::json warps = nlohmann::json::array();
  for (std::size_t e = 0; e < t_star.size(); ++e) warps.push_back(warp(static_cast<int>(e)).knots());
  return {{"t_star", t_star}, {"warps", warps}};
}

SwitchPlan SwitchPlan::from_json(const nlohmann::json& j) {
  SwitchPlan p;
  p.t_star = j.at("t_star").get<std::vector<double>>();
  for (double t : p.t_star)
    if (!(t > 0.0 && t < 1.0)) fail(ErrorCode::invalid_input, "switch plan: t* outside (0, 1)");
  return p;
}

int active_mesh(std::span<const Vec2> landmark_positions, const Vec2& q) {
  return voronoi_cell_of(landmark_positions, q);
}

}  // namespace msub
