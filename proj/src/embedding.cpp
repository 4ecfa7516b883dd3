#include "msub/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "msub/error.hpp"
#include "msub/random.hpp"
#include "msub/smallnet.hpp"

namespace msub {

bool NeighborGraph::is_neighbor(int a, int b) const {
  const auto& n = neighbors.at(static_cast<std::size_t>(a));
  return std::find(n.begin(), n.end(), b) != n.end();
}

NeighborGraph knn_graph(const Eigen::MatrixXd& dist, int k) {
  const int n = static_cast<int>(dist.rows());
  if (dist.cols() != n) fail(ErrorCode::invalid_input, "knn_graph: distance matrix must be square");
  if (k < 1 || k >= n)
    fail(ErrorCode::invalid_input, "knn_graph: k=" + std::to_string(k) + " out of range for " +
                                       std::to_string(n) + " landmarks");
  NeighborGraph g;
  g.k = k;
  g.neighbors.resize(static_cast<std::size_t>(n));
  g.distances.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<int> others;
    for (int j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    std::stable_sort(others.begin(), others.end(), [&](int a, int b) { return dist(i, a) < dist(i, b); });
    others.resize(static_cast<std::size_t>(k));
    for (int j : others) g.distances[static_cast<std::size_t>(i)].push_back(dist(i, j));
    g.neighbors[static_cast<std::size_t>(i)] = std::move(others);
  }
  return g;
}

NeighborGraph knn_graph(const Generator& gen, std::span<const LatentVector> latents, int k) {
  const auto n = static_cast<Eigen::Index>(latents.size());
  std::vector<PointCloud> clouds;
  clouds.reserve(latents.size());
  for (const auto& z : latents) clouds.push_back(gen.forward(z));
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      dist(i, j) = dist(j, i) = correspondence_distance(clouds[static_cast<std::size_t>(i)],
                                                        clouds[static_cast<std::size_t>(j)]);
  return knn_graph(dist, k);
}

double triplet_loss(std::span<const Vec2> anchors, std::span<const Vec2> positives,
                    std::span<const Vec2> negatives, double alpha) {
  if (anchors.size() != positives.size() || anchors.size() != negatives.size())
    fail(ErrorCode::invalid_input, "triplet_loss: lists differ in length");
  double loss = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const double h = (anchors[i] - positives[i]).squaredNorm() - (anchors[i] - negatives[i]).squaredNorm() + alpha;
    loss += std::max(h, 0.0);
  }
  return loss;
}

double triplet_loss(std::span<const Vec2> x, std::span<const Triplet> triplets, double alpha,
                    std::vector<Vec2>* gradient) {
  if (gradient) gradient->assign(x.size(), Vec2::Zero());
  double loss = 0.0;
  for (const auto& t : triplets) {
    const Vec2& a = x[static_cast<std::size_t>(t.anchor)];
    const Vec2& p = x[static_cast<std::size_t>(t.positive)];
    const Vec2& n = x[static_cast<std::size_t>(t.negative)];
    const double h = (a - p).squaredNorm() - (a - n).squaredNorm() + alpha;
    if (h <= 0.0) continue;
    loss += h;
    if (gradient) {
      auto& g = *gradient;
      g[static_cast<std::size_t>(t.anchor)] += 2.0 * (n - p);
      g[static_cast<std::size_t>(t.positive)] += -2.0 * (a - p);
      g[static_cast<std::size_t>(t.negative)] += 2.0 * (a - n);
    }
  }
  return loss;
}

nlohmann::json Stage1Config::to_json() const {
  return {{"iters", iters}, {"lr", lr}, {"alpha", alpha}, {"seed", seed}};
}

Stage1Config Stage1Config::from_json(const nlohmann::json& j) {
  Stage1Config c;
  if (!j.is_object()) return c;
  c.iters = j.value("iters", c.iters);
  c.lr = j.value("lr", c.lr);
  c.alpha = j.value("alpha", c.alpha);
  c.seed = j.value("seed", c.seed);
  if (c.iters < 0 || !(c.lr > 0.0) || c.alpha < 0.0) fail(ErrorCode::invalid_input, "embed stage1: bad config");
  return c;
}

nlohmann::json Stage2Config::to_json() const {
  return {{"iters", iters}, {"lr", lr}, {"area_weight", area_weight}, {"angle_weight", angle_weight},
          {"angle_threshold_deg", angle_threshold_deg}, {"snap_fraction", snap_fraction},
          {"retriangulate_every", retriangulate_every}, {"rel_tol", rel_tol}};
}

Stage2Config Stage2Config::from_json(const nlohmann::json& j) {
  Stage2Config c;
  if (!j.is_object()) return c;
  c.iters = j.value("iters", c.iters);
  c.lr = j.value("lr", c.lr);
  c.area_weight = j.value("area_weight", c.area_weight);
  c.angle_weight = j.value("angle_weight", c.angle_weight);
  c.angle_threshold_deg = j.value("angle_threshold_deg", c.angle_threshold_deg);
  c.snap_fraction = j.value("snap_fraction", c.snap_fraction);
  c.retriangulate_every = j.value("retriangulate_every", c.retriangulate_every);
  c.rel_tol = j.value("rel_tol", c.rel_tol);
  if (c.iters < 0 || !(c.lr > 0.0) || c.retriangulate_every < 1 || c.snap_fraction < 0.0)
    fail(ErrorCode::invalid_input, "embed stage2: bad config");
  return c;
}

namespace {

void normalize(std::vector<Vec2>& x) {
  Vec2 mean = Vec2::Zero();
  for (const auto& p : x) mean += p;
  mean /= static_cast<double>(x.size());
  double rms = 0.0;
  for (auto& p : x) {
    p -= mean;
    rms += p.squaredNorm();
  }
  rms = std::sqrt(rms / static_cast<double>(x.size()));
  if (rms > 0.0)
    for (auto& p : x) p /= rms;
}

}  // namespace

Embedding2D embed_stage1(const NeighborGraph& graph, const Stage1Config& config) {
  const std::size_t n = graph.size();
  Embedding2D emb;
  emb.positions.assign(n, Vec2::Zero());
  if (n <= 1) return emb;

  Rng rng(config.seed);
  for (auto& p : emb.positions) p = Vec2(rng.normal(), rng.normal());
  normalize(emb.positions);

  std::vector<std::vector<int>> non_neighbors(n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (a != b && !graph.is_neighbor(static_cast<int>(a), static_cast<int>(b)))
        non_neighbors[a].push_back(static_cast<int>(b));

  Optimizer opt(2 * n, {OptimizerConfig::Kind::adam, config.lr});
  std::vector<double> params(2 * n), grads(2 * n);
  std::vector<Triplet> triplets;
  std::vector<Vec2> g;
  std::vector<double> trace;
  for (int it = 0; it < config.iters; ++it) {
    triplets.clear();
    for (std::size_t a = 0; a < n; ++a) {
      if (non_neighbors[a].empty()) continue;
      for (int p : graph.neighbors[a]) {
        const int neg = non_neighbors[a][rng.index(non_neighbors[a].size())];
        triplets.push_back({static_cast<int>(a), p, neg});
      }
    }
    if (triplets.empty()) break;
    const double loss = triplet_loss(emb.positions, triplets, config.alpha, &g);
    if (!std::isfinite(loss))
      throw TrainingDiverged("embed stage1: non-finite triplet loss", static_cast<std::size_t>(it), trace);
    trace.push_back(loss);
    for (std::size_t i = 0; i < n; ++i) {
      params[2 * i] = emb.positions[i].x();
      params[2 * i + 1] = emb.positions[i].y();
      grads[2 * i] = g[i].x();
      grads[2 * i + 1] = g[i].y();
    }
    opt.step(params, grads);
    for (std::size_t i = 0; i < n; ++i) emb.positions[i] = Vec2(params[2 * i], params[2 * i + 1]);
    normalize(emb.positions);
  }
  return emb;
}

namespace {

double cross(const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); }

// Interior angle at a of triangle (a, b, c), with its gradient.
double angle_at(const Vec2& a, const Vec2& b, const Vec2& c, Vec2* ga, Vec2* gb, Vec2* gc) {
  const Vec2 u = b - a, v = c - a;
  const double y = cross(u, v), x = u.dot(v);
  const double theta = std::atan2(std::abs(y), x);
  if (ga) {
    const double r2 = x * x + y * y;
    const double s = y >= 0.0 ? 1.0 : -1.0;
    // d|y|/du = s * (v.y, -v.x), d|y|/dv = s * (-u.y, u.x)
    const Vec2 gu = (x * s * Vec2(v.y(), -v.x()) - std::abs(y) * v) / r2;
    const Vec2 gv = (x * s * Vec2(-u.y(), u.x()) - std::abs(y) * u) / r2;
    *gb = gu;
    *gc = gv;
    *ga = -gu - gv;
  }
  return theta;
}

}  // namespace

double min_interior_angle(std::span<const Vec2> x, std::span<const Face> triangles) {
  double m = std::numbers::pi;
  for (const auto& f : triangles) {
    const Vec2 &a = x[f[0]], &b = x[f[1]], &c = x[f[2]];
    m = std::min({m, angle_at(a, b, c, nullptr, nullptr, nullptr), angle_at(b, c, a, nullptr, nullptr, nullptr),
                  angle_at(c, a, b, nullptr, nullptr, nullptr)});
  }
  return m;
}

double stage2_loss(std::span<const Vec2> x, std::span<const Face> triangles, const Stage2Config& config,
                   std::vector<Vec2>* gradient) {
  if (gradient) gradient->assign(x.size(), Vec2::Zero());
  if (triangles.empty()) return 0.0;
  std::vector<double> areas(triangles.size());
  double mean = 0.0;
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    const auto& f = triangles[t];
    areas[t] = 0.5 * cross(x[f[1]] - x[f[0]], x[f[2]] - x[f[0]]);
    mean += areas[t];
  }
  mean /= static_cast<double>(triangles.size());
  const double threshold = config.angle_threshold_deg * std::numbers::pi / 180.0;

  double loss = 0.0;
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    const auto& f = triangles[t];
    const Vec2 &a = x[f[0]], &b = x[f[1]], &c = x[f[2]];
    const double dev = areas[t] - mean;
    loss += config.area_weight * dev * dev;
    if (gradient) {
      // sum of deviations is zero, so the mean's derivative drops out
      const double w = 2.0 * config.area_weight * dev * 0.5;
      auto& g = *gradient;
      g[f[0]] += w * Vec2(b.y() - c.y(), c.x() - b.x());
      g[f[1]] += w * Vec2(c.y() - a.y(), a.x() - c.x());
      g[f[2]] += w * Vec2(a.y() - b.y(), b.x() - a.x());
    }

    Vec2 g0[3], g1[3], g2[3];
    const double th[3] = {angle_at(a, b, c, &g0[0], &g0[1], &g0[2]), angle_at(b, c, a, &g1[1], &g1[2], &g1[0]),
                          angle_at(c, a, b, &g2[2], &g2[0], &g2[1])};
    const int m = static_cast<int>(std::min_element(th, th + 3) - th);
    const double gap = threshold - th[m];
    if (gap > 0.0) {
      loss += config.angle_weight * gap * gap;
      if (gradient) {
        const Vec2* gm = m == 0 ? g0 : m == 1 ? g1 : g2;
        for (int k = 0; k < 3; ++k) (*gradient)[f[k]] += -2.0 * config.angle_weight * gap * gm[k];
      }
    }
  }
  return loss;
}

Embedding2D embed_stage2(const Embedding2D& emb, const Stage2Config& config, Stage2Report* report) {
  const std::size_t n = emb.positions.size();
  if (n < 3) fail(ErrorCode::invalid_input, "embed stage2: need at least 3 landmarks");
  Stage2Report local;
  Stage2Report& rep = report ? *report : local;
  rep = {};

  Triangulation2D tri = delaunay(emb.positions);
  Embedding2D out;
  out.positions = emb.positions;
  out.pinned = tri.hull;
  std::sort(out.pinned.begin(), out.pinned.end());
  std::vector<char> is_pinned(n, 0);
  for (int p : out.pinned) is_pinned[static_cast<std::size_t>(p)] = 1;
  std::vector<Vec2> hull_polygon;
  for (int h : tri.hull) hull_polygon.push_back(emb.positions[static_cast<std::size_t>(h)]);

  std::vector<Face> faces = tri.triangles;
  rep.start_min_angle = min_interior_angle(out.positions, faces);
  rep.min_angle_trace.push_back(rep.start_min_angle);

  std::vector<std::size_t> free_ids;
  for (std::size_t i = 0; i < n; ++i)
    if (!is_pinned[i]) free_ids.push_back(i);

  double loss = stage2_loss(out.positions, faces, config);
  rep.loss_trace.push_back(loss);
  if (!free_ids.empty() && loss > 0.0) {
    Optimizer opt(2 * free_ids.size(), {OptimizerConfig::Kind::adam, config.lr});
    std::vector<double> params(2 * free_ids.size()), grads(2 * free_ids.size());
    std::vector<Vec2> g;
    for (int it = 1; it <= config.iters; ++it) {
      stage2_loss(out.positions, faces, config, &g);
      for (std::size_t k = 0; k < free_ids.size(); ++k) {
        params[2 * k] = out.positions[free_ids[k]].x();
        params[2 * k + 1] = out.positions[free_ids[k]].y();
        grads[2 * k] = g[free_ids[k]].x();
        grads[2 * k + 1] = g[free_ids[k]].y();
      }
      opt.step(params, grads);
      std::vector<Vec2> cand = out.positions;
      for (std::size_t k = 0; k < free_ids.size(); ++k) cand[free_ids[k]] = Vec2(params[2 * k], params[2 * k + 1]);

      bool valid = true;
      for (const auto& f : faces)
        if (cross(cand[f[1]] - cand[f[0]], cand[f[2]] - cand[f[0]]) <= 0.0) valid = false;
      std::vector<Face> cand_faces = faces;
      if (valid && it % config.retriangulate_every == 0) {
        try {
          cand_faces = delaunay(cand).triangles;
        } catch (const Error&) {
          valid = false;
        }
      }
      const double min_angle = valid ? min_interior_angle(cand, cand_faces) : 0.0;
      if (!valid || min_angle < rep.start_min_angle - 1e-6) {
        rep.rolled_back = true;
        warn("embed stage2: iterate " + std::to_string(it) +
             " degraded the triangulation; keeping the last valid positions");
        break;
      }
      const double cand_loss = stage2_loss(cand, cand_faces, config);
      if (!std::isfinite(cand_loss))
        throw TrainingDiverged("embed stage2: non-finite loss", static_cast<std::size_t>(it), rep.loss_trace);
      out.positions = std::move(cand);
      faces = std::move(cand_faces);
      rep.accepted_iters = it;
      rep.min_angle_trace.push_back(min_angle);
      rep.loss_trace.push_back(cand_loss);
      const double rel = std::abs(cand_loss - loss) / std::max(std::abs(loss), 1e-300);
      loss = cand_loss;
      if (rel < config.rel_tol || loss == 0.0) break;
    }
  }

  Vec2 lo = out.positions[0], hi = out.positions[0];
  for (const auto& p : out.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double threshold = config.snap_fraction * (hi - lo).norm();
  for (std::size_t i : free_ids) {
    if (distance_to_polygon(hull_polygon, out.positions[i]) < threshold) {
      out.positions[i] = closest_on_polygon(hull_polygon, out.positions[i]);
      rep.snapped.push_back(static_cast<int>(i));
    }
  }
  delaunay(out.positions);  // validates the final layout
  return out;
}

}  // namespace msub
