#include "msub/geodesic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msub/error.hpp"

namespace msub {

Warp::Warp(std::vector<std::pair<double, double>> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 2) fail(ErrorCode::invalid_input, "warp needs at least two knots");
  if (knots_.front() != std::pair{0.0, 0.0} || knots_.back() != std::pair{1.0, 1.0})
    fail(ErrorCode::invalid_input, "warp must map 0 to 0 and 1 to 1");
  for (std::size_t i = 1; i < knots_.size(); ++i) {
    if (!(knots_[i].first > knots_[i - 1].first) || !(knots_[i].second > knots_[i - 1].second))
      fail(ErrorCode::invalid_input, "warp knots must be strictly increasing");
  }
}

Warp Warp::through(double at_half) {
  if (at_half == 0.5) return {};
  return Warp({{0.0, 0.0}, {0.5, at_half}, {1.0, 1.0}});
}

double Warp::operator()(double t) const {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                             [](double v, const std::pair<double, double>& k) { return v < k.first; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double s = (t - lo.first) / (hi.first - lo.first);
  return lo.second + s * (hi.second - lo.second);
}

bool Warp::is_identity() const {
  return std::all_of(knots_.begin(), knots_.end(), [](const auto& k) { return k.first == k.second; });
}

GeodesicPolyline straight_polyline(const LatentVector& from, const LatentVector& to, std::size_t count) {
  if (count < 2) fail(ErrorCode::invalid_input, "polyline needs at least two nodes");
  if (from.size() != to.size()) fail(ErrorCode::invalid_input, "polyline endpoints differ in dimension");
  GeodesicPolyline p;
  p.nodes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (i == 0) p.nodes.push_back(from);
    else if (i + 1 == count) p.nodes.push_back(to);
    else {
      const double s = static_cast<double>(i) / static_cast<double>(count - 1);
      p.nodes.push_back((1.0 - s) * from + s * to);
    }
  }
  return p;
}

double path_energy(const std::vector<Eigen::VectorXd>& lifted) {
  double e = 0.0;
  for (std::size_t i = 0; i + 1 < lifted.size(); ++i) e += (lifted[i + 1] - lifted[i]).squaredNorm();
  return e;
}

double path_energy(const Generator& gen, const std::vector<LatentVector>& nodes) {
  if (nodes.size() < 2) fail(ErrorCode::invalid_input, "path_energy: need at least two nodes");
  std::vector<Eigen::VectorXd> lifted;
  lifted.reserve(nodes.size());
  for (const auto& z : nodes) lifted.push_back(gen.forward_flat(z));
  return path_energy(lifted);
}

double path_energy(const Generator& gen, const GeodesicPolyline& poly) { return path_energy(gen, poly.nodes); }

namespace {
LatentVector at_parameter(const std::vector<LatentVector>& nodes, double s) {
  const double pos = s * static_cast<double>(nodes.size() - 1);
  auto seg = static_cast<std::size_t>(std::floor(pos));
  if (seg >= nodes.size() - 1) seg = nodes.size() - 2;
  const double f = pos - static_cast<double>(seg);
  if (f == 0.0) return nodes[seg];
  if (f == 1.0) return nodes[seg + 1];
  return (1.0 - f) * nodes[seg] + f * nodes[seg + 1];
}
}  // namespace

GeodesicPolyline subdivide(const GeodesicPolyline& poly) {
  const std::size_t n = poly.nodes.size();
  if (n < 2) fail(ErrorCode::invalid_input, "subdivide: need at least two nodes");
  GeodesicPolyline out;
  out.warp = poly.warp;
  const std::size_t m = 2 * n;
  out.nodes.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (j == 0) out.nodes.push_back(poly.nodes.front());
    else if (j + 1 == m) out.nodes.push_back(poly.nodes.back());
    else out.nodes.push_back(at_parameter(poly.nodes, static_cast<double>(j) / static_cast<double>(m - 1)));
  }
  return out;
}

LatentVector eval_polyline(const GeodesicPolyline& poly, double t) {
  if (poly.nodes.size() < 2) fail(ErrorCode::invalid_input, "eval_polyline: need at least two nodes");
  if (t < 0.0 || t > 1.0) {
    warn("eval_polyline: t=" + std::to_string(t) + " clamped to [0,1]");
    t = std::clamp(t, 0.0, 1.0);
  }
  const double s = poly.warp(t);
  if (s <= 0.0) return poly.nodes.front();
  if (s >= 1.0) return poly.nodes.back();
  return at_parameter(poly.nodes, s);
}

nlohmann::json GeodesicConfig::to_json() const {
  return {{"init_nodes", init_nodes}, {"subdivide_every", subdivide_every}, {"max_nodes", max_nodes},
          {"final_iters", final_iters}, {"optimizer", optimizer.to_json()}, {"cosine_final", cosine_final},
          {"seed", seed}};
}

GeodesicConfig GeodesicConfig::from_json(const nlohmann::json& j) {
  GeodesicConfig c;
  if (!j.is_object()) return c;
  c.init_nodes = j.value("init_nodes", c.init_nodes);
  c.subdivide_every = j.value("subdivide_every", c.subdivide_every);
  c.max_nodes = j.value("max_nodes", c.max_nodes);
  c.final_iters = j.value("final_iters", c.final_iters);
  c.optimizer = OptimizerConfig::from_json(j.value("optimizer", nlohmann::json::object()), c.optimizer);
  c.cosine_final = j.value("cosine_final", c.cosine_final);
  c.seed = j.value("seed", c.seed);
  if (c.init_nodes < 2 || c.max_nodes < c.init_nodes || c.subdivide_every < 1 || c.final_iters < 0)
    fail(ErrorCode::invalid_input, "geodesic config: inconsistent node schedule");
  return c;
}

GeodesicResult optimize_geodesic(const Generator& gen, const LatentVector& z_src, const LatentVector& z_tar,
                                 const GeodesicConfig& config) {
  if (z_src.size() != gen.latent_dim() || z_tar.size() != gen.latent_dim())
    fail(ErrorCode::invalid_input, "optimize_geodesic: endpoint dimension does not match generator");
  if (config.init_nodes < 2 || config.max_nodes < config.init_nodes)
    fail(ErrorCode::invalid_input, "optimize_geodesic: inconsistent node schedule");

  GeodesicResult result;
  GeodesicPolyline poly = straight_polyline(z_src, z_tar, static_cast<std::size_t>(config.init_nodes));
  const int d = gen.latent_dim();

  std::vector<Eigen::VectorXd> lifted;
  auto energy_and_gradient = [&](std::vector<double>* grad) {
    const std::size_t n = poly.nodes.size();
    lifted.resize(n);
    for (std::size_t i = 0; i < n; ++i) lifted[i] = gen.forward_flat(poly.nodes[i]);
    const double e = path_energy(lifted);
    if (grad) {
      grad->assign((n - 2) * static_cast<std::size_t>(d), 0.0);
      for (std::size_t i = 1; i + 1 < n; ++i) {
        const Eigen::VectorXd cot = 2.0 * (2.0 * lifted[i] - lifted[i - 1] - lifted[i + 1]);
        const Eigen::VectorXd g = gen.vjp(poly.nodes[i], cot);
        std::copy(g.data(), g.data() + d, grad->begin() + static_cast<std::ptrdiff_t>((i - 1) * d));
      }
    }
    return e;
  };

  std::vector<double> params, grad;
  auto gather = [&] {
    params.resize((poly.nodes.size() - 2) * static_cast<std::size_t>(d));
    for (std::size_t i = 1; i + 1 < poly.nodes.size(); ++i)
      std::copy(poly.nodes[i].data(), poly.nodes[i].data() + d,
                params.begin() + static_cast<std::ptrdiff_t>((i - 1) * d));
  };
  auto scatter = [&] {
    for (std::size_t i = 1; i + 1 < poly.nodes.size(); ++i)
      std::copy(params.begin() + static_cast<std::ptrdiff_t>((i - 1) * d),
                params.begin() + static_cast<std::ptrdiff_t>(i * d), poly.nodes[i].data());
  };

  std::size_t iteration = 0;
  while (true) {
    const bool final_phase = static_cast<int>(poly.nodes.size()) >= config.max_nodes;
    const int phase_iters = final_phase ? config.final_iters : config.subdivide_every;
    gather();
    Optimizer opt(params.size(), config.optimizer);
    GeodesicPolyline best = poly;
    double best_energy = std::numeric_limits<double>::infinity();
    for (int it = 0; it <= phase_iters; ++it, ++iteration) {
      const bool last = it == phase_iters;
      const double e = energy_and_gradient(last || params.empty() ? nullptr : &grad);
      if (!std::isfinite(e))
        throw TrainingDiverged("optimize_geodesic: non-finite energy", iteration, result.trace);
      result.trace.push_back(e);
      if (e < best_energy) {
        best_energy = e;
        best = poly;
      }
      if (last || params.empty()) break;
      const double scale = (final_phase && config.cosine_final) ? cosine_schedule(it, phase_iters) : 1.0;
      opt.step(params, grad, scale);
      scatter();
    }
    poly = std::move(best);
    if (final_phase) break;
    poly = subdivide(poly);
    if (static_cast<int>(poly.nodes.size()) > config.max_nodes) {
      // Trim to exactly max_nodes by resampling
      GeodesicPolyline trimmed;
      for (int j = 0; j < config.max_nodes; ++j)
        trimmed.nodes.push_back(j == 0 ? poly.nodes.front()
                                : j + 1 == config.max_nodes
                                    ? poly.nodes.back()
                                    : at_parameter(poly.nodes, static_cast<double>(j) / (config.max_nodes - 1)));
      poly = std::move(trimmed);
    }
  }
  result.polyline = std::move(poly);
  result.energy = path_energy(gen, result.polyline);
  return result;
}

}  // namespace msub
