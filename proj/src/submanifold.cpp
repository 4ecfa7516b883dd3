#include "msub/submanifold.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "msub/error.hpp"
#include "msub/random.hpp"

namespace msub {

namespace {

int lattice_index(int k, int i, int j) {
  // rows of constant i hold k - i + 1 points
  return i * (k + 1) - i * (i - 1) / 2 + j;
}

}  // namespace

int FemMesh::lattice_vertex(int facet, int i, int j) const {
  return lattice.at(static_cast<std::size_t>(facet)).at(static_cast<std::size_t>(lattice_index(level, i, j)));
}

FemMesh discretize_level(const Triangulation2D& tri, int k) {
  if (k < 1) fail(ErrorCode::invalid_input, "discretize: subdivision level must be >= 1");
  if (tri.triangles.empty()) fail(ErrorCode::invalid_input, "discretize: empty triangulation");
  FemMesh fem;
  fem.tri = tri;
  fem.level = k;

  std::map<int, int> landmark_vertex;
  std::map<std::pair<int, int>, int> edge_vertex;  // (edge, step from low id)
  auto add_vertex = [&](const Vec2& p, VertexTag tag) {
    fem.vertices.push_back(p);
    fem.tags.push_back(tag);
    return static_cast<int>(fem.vertices.size()) - 1;
  };
  auto corner = [&](int site) {
    auto it = landmark_vertex.find(site);
    if (it != landmark_vertex.end()) return it->second;
    VertexTag tag;
    tag.kind = VertexTag::Kind::landmark;
    tag.landmark = site;
    const int v = add_vertex(tri.sites[static_cast<std::size_t>(site)], tag);
    landmark_vertex.emplace(site, v);
    return v;
  };
  // m-th of k steps from site p towards site q
  auto on_edge = [&](int p, int q, int m) {
    const int lo = std::min(p, q), hi = std::max(p, q);
    const int step = p == lo ? m : k - m;
    const int e = tri.edge_index(lo, hi);
    auto it = edge_vertex.find({e, step});
    if (it != edge_vertex.end()) return it->second;
    VertexTag tag;
    tag.kind = VertexTag::Kind::boundary;
    tag.edge = e;
    tag.t = static_cast<double>(step) / k;
    const Vec2& a = tri.sites[static_cast<std::size_t>(lo)];
    const Vec2& b = tri.sites[static_cast<std::size_t>(hi)];
    const int v = add_vertex(a + tag.t * (b - a), tag);
    edge_vertex.emplace(std::pair{e, step}, v);
    return v;
  };

  const int facets = static_cast<int>(tri.triangles.size());
  fem.lattice.resize(static_cast<std::size_t>(facets));
  fem.up_faces.resize(static_cast<std::size_t>(facets));
  fem.down_faces.resize(static_cast<std::size_t>(facets));
  for (int f = 0; f < facets; ++f) {
    const auto& t = tri.triangles[static_cast<std::size_t>(f)];
    const Vec2& c0 = tri.sites[static_cast<std::size_t>(t[0])];
    const Vec2& c1 = tri.sites[static_cast<std::size_t>(t[1])];
    const Vec2& c2 = tri.sites[static_cast<std::size_t>(t[2])];
    auto& lat = fem.lattice[static_cast<std::size_t>(f)];
    lat.assign(static_cast<std::size_t>((k + 1) * (k + 2) / 2), -1);
    for (int i = 0; i <= k; ++i) {
      for (int j = 0; i + j <= k; ++j) {
        int v;
        if (i == 0 && j == 0) v = corner(t[0]);
        else if (i == k) v = corner(t[1]);
        else if (j == k) v = corner(t[2]);
        else if (j == 0) v = on_edge(t[0], t[1], i);
        else if (i == 0) v = on_edge(t[0], t[2], j);
        else if (i + j == k) v = on_edge(t[1], t[2], j);
        else {
          const double s = static_cast<double>(i) / k, r = static_cast<double>(j) / k;
          v = add_vertex(c0 + s * (c1 - c0) + r * (c2 - c0), VertexTag{});
        }
        lat[static_cast<std::size_t>(lattice_index(k, i, j))] = v;
      }
    }
    auto& up = fem.up_faces[static_cast<std::size_t>(f)];
    auto& down = fem.down_faces[static_cast<std::size_t>(f)];
    up.assign(static_cast<std::size_t>(k * (k + 1) / 2 + k), -1);
    down.assign(up.size(), -1);
    auto L = [&](int i, int j) { return lat[static_cast<std::size_t>(lattice_index(k, i, j))]; };
    for (int i = 0; i < k; ++i) {
      for (int j = 0; i + j < k; ++j) {
        up[static_cast<std::size_t>(lattice_index(k, i, j))] = static_cast<int>(fem.faces.size());
        fem.faces.push_back({L(i, j), L(i + 1, j), L(i, j + 1)});
        fem.face_facet.push_back(f);
        if (i + j + 2 <= k) {
          down[static_cast<std::size_t>(lattice_index(k, i, j))] = static_cast<int>(fem.faces.size());
          fem.faces.push_back({L(i + 1, j), L(i + 1, j + 1), L(i, j + 1)});
          fem.face_facet.push_back(f);
        }
      }
    }
  }

  fem.areas.resize(fem.faces.size());
  fem.inverse_edges.resize(fem.faces.size());
  for (std::size_t f = 0; f < fem.faces.size(); ++f) {
    const auto& face = fem.faces[f];
    Eigen::Matrix2d E;
    E.col(0) = fem.vertices[face[1]] - fem.vertices[face[0]];
    E.col(1) = fem.vertices[face[2]] - fem.vertices[face[0]];
    const double det = E.determinant();
    if (!(det > 0.0))
      fail(ErrorCode::degenerate_input, "discretize: FEM face " + std::to_string(f) + " of facet " +
                                            std::to_string(fem.face_facet[f]) + " is degenerate");
    fem.areas[f] = 0.5 * det;
    fem.inverse_edges[f] = E.inverse();
  }
  return fem;
}

int level_for_density(const Triangulation2D& tri, double density) {
  if (!(density > 0.0)) fail(ErrorCode::invalid_input, "discretize: density must be positive");
  double area = 0.0;
  for (std::size_t t = 0; t < tri.triangles.size(); ++t) area += tri.triangle_area(static_cast<int>(t));
  const double per_facet = density * area / static_cast<double>(tri.triangles.size());
  return std::max(1, static_cast<int>(std::lround(std::sqrt(per_facet))));
}

FemMesh discretize(const Triangulation2D& tri, double density) {
  return discretize_level(tri, level_for_density(tri, density));
}

std::size_t stitching_mismatches(const FemMesh& fem) {
  const int k = fem.level;
  // Canonical (low -> high) vertex sequence of each Delaunay edge, per facet.
  std::map<int, std::vector<std::vector<int>>> sequences;
  for (int f = 0; f < static_cast<int>(fem.tri.triangles.size()); ++f) {
    const auto& t = fem.tri.triangles[static_cast<std::size_t>(f)];
    auto collect = [&](int p, int q, auto&& lattice_at) {
      std::vector<int> seq;
      for (int m = 0; m <= k; ++m) seq.push_back(lattice_at(m));
      if (p > q) std::reverse(seq.begin(), seq.end());
      sequences[fem.tri.edge_index(std::min(p, q), std::max(p, q))].push_back(std::move(seq));
    };
    collect(t[0], t[1], [&](int m) { return fem.lattice_vertex(f, m, 0); });
    collect(t[0], t[2], [&](int m) { return fem.lattice_vertex(f, 0, m); });
    collect(t[1], t[2], [&](int m) { return fem.lattice_vertex(f, k - m, m); });
  }
  std::size_t mismatches = 0;
  for (const auto& [e, seqs] : sequences) {
    const auto& edge = fem.tri.edges[static_cast<std::size_t>(e)];
    const Vec2& a = fem.tri.sites[static_cast<std::size_t>(edge[0])];
    const Vec2& b = fem.tri.sites[static_cast<std::size_t>(edge[1])];
    for (std::size_t s = 1; s < seqs.size(); ++s)
      for (int m = 0; m <= k; ++m)
        if (seqs[s][static_cast<std::size_t>(m)] != seqs[0][static_cast<std::size_t>(m)]) ++mismatches;
    for (int m = 1; m < k; ++m) {
      const int v = seqs[0][static_cast<std::size_t>(m)];
      const auto& tag = fem.tags[static_cast<std::size_t>(v)];
      const double t = static_cast<double>(m) / k;
      if (tag.kind != VertexTag::Kind::boundary || tag.edge != e || tag.t != t ||
          fem.vertices[static_cast<std::size_t>(v)] != a + t * (b - a))
        ++mismatches;
    }
  }
  return mismatches;
}

std::optional<FemMesh::Hit> FemMesh::locate(const Vec2& q) const {
  const auto loc = msub::locate(tri, q);
  if (!loc) return std::nullopt;
  const int f = loc->triangle;
  const int k = level;
  const double a = std::max(0.0, loc->barycentric[1]) * k;
  const double b = std::max(0.0, loc->barycentric[2]) * k;
  int i = std::min(static_cast<int>(std::floor(a)), k - 1);
  int j = std::min(static_cast<int>(std::floor(b)), k - 1);
  while (i + j > k - 1) {  // on the far edge
    if (a - i < b - j && j > 0) --j;
    else if (i > 0) --i;
    else --j;
  }
  const bool down = (a - i) + (b - j) > 1.0 && i + j + 2 <= k;
  const int idx = lattice_index(k, i, j);
  const int face = down ? down_faces[static_cast<std::size_t>(f)][static_cast<std::size_t>(idx)]
                        : up_faces[static_cast<std::size_t>(f)][static_cast<std::size_t>(idx)];
  const auto& fc = faces[static_cast<std::size_t>(face)];
  Hit hit;
  hit.face = face;
  hit.barycentric = barycentric(vertices[fc[0]], vertices[fc[1]], vertices[fc[2]], q);
  return hit;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd MapModel::features(const Vec2& x) const { return encoding.encode((x - input_origin) / input_scale); }

LatentVector MapModel::mlp_value(const Vec2& x) const { return mlp.forward(features(x)); }

MapModel init_map_model(const FemMesh& fem, std::vector<GeodesicPolyline> boundary,
                        std::vector<LatentVector> landmark_latents, const std::vector<int>& hidden,
                        const Encoding& encoding, std::uint64_t seed) {
  if (boundary.size() != fem.tri.edges.size())
    fail(ErrorCode::invalid_input, "map model: boundary table has " + std::to_string(boundary.size()) +
                                       " polylines for " + std::to_string(fem.tri.edges.size()) + " edges");
  if (landmark_latents.size() != fem.tri.sites.size())
    fail(ErrorCode::invalid_input, "map model: landmark latent count does not match the triangulation");
  const auto d = static_cast<int>(landmark_latents.front().size());
  for (std::size_t e = 0; e < boundary.size(); ++e) {
    const auto& poly = boundary[e];
    const auto& edge = fem.tri.edges[e];
    if (poly.nodes.size() < 2 || poly.nodes.front().size() != d)
      fail(ErrorCode::invalid_input, "map model: malformed polyline for edge " + std::to_string(e));
    if (poly.nodes.front() != landmark_latents[static_cast<std::size_t>(edge[0])] ||
        poly.nodes.back() != landmark_latents[static_cast<std::size_t>(edge[1])])
      fail(ErrorCode::invalid_input, "map model: polyline of edge " + std::to_string(e) +
                                         " does not join its landmark latents");
  }

  MapModel m;
  m.encoding = encoding;
  Vec2 lo = fem.vertices.front(), hi = fem.vertices.front();
  for (const auto& v : fem.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  m.input_origin = lo;
  m.input_scale = std::max((hi - lo).maxCoeff(), 1e-12);

  std::vector<int> sizes{encoding.output_dim(2)};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(d);
  m.mlp = Mlp::he_uniform(sizes, Activation::relu, seed);
  const int last = m.mlp.layer_count() - 1;
  m.mlp.weight(last) *= 1e-2;
  LatentVector mean = LatentVector::Zero(d);
  for (const auto& z : landmark_latents) mean += z;
  m.mlp.bias(last) = mean / static_cast<double>(landmark_latents.size());
  m.mlp.round_to_f32();
  m.boundary = std::move(boundary);
  m.landmark_latents = std::move(landmark_latents);
  return m;
}

LatentVector eval_map(const MapModel& model, const FemMesh& fem, int vertex) {
  const auto& tag = fem.tags.at(static_cast<std::size_t>(vertex));
  switch (tag.kind) {
    case VertexTag::Kind::landmark: return model.landmark_latents.at(static_cast<std::size_t>(tag.landmark));
    case VertexTag::Kind::boundary: return eval_polyline(model.boundary.at(static_cast<std::size_t>(tag.edge)), tag.t);
    case VertexTag::Kind::interior: break;
  }
  return model.mlp_value(fem.vertices[static_cast<std::size_t>(vertex)]);
}

std::vector<LatentVector> eval_map_all(const MapModel& model, const FemMesh& fem) {
  std::vector<LatentVector> out(fem.vertices.size());
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = eval_map(model, fem, static_cast<int>(v));
  return out;
}

std::vector<LatentVector> barycentric_latents(const FemMesh& fem, const std::vector<LatentVector>& landmark_latents) {
  std::vector<LatentVector> out(fem.vertices.size());
  const int k = fem.level;
  for (std::size_t f = 0; f < fem.tri.triangles.size(); ++f) {
    const auto& t = fem.tri.triangles[f];
    for (int i = 0; i <= k; ++i) {
      for (int j = 0; i + j <= k; ++j) {
        const auto v = static_cast<std::size_t>(fem.lattice_vertex(static_cast<int>(f), i, j));
        if (out[v].size() != 0) continue;
        const auto& tag = fem.tags[v];
        if (tag.kind == VertexTag::Kind::landmark) {
          out[v] = landmark_latents.at(static_cast<std::size_t>(tag.landmark));
        } else if (tag.kind == VertexTag::Kind::boundary) {
          const auto& e = fem.tri.edges[static_cast<std::size_t>(tag.edge)];
          out[v] = (1.0 - tag.t) * landmark_latents.at(static_cast<std::size_t>(e[0])) +
                   tag.t * landmark_latents.at(static_cast<std::size_t>(e[1]));
        } else {
          const double l1 = static_cast<double>(i) / k, l2 = static_cast<double>(j) / k;
          out[v] = (1.0 - l1 - l2) * landmark_latents.at(static_cast<std::size_t>(t[0])) +
                   l1 * landmark_latents.at(static_cast<std::size_t>(t[1])) +
                   l2 * landmark_latents.at(static_cast<std::size_t>(t[2]));
        }
      }
    }
  }
  return out;
}

Eigen::MatrixXd face_jacobian(const FemMesh& fem, int face, const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                              const Eigen::VectorXd& y3) {
  if (y1.size() != y2.size() || y1.size() != y3.size())
    fail(ErrorCode::invalid_input, "face_jacobian: vertex values differ in dimension");
  Eigen::MatrixXd Y(y1.size(), 2);
  Y.col(0) = y2 - y1;
  Y.col(1) = y3 - y1;
  return Y * fem.inverse_edges.at(static_cast<std::size_t>(face));
}

double dirichlet_energy(const FemMesh& fem, const std::vector<Eigen::VectorXd>& lifted, const std::vector<int>& faces) {
  if (lifted.size() != fem.vertices.size())
    fail(ErrorCode::invalid_input, "dirichlet_energy: need one lifted value per FEM vertex");
  auto face_energy = [&](int f) {
    const auto& fc = fem.faces[static_cast<std::size_t>(f)];
    return fem.areas[static_cast<std::size_t>(f)] *
           face_jacobian(fem, f, lifted[fc[0]], lifted[fc[1]], lifted[fc[2]]).squaredNorm();
  };
  double e = 0.0;
  if (faces.empty()) {
    for (int f = 0; f < static_cast<int>(fem.faces.size()); ++f) e += face_energy(f);
  } else {
    for (int f : faces) e += face_energy(f);
  }
  return e;
}

double dirichlet_energy(const Generator& gen, const FemMesh& fem, const std::vector<LatentVector>& vertex_latents,
                        const std::vector<int>& faces) {
  if (vertex_latents.size() != fem.vertices.size())
    fail(ErrorCode::invalid_input, "dirichlet_energy: need one latent per FEM vertex");
  std::vector<Eigen::VectorXd> lifted(vertex_latents.size());
  for (std::size_t v = 0; v < lifted.size(); ++v) lifted[v] = gen.forward_flat(vertex_latents[v]);
  return dirichlet_energy(fem, lifted, faces);
}

double dirichlet_energy(const Generator& gen, const MapModel& model, const FemMesh& fem,
                        const std::vector<int>& faces) {
  return dirichlet_energy(gen, fem, eval_map_all(model, fem), faces);
}

// ---------------------------------------------------------------------------

nlohmann::json TrainConfig::to_json() const {
  return {{"hidden", hidden},
          {"encoding", {{"max_frequency", encoding.max_frequency}, {"include_input", encoding.include_input}}},
          {"optimizer", optimizer.to_json()},
          {"cosine_decay", cosine_decay},
          {"iters", iters},
          {"batch_faces", batch_faces},
          {"micro_batch", micro_batch},
          {"plateau_window", plateau_window},
          {"plateau_tol", plateau_tol},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (!j.is_object()) return c;
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("encoding")) {
    const auto& e = j.at("encoding");
    c.encoding.max_frequency = e.value("max_frequency", c.encoding.max_frequency);
    c.encoding.include_input = e.value("include_input", c.encoding.include_input);
  }
  c.optimizer = OptimizerConfig::from_json(j.value("optimizer", nlohmann::json::object()), c.optimizer);
  c.cosine_decay = j.value("cosine_decay", c.cosine_decay);
  c.iters = j.value("iters", c.iters);
  c.batch_faces = j.value("batch_faces", c.batch_faces);
  c.micro_batch = j.value("micro_batch", c.micro_batch);
  c.plateau_window = j.value("plateau_window", c.plateau_window);
  c.plateau_tol = j.value("plateau_tol", c.plateau_tol);
  c.seed = j.value("seed", c.seed);
  if (c.iters < 0 || c.batch_faces < 1 || c.micro_batch < 1 || c.plateau_window < 1 || c.hidden.empty() ||
      c.encoding.max_frequency < 0)
    fail(ErrorCode::invalid_input, "train-map: bad config");
  return c;
}

TrainResult train_map(const Generator& gen, const FemMesh& fem, std::vector<GeodesicPolyline> boundary,
                      std::vector<LatentVector> landmark_latents, const TrainConfig& config) {
  MapModel model = init_map_model(fem, std::move(boundary), std::move(landmark_latents), config.hidden,
                                  config.encoding, derive_seed(config.seed, 1));
  return train_map(gen, fem, std::move(model), config);
}

TrainResult train_map(const Generator& gen, const FemMesh& fem, MapModel model, const TrainConfig& config) {
  const std::size_t V = fem.vertices.size();
  const std::size_t F = fem.faces.size();
  TrainResult result;

  // Constrained lifts are constants of the optimisation.
  std::vector<Eigen::VectorXd> fixed(V);
  std::vector<Eigen::VectorXd> features(V);
  for (std::size_t v = 0; v < V; ++v) {
    if (fem.tags[v].kind == VertexTag::Kind::interior) features[v] = model.features(fem.vertices[v]);
    else fixed[v] = gen.forward_flat(eval_map(model, fem, static_cast<int>(v)));
  }
  std::vector<Eigen::Matrix2d> quad(F);  // area * E^-1 E^-T
  for (std::size_t f = 0; f < F; ++f)
    quad[f] = fem.areas[f] * fem.inverse_edges[f] * fem.inverse_edges[f].transpose();

  auto full_energy = [&] {
    const auto latents = eval_map_all(model, fem);
    return dirichlet_energy(gen, fem, latents);
  };
  result.initial_energy = full_energy();

  Rng rng(derive_seed(config.seed, 2));
  std::vector<int> order;
  std::size_t cursor = F;
  auto next_face = [&] {
    if (cursor >= F) {
      // Area-weighted random permutation (exponential keys).
      std::vector<std::pair<double, int>> keys(F);
      for (std::size_t f = 0; f < F; ++f) {
        const double u = std::max(rng.uniform(), 1e-300);
        keys[f] = {-std::log(u) / fem.areas[f], static_cast<int>(f)};
      }
      std::sort(keys.begin(), keys.end());
      order.resize(F);
      for (std::size_t f = 0; f < F; ++f) order[f] = keys[f].second;
      cursor = 0;
    }
    return order[cursor++];
  };

  const auto P = static_cast<std::size_t>(model.mlp.parameters().size());
  Optimizer opt(P, config.optimizer);
  Eigen::VectorXd grad(static_cast<Eigen::Index>(P));
  const int batch = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(config.batch_faces), F));
  std::unordered_map<int, int> column;
  std::vector<int> batch_faces, micro, cols;
  std::vector<Eigen::VectorXd> lifts, dlift;

  for (int b = 0; b < config.iters; ++b) {
    batch_faces.clear();
    for (int i = 0; i < batch; ++i) batch_faces.push_back(next_face());
    grad.setZero();
    double loss = 0.0;
    for (std::size_t m0 = 0; m0 < batch_faces.size(); m0 += static_cast<std::size_t>(config.micro_batch)) {
      micro.assign(batch_faces.begin() + static_cast<std::ptrdiff_t>(m0),
                   batch_faces.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(batch_faces.size(), m0 + static_cast<std::size_t>(config.micro_batch))));
      column.clear();
      cols.clear();
      for (int f : micro)
        for (int v : fem.faces[static_cast<std::size_t>(f)])
          if (fem.tags[static_cast<std::size_t>(v)].kind == VertexTag::Kind::interior && !column.count(v)) {
            column.emplace(v, static_cast<int>(cols.size()));
            cols.push_back(v);
          }
      Mlp::Cache cache;
      Eigen::MatrixXd Z;
      if (!cols.empty()) {
        Eigen::MatrixXd X(model.mlp.input_dim(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c)
          X.col(static_cast<Eigen::Index>(c)) = features[static_cast<std::size_t>(cols[c])];
        Z = model.mlp.forward(X, &cache);
        if (!Z.allFinite())
          throw TrainingDiverged("train-map: non-finite latents at batch " + std::to_string(b),
                                 static_cast<std::size_t>(b), result.trace);
      }
      lifts.resize(cols.size());
      dlift.resize(cols.size());
      for (std::size_t c = 0; c < cols.size(); ++c) {
        lifts[c] = gen.forward_flat(Z.col(static_cast<Eigen::Index>(c)));
        dlift[c] = Eigen::VectorXd::Zero(lifts[c].size());
      }
      auto value = [&](int v) -> const Eigen::VectorXd& {
        auto it = column.find(v);
        return it == column.end() ? fixed[static_cast<std::size_t>(v)] : lifts[static_cast<std::size_t>(it->second)];
      };
      auto accumulate = [&](int v, const Eigen::VectorXd& g) {
        auto it = column.find(v);
        if (it != column.end()) dlift[static_cast<std::size_t>(it->second)] += g;
      };
      for (int f : micro) {
        const auto& fc = fem.faces[static_cast<std::size_t>(f)];
        const Eigen::VectorXd& y1 = value(fc[0]);
        const Eigen::VectorXd e1 = value(fc[1]) - y1;
        const Eigen::VectorXd e2 = value(fc[2]) - y1;
        const Eigen::Matrix2d& G = quad[static_cast<std::size_t>(f)];
        const Eigen::VectorXd g1 = G(0, 0) * e1 + G(1, 0) * e2;  // (Y G) column 0
        const Eigen::VectorXd g2 = G(0, 1) * e1 + G(1, 1) * e2;
        loss += e1.dot(g1) + e2.dot(g2);
        accumulate(fc[1], 2.0 * g1);
        accumulate(fc[2], 2.0 * g2);
        accumulate(fc[0], -2.0 * (g1 + g2));
      }
      if (cols.empty()) continue;
      Eigen::MatrixXd dZ(Z.rows(), Z.cols());
      for (std::size_t c = 0; c < cols.size(); ++c)
        dZ.col(static_cast<Eigen::Index>(c)) = gen.vjp(Z.col(static_cast<Eigen::Index>(c)), dlift[c]);
      grad += model.mlp.backward(cache, dZ).params;
    }
    const double scale = static_cast<double>(F) / static_cast<double>(batch);
    loss *= scale;
    grad *= scale;
    if (!std::isfinite(loss) || !grad.allFinite())
      throw TrainingDiverged("train-map: non-finite energy at batch " + std::to_string(b),
                             static_cast<std::size_t>(b), result.trace);
    result.trace.push_back(loss);
    const double lr_scale =
        config.cosine_decay ? cosine_schedule(static_cast<std::size_t>(b), static_cast<std::size_t>(config.iters)) : 1.0;
    opt.step({model.mlp.parameters().data(), P}, {grad.data(), P}, lr_scale);
    result.batches = b + 1;

    const auto w = static_cast<std::size_t>(config.plateau_window);
    if (result.trace.size() >= 2 * w && result.trace.size() % w == 0) {
      const auto end = result.trace.end();
      const double recent = std::accumulate(end - static_cast<std::ptrdiff_t>(w), end, 0.0) / static_cast<double>(w);
      const double before = std::accumulate(end - static_cast<std::ptrdiff_t>(2 * w), end - static_cast<std::ptrdiff_t>(w), 0.0) /
                            static_cast<double>(w);
      if (before - recent < config.plateau_tol * before) break;
    }
  }
  model.mlp.round_to_f32();
  result.final_energy = full_energy();
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------

Blend blend_from_string(const std::string& s) {
  if (s == "latent") return Blend::latent;
  if (s == "primal") return Blend::primal;
  fail(ErrorCode::invalid_input, "unknown blend mode '" + s + "' (expected latent or primal)");
}

InferenceCache build_inference_cache(const Generator& gen, const MapModel& model, const FemMesh& fem) {
  InferenceCache c;
  c.latents = eval_map_all(model, fem);
  c.lifts.resize(c.latents.size());
  for (std::size_t v = 0; v < c.latents.size(); ++v) c.lifts[v] = gen.forward_flat(c.latents[v]);
  return c;
}

namespace {

const FemMesh::Hit& require_inside(const std::optional<FemMesh::Hit>& hit, const Vec2& q) {
  if (!hit)
    fail(ErrorCode::outside, "infer: query (" + std::to_string(q.x()) + ", " + std::to_string(q.y()) +
                                 ") lies outside the exploration space");
  return *hit;
}

Inference blend_vertices(const Generator& gen, const Eigen::Vector3d& w,
                         const LatentVector* z[3], const Eigen::VectorXd* y[3], Blend blend) {
  Inference out;
  out.latent = w[0] * *z[0] + w[1] * *z[1] + w[2] * *z[2];
  if (blend == Blend::latent) {
    out.cloud = gen.forward(out.latent);
  } else {
    out.cloud = PointCloud::from_flat(w[0] * *y[0] + w[1] * *y[1] + w[2] * *y[2]);
  }
  return out;
}

}  // namespace

Inference infer(const Generator& gen, const MapModel& model, const FemMesh& fem, const Vec2& q, Blend blend) {
  const auto& hit = require_inside(fem.locate(q), q);
  const auto& fc = fem.faces[static_cast<std::size_t>(hit.face)];
  LatentVector z[3];
  Eigen::VectorXd y[3];
  for (int i = 0; i < 3; ++i) {
    z[i] = eval_map(model, fem, fc[i]);
    if (blend == Blend::primal) y[i] = gen.forward_flat(z[i]);
  }
  const LatentVector* zp[3] = {&z[0], &z[1], &z[2]};
  const Eigen::VectorXd* yp[3] = {&y[0], &y[1], &y[2]};
  return blend_vertices(gen, hit.barycentric, zp, yp, blend);
}

Inference infer(const Generator& gen, const InferenceCache& cache, const FemMesh& fem, const Vec2& q, Blend blend) {
  if (cache.latents.size() != fem.vertices.size())
    fail(ErrorCode::invalid_input, "infer: inference cache does not match the FEM mesh");
  const auto& hit = require_inside(fem.locate(q), q);
  const auto& fc = fem.faces[static_cast<std::size_t>(hit.face)];
  const LatentVector* zp[3];
  const Eigen::VectorXd* yp[3];
  for (int i = 0; i < 3; ++i) {
    zp[i] = &cache.latents[static_cast<std::size_t>(fc[i])];
    yp[i] = &cache.lifts[static_cast<std::size_t>(fc[i])];
  }
  return blend_vertices(gen, hit.barycentric, zp, yp, blend);
}

}  // namespace msub
