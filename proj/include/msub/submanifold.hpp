#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "msub/generator.hpp"
#include "msub/geodesic.hpp"
#include "msub/geomcore.hpp"
#include "msub/smallnet.hpp"

namespace msub {

struct VertexTag {
  enum class Kind : std::uint8_t { interior = 0, boundary = 1, landmark = 2 };
  Kind kind = Kind::interior;
  int edge = -1;      // Delaunay edge id (boundary)
  double t = 0.0;     // parameter from edges[edge][0] to edges[edge][1]
  int landmark = -1;  // landmark id (landmark)
};

/// Regular k-fold subdivision of every Delaunay facet. Delaunay edge points
/// are shared between the two facets that meet there.
struct FemMesh {
  Triangulation2D tri;
  int level = 1;  // k
  std::vector<Vec2> vertices;
  std::vector<Face> faces;
  std::vector<VertexTag> tags;
  std::vector<double> areas;
  std::vector<Eigen::Matrix2d> inverse_edges;  // E^-1, E = [x2-x1 | x3-x1]
  std::vector<int> face_facet;                 // owning Delaunay triangle
  // Per facet, lattice point (i, j), i + j <= k, to vertex id.
  std::vector<std::vector<int>> lattice;
  // Per facet, lattice cell (i, j) to its "up" and "down" face ids.
  std::vector<std::vector<int>> up_faces, down_faces;

  std::size_t face_count() const { return faces.size(); }
  int lattice_vertex(int facet, int i, int j) const;
  // Faces of one facet are stored contiguously: k^2 faces starting here.
  int facet_face_begin(int facet) const { return facet * level * level; }

  struct Hit {
    int face = -1;
    Eigen::Vector3d barycentric = Eigen::Vector3d::Zero();
  };
  std::optional<Hit> locate(const Vec2& q) const;
};

FemMesh discretize_level(const Triangulation2D& tri, int level);
/// Picks the level so the whole triangulation receives ~density*area faces.
FemMesh discretize(const Triangulation2D& tri, double density);
int level_for_density(const Triangulation2D& tri, double density);

// Count of shared-edge vertices whose position or parameter disagree between
// the two facets that meet there (0 by construction).
std::size_t stitching_mismatches(const FemMesh& fem);

struct MapModel {
  Mlp mlp;
  Encoding encoding;
  Vec2 input_origin = Vec2::Zero();
  double input_scale = 1.0;  // x -> (x - origin) / scale into the unit box
  std::vector<GeodesicPolyline> boundary;  // per Delaunay edge, oriented low id -> high id
  std::vector<LatentVector> landmark_latents;

  Eigen::VectorXd features(const Vec2& x) const;
  LatentVector mlp_value(const Vec2& x) const;
};

/// Fresh model: He-initialised MLP whose output starts at the mean latent.
MapModel init_map_model(const FemMesh& fem, std::vector<GeodesicPolyline> boundary,
                        std::vector<LatentVector> landmark_latents, const std::vector<int>& hidden,
                        const Encoding& encoding, std::uint64_t seed);

LatentVector eval_map(const MapModel& model, const FemMesh& fem, int vertex);
std::vector<LatentVector> eval_map_all(const MapModel& model, const FemMesh& fem);

/// Barycentric interpolation of the facet's landmark latents (the naive lift).
std::vector<LatentVector> barycentric_latents(const FemMesh& fem, const std::vector<LatentVector>& landmark_latents);

Eigen::MatrixXd face_jacobian(const FemMesh& fem, int face, const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                              const Eigen::VectorXd& y3);

// Energy of per-vertex primal values over a face subset (all faces if empty).
double dirichlet_energy(const FemMesh& fem, const std::vector<Eigen::VectorXd>& lifted,
                        const std::vector<int>& faces = {});
double dirichlet_energy(const Generator& gen, const FemMesh& fem, const std::vector<LatentVector>& vertex_latents,
                        const std::vector<int>& faces = {});
double dirichlet_energy(const Generator& gen, const MapModel& model, const FemMesh& fem,
                        const std::vector<int>& faces = {});

struct TrainConfig {
  std::vector<int> hidden{256, 256, 256, 256};
  Encoding encoding{};
  OptimizerConfig optimizer{OptimizerConfig::Kind::adam, 3e-4};
  bool cosine_decay = true;
  int iters = 20000;  // batches
  int batch_faces = 256;
  int micro_batch = 32;
  int plateau_window = 1000;
  double plateau_tol = 1e-3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainResult {
  MapModel model;
  std::vector<double> trace;  // per-batch energy estimate
  int batches = 0;
  double initial_energy = 0.0;
  double final_energy = 0.0;
};

TrainResult train_map(const Generator& gen, const FemMesh& fem, std::vector<GeodesicPolyline> boundary,
                      std::vector<LatentVector> landmark_latents, const TrainConfig& config = {});
// Continue training an existing model.
TrainResult train_map(const Generator& gen, const FemMesh& fem, MapModel model, const TrainConfig& config);

enum class Blend { latent, primal };
Blend blend_from_string(const std::string& s);

struct Inference {
  LatentVector latent;  // barycentric blend of the face's vertex latents
  PointCloud cloud;
};

/// Precomputed per-vertex latents and lifts of a trained model.
struct InferenceCache {
  std::vector<LatentVector> latents;
  std::vector<Eigen::VectorXd> lifts;
};
InferenceCache build_inference_cache(const Generator& gen, const MapModel& model, const FemMesh& fem);

Inference infer(const Generator& gen, const MapModel& model, const FemMesh& fem, const Vec2& q,
                Blend blend = Blend::primal);
Inference infer(const Generator& gen, const InferenceCache& cache, const FemMesh& fem, const Vec2& q,
                Blend blend = Blend::primal);

}  // namespace msub
