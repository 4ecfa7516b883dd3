#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "msub/generator.hpp"
#include "msub/geomcore.hpp"

namespace msub {

struct NeighborGraph {
  int k = 0;
  std::vector<std::vector<int>> neighbors;     // ascending by distance
  std::vector<std::vector<double>> distances;

  std::size_t size() const { return neighbors.size(); }
  bool is_neighbor(int a, int b) const;
};

NeighborGraph knn_graph(const Generator& gen, std::span<const LatentVector> latents, int k);
// Same graph from a precomputed symmetric distance matrix.
NeighborGraph knn_graph(const Eigen::MatrixXd& distances, int k);

struct Embedding2D {
  std::vector<Vec2> positions;
  std::vector<int> pinned;  // sorted landmark indices
};

struct Triplet {
  int anchor, positive, negative;
};

double triplet_loss(std::span<const Vec2> anchors, std::span<const Vec2> positives,
                    std::span<const Vec2> negatives, double alpha);
double triplet_loss(std::span<const Vec2> positions, std::span<const Triplet> triplets, double alpha,
                    std::vector<Vec2>* gradient = nullptr);

struct Stage1Config {
  int iters = 600;
  double lr = 0.1;
  double alpha = 0.5;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static Stage1Config from_json(const nlohmann::json& j);
};

struct Stage2Config {
  int iters = 400;
  double lr = 0.005;
  double area_weight = 1.0;
  double angle_weight = 1.0;
  double angle_threshold_deg = 20.0;
  double snap_fraction = 0.02;  // of the bounding-box diagonal
  int retriangulate_every = 10;
  double rel_tol = 1e-6;

  nlohmann::json to_json() const;
  static Stage2Config from_json(const nlohmann::json& j);
};

struct Stage2Report {
  int accepted_iters = 0;
  bool rolled_back = false;
  double start_min_angle = 0.0;            // radians
  std::vector<double> min_angle_trace;     // per accepted iterate
  std::vector<double> loss_trace;
  std::vector<int> snapped;
};

Embedding2D embed_stage1(const NeighborGraph& graph, const Stage1Config& config = {});
Embedding2D embed_stage2(const Embedding2D& emb, const Stage2Config& config = {},
                         Stage2Report* report = nullptr);

// Regularizer on a fixed triangle set; gradient is optional.
double stage2_loss(std::span<const Vec2> positions, std::span<const Face> triangles, const Stage2Config& config,
                   std::vector<Vec2>* gradient = nullptr);
double min_interior_angle(std::span<const Vec2> positions, std::span<const Face> triangles);

}  // namespace msub
