#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "msub/generator.hpp"
#include "msub/geomcore.hpp"
#include "msub/smallnet.hpp"

namespace msub {

/// Coarse-to-fine schedule: the mesh-side target cloud is re-drawn with a
/// stage-specific seed at every stage boundary.
struct ProjectionSchedule {
  std::vector<std::size_t> sample_counts{2048, 4096, 8192, 16384, 32768};
  std::size_t iters_per_stage = 800;
  OptimizerConfig optimizer{OptimizerConfig::Kind::adam, 0.01};
  bool cosine_decay = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ProjectionSchedule from_json(const nlohmann::json& j);
};

struct ProjectionResult {
  LatentVector latent;
  double loss = 0.0;                 // final-stage Chamfer of the returned latent
  std::vector<double> stage_losses;  // best loss reached in each stage
  std::vector<double> trace;         // per-iteration loss
};

ProjectionResult project(const Generator& gen, const TriMesh& mesh, const ProjectionSchedule& schedule,
                         const LatentVector& z0);

/// Chamfer distance and its gradient with respect to the moving cloud.
double chamfer_gradient(const Points& moving, const Points& target, const KdTree3& target_tree,
                        Points& gradient);

}  // namespace msub
