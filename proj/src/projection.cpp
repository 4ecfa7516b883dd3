#include "msub/projection.hpp"

#include <cmath>
#include <limits>

#include "msub/error.hpp"
#include "msub/random.hpp"

namespace msub {

void ProjectionSchedule::validate() const {
  if (sample_counts.empty()) fail(ErrorCode::invalid_input, "projection schedule: no stages");
  for (std::size_t i = 0; i < sample_counts.size(); ++i) {
    if (sample_counts[i] == 0) fail(ErrorCode::invalid_input, "projection schedule: zero sample count");
    if (i > 0 && sample_counts[i] <= sample_counts[i - 1])
      fail(ErrorCode::invalid_input, "projection schedule: sample counts must strictly increase");
  }
  if (iters_per_stage < 1) fail(ErrorCode::invalid_input, "projection schedule: iters_per_stage must be >= 1");
}

nlohmann::json ProjectionSchedule::to_json() const {
  return {{"sample_counts", sample_counts}, {"iters_per_stage", iters_per_stage},
          {"optimizer", optimizer.to_json()}, {"cosine_decay", cosine_decay}, {"seed", seed}};
}

ProjectionSchedule ProjectionSchedule::from_json(const nlohmann::json& j) {
  ProjectionSchedule s;
  if (!j.is_object()) return s;
  s.sample_counts = j.value("sample_counts", s.sample_counts);
  s.iters_per_stage = j.value("iters_per_stage", s.iters_per_stage);
  s.optimizer = OptimizerConfig::from_json(j.value("optimizer", nlohmann::json::object()), s.optimizer);
  s.cosine_decay = j.value("cosine_decay", s.cosine_decay);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

double chamfer_gradient(const Points& moving, const Points& target, const KdTree3& target_tree,
                        Points& gradient) {
  const auto na = static_cast<double>(moving.rows());
  const auto nb = static_cast<double>(target.rows());
  gradient.setZero(moving.rows(), 3);
  double ab = 0.0;
  for (Eigen::Index i = 0; i < moving.rows(); ++i) {
    const auto hit = target_tree.nearest(moving.row(i));
    ab += hit.squared_distance;
    gradient.row(i) += (2.0 / na) * (moving.row(i) - target.row(hit.index));
  }
  const KdTree3 moving_tree(moving);
  double ba = 0.0;
  for (Eigen::Index j = 0; j < target.rows(); ++j) {
    const auto hit = moving_tree.nearest(target.row(j));
    ba += hit.squared_distance;
    gradient.row(hit.index) += (2.0 / nb) * (moving.row(hit.index) - target.row(j));
  }
  return ab / na + ba / nb;
}

ProjectionResult project(const Generator& gen, const TriMesh& mesh, const ProjectionSchedule& schedule,
                         const LatentVector& z0) {
  schedule.validate();
  mesh.validate();
  if (z0.size() != gen.latent_dim())
    fail(ErrorCode::invalid_input, "project: initial latent dimension does not match generator");

  ProjectionResult result;
  LatentVector z = z0;
  std::size_t global_iter = 0;
  for (std::size_t stage = 0; stage < schedule.sample_counts.size(); ++stage) {
    const PointCloud target =
        sample_surface(mesh, schedule.sample_counts[stage], derive_seed(schedule.seed, stage));
    const KdTree3 tree(target.points);
    Optimizer opt(static_cast<std::size_t>(z.size()), schedule.optimizer);

    LatentVector best = z;
    double best_loss = std::numeric_limits<double>::infinity();
    Points grad;
    for (std::size_t it = 0; it <= schedule.iters_per_stage; ++it, ++global_iter) {
      const PointCloud y = gen.forward(z);
      if (!y.points.allFinite())
        throw TrainingDiverged("project: generator output is non-finite at iteration " + std::to_string(global_iter),
                               global_iter, result.trace);
      const double loss = chamfer_gradient(y.points, target.points, tree, grad);
      if (!std::isfinite(loss))
        throw TrainingDiverged("project: non-finite Chamfer loss at iteration " + std::to_string(global_iter),
                               global_iter, result.trace);
      result.trace.push_back(loss);
      if (loss < best_loss) {
        best_loss = loss;
        best = z;
      }
      if (it == schedule.iters_per_stage) break;  // last pass only scores the final iterate
      const Eigen::VectorXd g =
          gen.vjp(z, Eigen::Map<const Eigen::VectorXd>(grad.data(), grad.size()));
      const double scale = schedule.cosine_decay ? cosine_schedule(it, schedule.iters_per_stage) : 1.0;
      opt.step({z.data(), static_cast<std::size_t>(z.size())}, {g.data(), static_cast<std::size_t>(g.size())},
               scale);
    }
    z = best;
    result.stage_losses.push_back(best_loss);
    result.loss = best_loss;
  }
  result.latent = z;
  return result;
}

}  // namespace msub
