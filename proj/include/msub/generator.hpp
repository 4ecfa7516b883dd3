#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "msub/geomcore.hpp"

namespace msub {

using LatentVector = Eigen::VectorXd;

struct GeneratorSpec {
  std::string family;
  int latent_dim = 8;
  int point_count = 512;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();

  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
};

/// Shape generator: latent vectors to fixed-size, index-corresponded clouds.
/// Implementations are immutable and safe to call concurrently.
class Generator {
 public:
  explicit Generator(GeneratorSpec spec);
  virtual ~Generator() = default;

  const GeneratorSpec& spec() const { return spec_; }
  int latent_dim() const { return spec_.latent_dim; }
  int point_count() const { return spec_.point_count; }
  Eigen::Index flat_size() const { return 3 * static_cast<Eigen::Index>(spec_.point_count); }

  PointCloud forward(const LatentVector& z) const;
  // Flattened (x0, y0, z0, x1, ...) output.
  Eigen::VectorXd forward_flat(const LatentVector& z) const;
  /// (dG/dz)^T * cotangent, with cotangent in the flattened layout.
  Eigen::VectorXd vjp(const LatentVector& z, const Eigen::VectorXd& cotangent) const;

  // Directional families can be evaluated on arbitrary unit directions, which
  // is how synthetic landmark meshes are built on the generator's own surface.
  virtual bool has_surface() const { return false; }
  virtual Points surface(const Points& directions, const LatentVector& z) const;

  // Frozen weights (empty for closed-form families).
  virtual std::vector<float> weights() const { return {}; }

 protected:
  virtual void forward_impl(const LatentVector& z, Eigen::VectorXd& out) const = 0;
  virtual void vjp_impl(const LatentVector& z, const Eigen::VectorXd& cot,
                        Eigen::VectorXd& out) const = 0;

  void check_latent(const LatentVector& z) const;

 private:
  GeneratorSpec spec_;
};

using GeneratorPtr = std::shared_ptr<const Generator>;

/// G(z) = A z + b.
class LinearGenerator final : public Generator {
 public:
  LinearGenerator(Eigen::MatrixXd A, Eigen::VectorXd b, GeneratorSpec spec = {});
  // Smooth random columns over the template sphere; built from spec.seed.
  static std::shared_ptr<LinearGenerator> smooth(const GeneratorSpec& spec);

  const Eigen::MatrixXd& matrix() const { return A_; }
  const Eigen::VectorXd& offset() const { return b_; }

  bool has_surface() const override { return static_cast<bool>(field_); }
  Points surface(const Points& directions, const LatentVector& z) const override;

 protected:
  void forward_impl(const LatentVector& z, Eigen::VectorXd& out) const override;
  void vjp_impl(const LatentVector& z, const Eigen::VectorXd& cot, Eigen::VectorXd& out) const override;

 private:
  struct Field;
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_;
  std::shared_ptr<const Field> field_;
};

std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec,
                                          std::span<const float> weights = {});
std::unique_ptr<Generator> make_generator(const nlohmann::json& spec,
                                          std::span<const float> weights = {});

/// Fibonacci-sphere unit directions shared by all directional families.
Points template_directions(int count);

double correspondence_distance(const Generator& gen, const LatentVector& z1, const LatentVector& z2);
double correspondence_distance(const PointCloud& a, const PointCloud& b);

}  // namespace msub
