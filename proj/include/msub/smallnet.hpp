#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "msub/geomcore.hpp"

namespace msub {

/// Sinusoidal positional encoding: optional raw input, then
/// sin(2^k pi x_c), cos(2^k pi x_c) for k = 0..max_frequency, per coordinate.
struct Encoding {
  int max_frequency = 5;
  bool include_input = true;

  int output_dim(int input_dim) const {
    return input_dim * 2 * (max_frequency + 1) + (include_input ? input_dim : 0);
  }
  Eigen::VectorXd encode(const Vec2& x) const;
  void encode(const Vec2& x, Eigen::Ref<Eigen::VectorXd> out) const;
};

enum class Activation { relu, tanh, identity };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

/// Fully connected network, hidden layers share one activation, last layer is
/// affine. Parameters live in one contiguous vector: per layer W (col-major)
/// followed by b.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation activation);

  static Mlp he_uniform(std::vector<int> sizes, Activation activation, std::uint64_t seed);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int layer_count() const { return static_cast<int>(sizes_.size()) - 1; }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return activation_; }

  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }

  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each hidden layer
  };
  struct Gradients {
    Eigen::VectorXd params;
    Eigen::MatrixXd input;  // input_dim x batch
  };

  Eigen::VectorXd forward(const Eigen::VectorXd& features) const;
  // Columns are samples.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& features, Cache* cache) const;
  Gradients backward(const Cache& cache, const Eigen::MatrixXd& output_cotangent) const;

  nlohmann::json shape_manifest() const;
  std::vector<float> to_f32() const;
  static Mlp from_f32(const nlohmann::json& manifest, std::span<const float> values);
  // Round every parameter through f32 so an in-memory model equals its
  // persisted form.
  void round_to_f32();

 private:
  std::size_t offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }

  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  Activation activation_ = Activation::relu;
  Eigen::VectorXd params_;
};

struct OptimizerConfig {
  enum class Kind { sgd, adam } kind = Kind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j, OptimizerConfig defaults);
};

/// SGD / bias-corrected Adam over a flat parameter span.
class Optimizer {
 public:
  Optimizer(std::size_t size, OptimizerConfig config);

  // lr_scale multiplies config.lr for this step (schedules).
  void step(std::span<double> params, std::span<const double> grads, double lr_scale = 1.0);
  std::size_t steps() const { return t_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

double cosine_schedule(std::size_t step, std::size_t total, double floor = 0.0);

}  // namespace msub
