#include "msub/smallnet.hpp"

#include <cmath>
#include <numbers>

#include "msub/error.hpp"
#include "msub/random.hpp"

namespace msub {

Eigen::VectorXd Encoding::encode(const Vec2& x) const {
  Eigen::VectorXd out(output_dim(2));
  encode(x, out);
  return out;
}

void Encoding::encode(const Vec2& x, Eigen::Ref<Eigen::VectorXd> out) const {
  Eigen::Index k = 0;
  if (include_input) {
    out[k++] = x.x();
    out[k++] = x.y();
  }
  for (int c = 0; c < 2; ++c) {
    double freq = std::numbers::pi;
    for (int f = 0; f <= max_frequency; ++f) {
      out[k++] = std::sin(freq * x[c]);
      out[k++] = std::cos(freq * x[c]);
      freq *= 2.0;
    }
  }
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  fail(ErrorCode::invalid_input, "unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "relu";
}

// ---------------------------------------------------------------------------

Mlp::Mlp(std::vector<int> sizes, Activation activation)
    : sizes_(std::move(sizes)), activation_(activation) {
  if (sizes_.size() < 2) fail(ErrorCode::invalid_input, "mlp needs at least input and output sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] < 1 || sizes_[l + 1] < 1) fail(ErrorCode::invalid_input, "mlp layer sizes must be positive");
    offsets_.push_back(total);
    total += static_cast<std::size_t>(sizes_[l] * sizes_[l + 1] + sizes_[l + 1]);
  }
  offsets_.push_back(total);
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
}

Mlp Mlp::he_uniform(std::vector<int> sizes, Activation activation, std::uint64_t seed) {
  Mlp net(std::move(sizes), activation);
  Rng rng(seed);
  for (int l = 0; l < net.layer_count(); ++l) {
    const double bound = std::sqrt(6.0 / net.sizes_[l]);
    auto W = net.weight(l);
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = rng.uniform(-bound, bound);
  }
  return net;
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(int l) {
  return {params_.data() + offset(l), sizes_[l + 1], sizes_[l]};
}
Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int l) const {
  return {params_.data() + offset(l), sizes_[l + 1], sizes_[l]};
}
Eigen::Map<Eigen::VectorXd> Mlp::bias(int l) {
  return {params_.data() + offset(l) + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
}
Eigen::Map<const Eigen::VectorXd> Mlp::bias(int l) const {
  return {params_.data() + offset(l) + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
}

namespace {
void activate(Activation a, Eigen::MatrixXd& m) {
  switch (a) {
    case Activation::relu: m = m.cwiseMax(0.0); break;
    case Activation::tanh: m = m.array().tanh().matrix(); break;
    case Activation::identity: break;
  }
}

// derivative evaluated from the pre-activation
void scale_by_derivative(Activation a, const Eigen::MatrixXd& pre, Eigen::MatrixXd& grad) {
  switch (a) {
    case Activation::relu: grad = (pre.array() > 0.0).select(grad, 0.0); break;
    case Activation::tanh: grad.array() *= 1.0 - pre.array().tanh().square(); break;
    case Activation::identity: break;
  }
}
}  // namespace

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& features) const {
  Eigen::MatrixXd X = features;
  return forward(X, nullptr).col(0);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& features, Cache* cache) const {
  if (features.rows() != input_dim())
    fail(ErrorCode::invalid_input, "mlp: feature dimension " + std::to_string(features.rows()) +
                                       " != " + std::to_string(input_dim()));
  if (cache) {
    cache->inputs.assign(static_cast<std::size_t>(layer_count()), {});
    cache->pre.assign(static_cast<std::size_t>(layer_count()), {});
  }
  Eigen::MatrixXd a = features;
  for (int l = 0; l < layer_count(); ++l) {
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    if (cache) cache->inputs[l] = std::move(a);
    if (l + 1 < layer_count()) {
      if (cache) cache->pre[l] = z;
      activate(activation_, z);
    }
    a = std::move(z);
  }
  return a;
}

Mlp::Gradients Mlp::backward(const Cache& cache, const Eigen::MatrixXd& dY) const {
  if (cache.inputs.size() != static_cast<std::size_t>(layer_count()))
    fail(ErrorCode::invalid_input, "mlp backward: cache does not match network");
  if (dY.rows() != output_dim() || dY.cols() != cache.inputs.back().cols())
    fail(ErrorCode::invalid_input, "mlp backward: cotangent shape mismatch");
  Gradients g;
  g.params = Eigen::VectorXd::Zero(params_.size());
  Eigen::MatrixXd delta = dY;
  for (int l = layer_count() - 1; l >= 0; --l) {
    if (l + 1 < layer_count()) scale_by_derivative(activation_, cache.pre[l], delta);
    Eigen::Map<Eigen::MatrixXd> dW(g.params.data() + offset(l), sizes_[l + 1], sizes_[l]);
    Eigen::Map<Eigen::VectorXd> db(g.params.data() + offset(l) + sizes_[l] * sizes_[l + 1], sizes_[l + 1]);
    dW.noalias() = delta * cache.inputs[l].transpose();
    db = delta.rowwise().sum();
    delta = weight(l).transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

nlohmann::json Mlp::shape_manifest() const {
  nlohmann::json layers = nlohmann::json::array();
  for (int l = 0; l < layer_count(); ++l) layers.push_back({sizes_[l + 1], sizes_[l]});
  return {{"sizes", sizes_}, {"activation", to_string(activation_)}, {"layers", layers},
          {"layout", "per layer: weight column-major (out x in), then bias"},
          {"parameter_count", params_.size()}};
}

std::vector<float> Mlp::to_f32() const {
  std::vector<float> out(static_cast<std::size_t>(params_.size()));
  for (Eigen::Index i = 0; i < params_.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(params_[i]);
  return out;
}

Mlp Mlp::from_f32(const nlohmann::json& manifest, std::span<const float> values) {
  Mlp net(manifest.at("sizes").get<std::vector<int>>(),
          activation_from_string(manifest.at("activation").get<std::string>()));
  if (values.size() != static_cast<std::size_t>(net.params_.size()))
    fail(ErrorCode::invalid_input, "mlp weights: expected " + std::to_string(net.params_.size()) +
                                       " values, got " + std::to_string(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) net.params_[static_cast<Eigen::Index>(i)] = values[i];
  return net;
}

void Mlp::round_to_f32() {
  for (Eigen::Index i = 0; i < params_.size(); ++i) params_[i] = static_cast<float>(params_[i]);
}

// ---------------------------------------------------------------------------

nlohmann::json OptimizerConfig::to_json() const {
  return {{"kind", kind == Kind::adam ? "adam" : "sgd"}, {"lr", lr}, {"beta1", beta1},
          {"beta2", beta2}, {"eps", eps}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j, OptimizerConfig d) {
  if (!j.is_object()) return d;
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    if (k == "adam") d.kind = Kind::adam;
    else if (k == "sgd") d.kind = Kind::sgd;
    else fail(ErrorCode::invalid_input, "unknown optimizer '" + k + "'");
  }
  d.lr = j.value("lr", d.lr);
  d.beta1 = j.value("beta1", d.beta1);
  d.beta2 = j.value("beta2", d.beta2);
  d.eps = j.value("eps", d.eps);
  return d;
}

Optimizer::Optimizer(std::size_t size, OptimizerConfig config) : config_(config) {
  if (config_.kind == OptimizerConfig::Kind::adam) {
    m_.assign(size, 0.0);
    v_.assign(size, 0.0);
  }
}

void Optimizer::step(std::span<double> params, std::span<const double> grads, double lr_scale) {
  if (params.size() != grads.size()) fail(ErrorCode::invalid_input, "optimizer: parameter/gradient size mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) throw TrainingDiverged("optimizer: non-finite gradient", t_);
  ++t_;
  const double lr = config_.lr * lr_scale;
  if (config_.kind == OptimizerConfig::Kind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
    return;
  }
  if (m_.size() != params.size()) fail(ErrorCode::invalid_input, "optimizer: state size mismatch");
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
  }
}

double cosine_schedule(std::size_t step, std::size_t total, double floor) {
  if (total <= 1) return 1.0;
  const double s = static_cast<double>(std::min(step, total - 1)) / static_cast<double>(total - 1);
  return floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * s));
}

}  // namespace msub
