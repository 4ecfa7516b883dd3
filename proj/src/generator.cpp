#include "msub/generator.hpp"

#include <cmath>
#include <numbers>

#include "msub/error.hpp"
#include "msub/random.hpp"

namespace msub {

namespace {

double as_float(double x) { return static_cast<double>(static_cast<float>(x)); }

template <typename T>
T param_or(const nlohmann::json& params, const char* key, T fallback) {
  if (params.is_object() && params.contains(key)) return params.at(key).get<T>();
  return fallback;
}

// Smooth scalar fields on the sphere: f_m(u) = cos(omega_m . u + phase_m).
struct SphereFeatures {
  Eigen::MatrixXd omega;  // M x 3
  Eigen::VectorXd phase;  // M

  static SphereFeatures random(int count, double frequency, Rng& rng) {
    SphereFeatures f;
    f.omega.resize(count, 3);
    f.phase.resize(count);
    for (int m = 0; m < count; ++m) {
      for (int k = 0; k < 3; ++k) f.omega(m, k) = as_float(frequency * rng.normal());
      f.phase(m) = as_float(rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
    return f;
  }

  // rows: directions, cols: features
  Eigen::MatrixXd eval(const Points& dirs) const {
    Eigen::MatrixXd arg = dirs * omega.transpose();
    arg.rowwise() += phase.transpose();
    return arg.array().cos().matrix();
  }
};

void push_matrix(std::vector<float>& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(static_cast<float>(m(r, c)));
}

void pull_matrix(std::span<const float> in, std::size_t& pos, Eigen::MatrixXd& m) {
  if (pos + static_cast<std::size_t>(m.size()) > in.size())
    fail(ErrorCode::invalid_input, "generator weights too short");
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in[pos++];
}

// ---------------------------------------------------------------------------
// Bump ellipsoid: p_i = diag(z0, z1, z2) u_i * r_i(z) with
// r_i = 1 + sum_k [a g_k(u_i) sin(w z_k) + b h_k(u_i) (1 - cos(w z_k))], k >= 3.

class BumpEllipsoid final : public Generator {
 public:
  explicit BumpEllipsoid(const GeneratorSpec& spec) : Generator(spec) {
    if (spec.latent_dim < 3) fail(ErrorCode::invalid_input, "bump_ellipsoid needs latent_dim >= 3");
    odd_ = param_or(spec.params, "odd_amplitude", 0.2);
    even_ = param_or(spec.params, "even_amplitude", 0.2);
    omega_ = param_or(spec.params, "omega", 2.0);
    const double freq = param_or(spec.params, "frequency", 2.0);
    Rng rng(derive_seed(spec.seed, 11));
    const int bumps = spec.latent_dim - 3;
    odd_features_ = SphereFeatures::random(bumps, freq, rng);
    even_features_ = SphereFeatures::random(bumps, freq, rng);
    dirs_ = template_directions(spec.point_count);
    g_ = odd_features_.eval(dirs_);
    h_ = even_features_.eval(dirs_);
  }

  bool has_surface() const override { return true; }

  Points surface(const Points& directions, const LatentVector& z) const override {
    check_latent(z);
    return evaluate(directions, odd_features_.eval(directions), even_features_.eval(directions), z);
  }

 protected:
  void forward_impl(const LatentVector& z, Eigen::VectorXd& out) const override {
    Points p = evaluate(dirs_, g_, h_, z);
    out = Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
  }

  void vjp_impl(const LatentVector& z, const Eigen::VectorXd& cot, Eigen::VectorXd& out) const override {
    const int n = point_count();
    const int bumps = latent_dim() - 3;
    const Eigen::VectorXd r = radii(g_, h_, z);
    out.setZero(latent_dim());
    // c_i . s_i with s_i = diag(z0, z1, z2) u_i
    Eigen::VectorXd cs(n);
    for (int i = 0; i < n; ++i) {
      const double cx = cot[3 * i], cy = cot[3 * i + 1], cz = cot[3 * i + 2];
      out[0] += cx * dirs_(i, 0) * r[i];
      out[1] += cy * dirs_(i, 1) * r[i];
      out[2] += cz * dirs_(i, 2) * r[i];
      cs[i] = cx * z[0] * dirs_(i, 0) + cy * z[1] * dirs_(i, 1) + cz * z[2] * dirs_(i, 2);
    }
    for (int k = 0; k < bumps; ++k) {
      const double zk = z[3 + k];
      const double dodd = odd_ * omega_ * std::cos(omega_ * zk);
      const double deven = even_ * omega_ * std::sin(omega_ * zk);
      out[3 + k] = cs.dot(dodd * g_.col(k) + deven * h_.col(k));
    }
  }

 private:
  Eigen::VectorXd radii(const Eigen::MatrixXd& g, const Eigen::MatrixXd& h, const LatentVector& z) const {
    Eigen::VectorXd r = Eigen::VectorXd::Ones(g.rows());
    for (int k = 0; k < latent_dim() - 3; ++k) {
      const double zk = z[3 + k];
      r += odd_ * std::sin(omega_ * zk) * g.col(k) + even_ * (1.0 - std::cos(omega_ * zk)) * h.col(k);
    }
    return r;
  }

  Points evaluate(const Points& dirs, const Eigen::MatrixXd& g, const Eigen::MatrixXd& h,
                  const LatentVector& z) const {
    const Eigen::VectorXd r = radii(g, h, z);
    Points p(dirs.rows(), 3);
    for (Eigen::Index i = 0; i < dirs.rows(); ++i) {
      p(i, 0) = z[0] * dirs(i, 0) * r[i];
      p(i, 1) = z[1] * dirs(i, 1) * r[i];
      p(i, 2) = z[2] * dirs(i, 2) * r[i];
    }
    return p;
  }

  double odd_, even_, omega_;
  SphereFeatures odd_features_, even_features_;
  Points dirs_;
  Eigen::MatrixXd g_, h_;
};

// ---------------------------------------------------------------------------
// Frozen two-layer tanh network: p_i = u_i + B(u_i) tanh(W z + c), with the
// output layer B(u) = scale * sum_m f_m(u) C_m smooth over the sphere.

class TanhNetwork final : public Generator {
 public:
  TanhNetwork(const GeneratorSpec& spec, std::span<const float> weights) : Generator(spec) {
    hidden_ = param_or(spec.params, "hidden", 16);
    const int features = param_or(spec.params, "features", 12);
    scale_ = param_or(spec.params, "scale", 0.3);
    const double freq = param_or(spec.params, "frequency", 2.0);
    const double gain = param_or(spec.params, "input_gain", 1.5);
    const int d = spec.latent_dim;

    W_.resize(hidden_, d);
    c_.resize(hidden_);
    C_.resize(features, 3 * hidden_);
    if (weights.empty()) {
      Rng rng(derive_seed(spec.seed, 23));
      for (Eigen::Index i = 0; i < W_.size(); ++i) W_.data()[i] = as_float(gain * rng.normal() / std::sqrt(d));
      for (Eigen::Index i = 0; i < c_.size(); ++i) c_[i] = as_float(0.5 * rng.normal());
      features_ = SphereFeatures::random(features, freq, rng);
      for (Eigen::Index i = 0; i < C_.size(); ++i) C_.data()[i] = as_float(rng.normal() / std::sqrt(features));
    } else {
      features_.omega.resize(features, 3);
      features_.phase.resize(features);
      std::size_t pos = 0;
      pull_matrix(weights, pos, W_);
      Eigen::MatrixXd tmp(hidden_, 1);
      pull_matrix(weights, pos, tmp);
      c_ = tmp.col(0);
      pull_matrix(weights, pos, features_.omega);
      Eigen::MatrixXd ph(features, 1);
      pull_matrix(weights, pos, ph);
      features_.phase = ph.col(0);
      pull_matrix(weights, pos, C_);
      if (pos != weights.size()) fail(ErrorCode::invalid_input, "generator weights too long");
    }
    dirs_ = template_directions(spec.point_count);
    B_ = output_layer(dirs_);
  }

  bool has_surface() const override { return true; }

  Points surface(const Points& directions, const LatentVector& z) const override {
    check_latent(z);
    const Eigen::MatrixXd B = output_layer(directions);
    const Eigen::VectorXd y = B * hidden(z);
    Points p = directions;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (int k = 0; k < 3; ++k) p(i, k) += y[3 * i + k];
    return p;
  }

  std::vector<float> weights() const override {
    std::vector<float> out;
    push_matrix(out, W_);
    push_matrix(out, c_);
    push_matrix(out, features_.omega);
    push_matrix(out, features_.phase);
    push_matrix(out, C_);
    return out;
  }

 protected:
  void forward_impl(const LatentVector& z, Eigen::VectorXd& out) const override {
    out = B_ * hidden(z);
    out += Eigen::Map<const Eigen::VectorXd>(dirs_.data(), dirs_.size());
  }

  void vjp_impl(const LatentVector& z, const Eigen::VectorXd& cot, Eigen::VectorXd& out) const override {
    const Eigen::VectorXd h = hidden(z);
    const Eigen::VectorXd dh = (B_.transpose() * cot).array() * (1.0 - h.array().square());
    out = W_.transpose() * dh;
  }

 private:
  Eigen::VectorXd hidden(const LatentVector& z) const { return (W_ * z + c_).array().tanh().matrix(); }

  // (3n x hidden), row 3i+a
  Eigen::MatrixXd output_layer(const Points& dirs) const {
    const Eigen::MatrixXd F = features_.eval(dirs);  // n x M
    const Eigen::MatrixXd FC = F * C_;              // n x (3 hidden)
    Eigen::MatrixXd B(3 * dirs.rows(), hidden_);
    for (Eigen::Index i = 0; i < dirs.rows(); ++i)
      for (int a = 0; a < 3; ++a)
        B.row(3 * i + a) = scale_ * FC.row(i).segment(a * hidden_, hidden_);
    return B;
  }

  int hidden_;
  double scale_;
  Eigen::MatrixXd W_;
  Eigen::VectorXd c_;
  SphereFeatures features_;
  Eigen::MatrixXd C_;  // features x (3 * hidden)
  Points dirs_;
  Eigen::MatrixXd B_;
};

}  // namespace

// ---------------------------------------------------------------------------

nlohmann::json GeneratorSpec::to_json() const {
  return {{"family", family},
          {"latent_dim", latent_dim},
          {"point_count", point_count},
          {"seed", seed},
          {"params", params}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  try {
    s.family = j.at("family").get<std::string>();
    s.latent_dim = j.value("latent_dim", 8);
    s.point_count = j.value("point_count", 512);
    s.seed = j.value("seed", std::uint64_t{0});
    s.params = j.value("params", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_input, std::string("generator spec: ") + e.what());
  }
  if (s.latent_dim < 1 || s.point_count < 1)
    fail(ErrorCode::invalid_input, "generator spec: latent_dim and point_count must be >= 1");
  return s;
}

Generator::Generator(GeneratorSpec spec) : spec_(std::move(spec)) {
  if (spec_.latent_dim < 1 || spec_.point_count < 1)
    fail(ErrorCode::invalid_input, "generator: latent_dim and point_count must be >= 1");
}

void Generator::check_latent(const LatentVector& z) const {
  if (z.size() != latent_dim())
    fail(ErrorCode::invalid_input, "latent dimension " + std::to_string(z.size()) + " != generator dimension " +
                                       std::to_string(latent_dim()));
  if (!z.allFinite()) fail(ErrorCode::invalid_input, "latent has non-finite entries");
}

Eigen::VectorXd Generator::forward_flat(const LatentVector& z) const {
  check_latent(z);
  Eigen::VectorXd out;
  forward_impl(z, out);
  return out;
}

PointCloud Generator::forward(const LatentVector& z) const { return PointCloud::from_flat(forward_flat(z)); }

Eigen::VectorXd Generator::vjp(const LatentVector& z, const Eigen::VectorXd& cotangent) const {
  check_latent(z);
  if (cotangent.size() != flat_size())
    fail(ErrorCode::invalid_input, "vjp: cotangent has " + std::to_string(cotangent.size()) +
                                       " entries, expected " + std::to_string(flat_size()));
  Eigen::VectorXd out;
  vjp_impl(z, cotangent, out);
  return out;
}

Points Generator::surface(const Points&, const LatentVector&) const {
  fail(ErrorCode::invalid_input, "generator family '" + spec_.family + "' has no surface evaluation");
}

// ---------------------------------------------------------------------------

struct LinearGenerator::Field {
  SphereFeatures features;
  Eigen::MatrixXd coeff;  // (3 d) x M, row a*d + k
  double amplitude;
};

LinearGenerator::LinearGenerator(Eigen::MatrixXd A, Eigen::VectorXd b, GeneratorSpec spec)
    : Generator([&] {
        if (spec.family.empty()) spec.family = "linear";
        spec.latent_dim = static_cast<int>(A.cols());
        spec.point_count = static_cast<int>(A.rows() / 3);
        return spec;
      }()),
      A_(std::move(A)),
      b_(std::move(b)) {
  if (A_.rows() % 3 != 0 || A_.rows() == 0)
    fail(ErrorCode::invalid_input, "linear generator: rows must be a positive multiple of 3");
  if (b_.size() != A_.rows()) fail(ErrorCode::invalid_input, "linear generator: offset size mismatch");
}

std::shared_ptr<LinearGenerator> LinearGenerator::smooth(const GeneratorSpec& spec) {
  const int d = spec.latent_dim;
  const int n = spec.point_count;
  const int features = param_or(spec.params, "features", 12);
  const double freq = param_or(spec.params, "frequency", 2.0);
  auto field = std::make_shared<Field>();
  field->amplitude = param_or(spec.params, "amplitude", 0.3);
  Rng rng(derive_seed(spec.seed, 5));
  field->features = SphereFeatures::random(features, freq, rng);
  field->coeff.resize(3 * d, features);
  for (Eigen::Index i = 0; i < field->coeff.size(); ++i) field->coeff.data()[i] = as_float(rng.normal());

  const Points dirs = template_directions(n);
  const Eigen::MatrixXd F = field->features.eval(dirs);
  const double norm = field->amplitude / std::sqrt(static_cast<double>(features));
  Eigen::MatrixXd A(3 * n, d);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a)
      for (int k = 0; k < d; ++k) A(3 * i + a, k) = norm * field->coeff.row(a * d + k).dot(F.row(i));
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(dirs.data(), dirs.size());
  auto gen = std::make_shared<LinearGenerator>(std::move(A), std::move(b), spec);
  gen->field_ = field;
  return gen;
}

Points LinearGenerator::surface(const Points& directions, const LatentVector& z) const {
  if (!field_) return Generator::surface(directions, z);
  check_latent(z);
  const int d = latent_dim();
  const Eigen::MatrixXd F = field_->features.eval(directions);
  const double norm = field_->amplitude / std::sqrt(static_cast<double>(F.cols()));
  Points p = directions;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (int a = 0; a < 3; ++a)
      for (int k = 0; k < d; ++k) p(i, a) += norm * field_->coeff.row(a * d + k).dot(F.row(i)) * z[k];
  return p;
}

void LinearGenerator::forward_impl(const LatentVector& z, Eigen::VectorXd& out) const { out = A_ * z + b_; }

void LinearGenerator::vjp_impl(const LatentVector&, const Eigen::VectorXd& cot, Eigen::VectorXd& out) const {
  out = A_.transpose() * cot;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec, std::span<const float> weights) {
  if (spec.family == "linear") {
    auto smooth = LinearGenerator::smooth(spec);
    return std::make_unique<LinearGenerator>(*smooth);
  }
  if (spec.family == "bump_ellipsoid") return std::make_unique<BumpEllipsoid>(spec);
  if (spec.family == "tanh_network") return std::make_unique<TanhNetwork>(spec, weights);
  fail(ErrorCode::invalid_input, "unknown generator family '" + spec.family + "'");
}

std::unique_ptr<Generator> make_generator(const nlohmann::json& spec, std::span<const float> weights) {
  return make_generator(GeneratorSpec::from_json(spec), weights);
}

Points template_directions(int count) {
  Points dirs(count, 3);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double theta = golden * i;
    dirs(i, 0) = r * std::cos(theta);
    dirs(i, 1) = y;
    dirs(i, 2) = r * std::sin(theta);
  }
  return dirs;
}

double correspondence_distance(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) fail(ErrorCode::invalid_input, "correspondence_distance: size mismatch");
  return (a.points - b.points).rowwise().norm().sum();
}

double correspondence_distance(const Generator& gen, const LatentVector& z1, const LatentVector& z2) {
  return correspondence_distance(gen.forward(z1), gen.forward(z2));
}

}  // namespace msub
