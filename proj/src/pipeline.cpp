#include "msub/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <Eigen/QR>
#include <tomlplusplus/toml.hpp>

#include "msub/binary_io.hpp"
#include "msub/error.hpp"
#include "msub/random.hpp"

namespace msub {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config documents

namespace {

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (const auto& [key, value] : *t) out[std::string(key.str())] = toml_to_json(value);
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& value : *a) out.push_back(toml_to_json(value));
    return out;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  fail(ErrorCode::invalid_input, "config: date/time values are not supported");
}

json section(const json& doc, const std::string& key) {
  if (!doc.contains(key)) return json::object();
  const auto& v = doc.at(key);
  if (!v.is_object()) fail(ErrorCode::invalid_input, "config: '" + key + "' must be a table/object");
  return v;
}

template <typename T>
T with_seed(T cfg, const json& sec, std::uint64_t derived) {
  if (!sec.contains("seed")) cfg.seed = derived;
  return cfg;
}

}  // namespace

json read_config_document(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::invalid_input, "config file not found: '" + path.string() + "'");
  const auto bytes = binio::read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  const bool as_json = path.extension() == ".json" ||
                       (path.extension() != ".toml" && text.find_first_not_of(" \t\r\n") != std::string::npos &&
                        text[text.find_first_not_of(" \t\r\n")] == '{');
  if (as_json) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      fail(ErrorCode::invalid_input, "config '" + path.string() + "': " + e.what());
    }
  }
  try {
    return toml_to_json(toml::parse(text, path.string()));
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config '" << path.string() << "': " << e.description() << " at line " << e.source().begin.line;
    fail(ErrorCode::invalid_input, msg.str());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorCode::invalid_input, "override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) fail(ErrorCode::invalid_input, "override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) fail(ErrorCode::invalid_input, "override '" + assignment + "' descends into a non-table");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

PipelineConfig parse_config(const json& doc, const fs::path& base_dir, bool require_meshes) {
  if (!doc.is_object()) fail(ErrorCode::invalid_input, "config: top level must be a table/object");
  PipelineConfig c;
  c.echo = doc;
  try {
    c.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("out")) c.out = doc.at("out").get<std::string>();

    if (!doc.contains("generator")) fail(ErrorCode::invalid_input, "config: missing [generator] section");
    c.generator = GeneratorSpec::from_json(doc.at("generator"));
    if (!doc.at("generator").contains("seed")) c.generator.seed = derive_seed(c.seed, 1);

    if (!doc.contains("landmarks") || !doc.at("landmarks").is_array())
      fail(ErrorCode::invalid_input, "config: 'landmarks' must be a list");
    std::set<std::string> ids;
    for (const auto& rec : doc.at("landmarks")) {
      LandmarkInput l;
      if (rec.is_string()) {
        l.mesh = rec.get<std::string>();
      } else {
        l.mesh = rec.at("mesh").get<std::string>();
        if (rec.contains("id")) l.id = rec.at("id").get<std::string>();
        if (rec.contains("init")) {
          const auto v = rec.at("init").get<std::vector<double>>();
          l.warm_start = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
          if (l.warm_start->size() != c.generator.latent_dim)
            fail(ErrorCode::invalid_input, "config: landmark init has dimension " + std::to_string(v.size()) +
                                               ", generator expects " + std::to_string(c.generator.latent_dim));
        }
      }
      if (l.mesh.is_relative()) l.mesh = base_dir / l.mesh;
      if (l.id.empty()) l.id = l.mesh.stem().string();
      if (require_meshes && !fs::exists(l.mesh))
        fail(ErrorCode::invalid_input, "config: landmark mesh not found: '" + l.mesh.string() + "'");
      if (!ids.insert(l.id).second) fail(ErrorCode::invalid_input, "config: duplicate landmark id '" + l.id + "'");
      c.landmarks.push_back(std::move(l));
    }
    if (c.landmarks.size() < 3) fail(ErrorCode::invalid_input, "config: at least 3 landmarks are required");

    const auto proj = section(doc, "projection");
    json sched = proj;
    sched.erase("init");
    c.projection = with_seed(ProjectionSchedule::from_json(sched), proj, derive_seed(c.seed, 10));
    if (proj.contains("init")) {
      const auto v = proj.at("init").get<std::vector<double>>();
      if (static_cast<int>(v.size()) != c.generator.latent_dim)
        fail(ErrorCode::invalid_input, "config: projection.init has dimension " + std::to_string(v.size()) +
                                           ", generator expects " + std::to_string(c.generator.latent_dim));
      c.projection_init = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

    const auto emb = section(doc, "embedding");
    c.knn_k = emb.value("k", 0);
    const auto s1 = emb.value("stage1", json::object());
    c.stage1 = with_seed(Stage1Config::from_json(s1), s1, derive_seed(c.seed, 20));
    c.stage2 = Stage2Config::from_json(emb.value("stage2", json::object()));

    const auto geo = section(doc, "geodesic");
    c.geodesic = with_seed(GeodesicConfig::from_json(geo), geo, derive_seed(c.seed, 30));

    const auto fem = section(doc, "fem");
    c.target_faces = fem.value("target_faces", c.target_faces);
    if (!(c.target_faces >= 1.0)) fail(ErrorCode::invalid_input, "config: fem.target_faces must be >= 1");

    c.switches = SwitchConfig::from_json(section(doc, "switchpoints"));
    c.blend = blend_from_string(section(doc, "inference").value("blend", std::string("primal")));

    const auto train = section(doc, "train");
    c.train = with_seed(TrainConfig::from_json(train), train, derive_seed(c.seed, 40));

    const auto def = section(doc, "deform");
    c.deform.steps = def.value("steps", c.deform.steps);
    c.deform.lambda = def.value("lambda", c.deform.lambda);
    if (c.deform.steps < 1 || c.deform.lambda < 0.0)
      fail(ErrorCode::invalid_input, "config: deform.steps must be >= 1 and deform.lambda >= 0");

    const auto er = section(doc, "energy_report");
    c.energy.paths = er.value("paths", c.energy.paths);
    c.energy.samples = er.value("samples", c.energy.samples);
    c.energy.length_fraction = er.value("length_fraction", c.energy.length_fraction);
    c.energy.per_facet = er.value("per_facet", c.energy.per_facet);
    if (c.energy.paths < 1 || c.energy.samples < 2 || !(c.energy.length_fraction > 0.0))
      fail(ErrorCode::invalid_input, "config: energy_report needs paths >= 1, samples >= 2, length_fraction > 0");

    c.serve_max_step = section(doc, "serve").value("max_step", 0.0);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_input, std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = read_config_document(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc, path.parent_path());
}

// ---------------------------------------------------------------------------
// Stages

const std::vector<std::string>& build_stages() {
  static const std::vector<std::string> s{"project", "embed", "geodesics", "switchpoints", "train-map"};
  return s;
}

const std::vector<std::string>& all_stages() {
  static const std::vector<std::string> s{"project",   "embed",  "geodesics",     "switchpoints",
                                          "train-map", "deform", "energy-report", "serve"};
  return s;
}

namespace {

// Removes `stage` and everything built after it.
void drop_from(Space& s, const std::string& stage) {
  const auto& order = build_stages();
  const auto pos = std::find(order.begin(), order.end(), stage) - order.begin();
  for (auto i = static_cast<std::size_t>(pos); i < order.size(); ++i) {
    const auto& name = order[i];
    s.stages.erase(std::remove(s.stages.begin(), s.stages.end(), name), s.stages.end());
    s.reports.erase(name);
    if (name == "embed") {
      for (auto& l : s.landmarks) l.position.reset();
      s.tri.reset();
      s.fem.reset();
    } else if (name == "geodesics") {
      s.polylines.clear();
    } else if (name == "switchpoints") {
      s.plan.reset();
      for (auto& p : s.polylines) p.warp = Warp();
    } else if (name == "train-map") {
      s.model.reset();
    }
  }
}

void refresh_echo(Space& s, const PipelineConfig& c) { s.config = c.echo; }

}  // namespace

Space init_space(const PipelineConfig& config) {
  Space s;
  s.config = config.echo;
  s.generator_spec = config.generator;
  auto gen = make_generator(config.generator);
  s.generator_weights = gen->weights();
  s.generator = std::move(gen);
  for (const auto& in : config.landmarks) {
    Landmark l;
    l.id = in.id;
    l.mesh = read_obj(in.mesh);
    if (l.mesh.vertices.rows() == 0 || l.mesh.faces.empty())
      fail(ErrorCode::invalid_input, "landmark mesh '" + in.mesh.string() + "' is empty");
    l.latent = LatentVector::Zero(config.generator.latent_dim);
    s.landmarks.push_back(std::move(l));
  }
  return s;
}

void stage_project(Space& s, const PipelineConfig& c) {
  drop_from(s, "project");
  refresh_echo(s, c);
  const auto& gen = *s.generator;
  json rep = json::array();
  for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
    auto& l = s.landmarks[i];
    ProjectionSchedule sched = c.projection;
    sched.seed = derive_seed(c.projection.seed, i);
    LatentVector z0 = c.projection_init ? *c.projection_init : LatentVector::Zero(gen.latent_dim());
    const int cfg_index = [&] {
      for (std::size_t k = 0; k < c.landmarks.size(); ++k)
        if (c.landmarks[k].id == l.id) return static_cast<int>(k);
      return -1;
    }();
    if (cfg_index >= 0 && c.landmarks[static_cast<std::size_t>(cfg_index)].warm_start)
      z0 = *c.landmarks[static_cast<std::size_t>(cfg_index)].warm_start;
    const auto res = project(gen, l.mesh, sched, z0);
    l.latent = res.latent;
    rep.push_back({{"id", l.id}, {"loss", res.loss}, {"stage_losses", res.stage_losses}, {"seed", sched.seed}});
  }
  s.reports["project"] = {{"landmarks", rep}};
  s.mark_stage("project");
}

void stage_embed(Space& s, const PipelineConfig& c) {
  s.require_stage("project", "embed");
  drop_from(s, "embed");
  refresh_echo(s, c);
  const auto latents = s.latents();
  const int n = static_cast<int>(latents.size());
  const int k = c.knn_k > 0 ? std::min(c.knn_k, n - 1) : std::min(5, n - 1);
  const auto graph = knn_graph(*s.generator, latents, k);
  const auto e1 = embed_stage1(graph, c.stage1);
  Stage2Report r2;
  const auto e2 = embed_stage2(e1, c.stage2, &r2);
  for (int i = 0; i < n; ++i) s.landmarks[static_cast<std::size_t>(i)].position = e2.positions[static_cast<std::size_t>(i)];
  s.tri = delaunay(e2.positions);
  const double hull = polygon_area([&] {
    std::vector<Vec2> h;
    for (int v : s.tri->hull) h.push_back(s.tri->sites[static_cast<std::size_t>(v)]);
    return h;
  }());
  s.fem = discretize(*s.tri, c.target_faces / hull);
  s.reports["embed"] = {{"k", k},
                        {"seed", c.stage1.seed},
                        {"triangles", s.tri->triangles.size()},
                        {"edges", s.tri->edges.size()},
                        {"start_min_angle_deg", r2.start_min_angle * 180.0 / std::numbers::pi},
                        {"min_angle_deg", min_interior_angle(e2.positions, s.tri->triangles) * 180.0 / std::numbers::pi},
                        {"stage2_iters", r2.accepted_iters},
                        {"rolled_back", r2.rolled_back},
                        {"snapped", r2.snapped},
                        {"fem_level", s.fem->level},
                        {"fem_faces", s.fem->faces.size()},
                        {"fem_vertices", s.fem->vertices.size()}};
  s.mark_stage("embed");
}

void stage_geodesics(Space& s, const PipelineConfig& c) {
  s.require_stage("embed", "geodesics");
  drop_from(s, "geodesics");
  refresh_echo(s, c);
  const auto& gen = *s.generator;
  json rep = json::array();
  for (std::size_t e = 0; e < s.tri->edges.size(); ++e) {
    const auto [a, b] = s.tri->edges[e];
    GeodesicConfig cfg = c.geodesic;
    cfg.seed = derive_seed(c.geodesic.seed, e);
    const auto& za = s.landmarks[static_cast<std::size_t>(a)].latent;
    const auto& zb = s.landmarks[static_cast<std::size_t>(b)].latent;
    auto res = optimize_geodesic(gen, za, zb, cfg);
    const double straight = path_energy(gen, straight_polyline(za, zb, res.polyline.nodes.size()));
    rep.push_back({{"edge", e}, {"a", a}, {"b", b}, {"energy", res.energy}, {"straight_energy", straight}});
    s.polylines.push_back(std::move(res.polyline));
  }
  s.reports["geodesics"] = {{"edges", rep}};
  s.mark_stage("geodesics");
}

void stage_switchpoints(Space& s, const PipelineConfig& c) {
  s.require_stage("geodesics", "switchpoints");
  drop_from(s, "switchpoints");
  refresh_echo(s, c);
  const auto& gen = *s.generator;
  SwitchPlan plan;
  json rep = json::array();
  for (std::size_t e = 0; e < s.tri->edges.size(); ++e) {
    const auto [a, b] = s.tri->edges[e];
    const EdgeSampler edge(gen, s.polylines[e], s.fem->level, c.blend);
    const auto res = compute_switch_point(edge, s.landmarks[static_cast<std::size_t>(a)].mesh,
                                          s.landmarks[static_cast<std::size_t>(b)].mesh, c.switches);
    const auto best = std::find(res.grid.begin(), res.grid.end(), res.t_star) - res.grid.begin();
    plan.t_star.push_back(res.t_star);
    rep.push_back({{"edge", e}, {"t_star", res.t_star}, {"chamfer_at_t_star", res.chamfers[static_cast<std::size_t>(best)]},
                   {"grid", res.grid}, {"chamfers", res.chamfers}});
    s.polylines[e] = remap_edge(s.polylines[e], res.t_star);
  }
  s.plan = plan;
  s.reports["switchpoints"] = {{"edges", rep}};
  s.mark_stage("switchpoints");
}

void stage_train_map(Space& s, const PipelineConfig& c) {
  s.require_stage("switchpoints", "train-map");
  drop_from(s, "train-map");
  refresh_echo(s, c);
  const auto& gen = *s.generator;
  const auto latents = s.latents();
  auto res = train_map(gen, *s.fem, s.polylines, latents, c.train);
  const double bary = dirichlet_energy(gen, *s.fem, barycentric_latents(*s.fem, latents));
  const double trained = dirichlet_energy(gen, res.model, *s.fem);
  s.model = std::move(res.model);
  s.reports["train-map"] = {{"seed", c.train.seed},          {"batches", res.batches},
                            {"initial_energy", res.initial_energy}, {"final_energy", trained},
                            {"barycentric_energy", bary},   {"faces", s.fem->faces.size()}};
  s.mark_stage("train-map");
}

void run_build_stage(const std::string& stage, Space& s, const PipelineConfig& c) {
  if (stage == "project") stage_project(s, c);
  else if (stage == "embed") stage_embed(s, c);
  else if (stage == "geodesics") stage_geodesics(s, c);
  else if (stage == "switchpoints") stage_switchpoints(s, c);
  else if (stage == "train-map") stage_train_map(s, c);
  else fail(ErrorCode::invalid_input, "'" + stage + "' is not a build stage");
}

void run_pipeline(Space& s, const PipelineConfig& c) {
  for (const auto& stage : build_stages()) run_build_stage(stage, s, c);
}

InferenceCache space_cache(const Space& s) {
  s.require_stage("train-map", "inference");
  return build_inference_cache(*s.generator, *s.model, *s.fem);
}

// ---------------------------------------------------------------------------
// energy-report

namespace {

std::vector<Vec2> hull_polygon(const Triangulation2D& tri) {
  std::vector<Vec2> h;
  for (int v : tri.hull) h.push_back(tri.sites[static_cast<std::size_t>(v)]);
  return h;
}

// Largest s in [0, len] with p + s d inside the convex counter-clockwise polygon.
double clip_ray(std::span<const Vec2> poly, const Vec2& p, const Vec2& d, double len) {
  double s = len;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    const Vec2 n(-(b - a).y(), (b - a).x());
    const double nd = n.dot(d);
    if (nd < 0.0) s = std::min(s, n.dot(p - a) / -nd);
  }
  return std::max(0.0, s);
}

Eigen::VectorXd flat(const PointCloud& c) { return Eigen::VectorXd(c.flat()); }

}  // namespace

std::vector<std::pair<Vec2, Vec2>> sample_report_paths(const Triangulation2D& tri, const EnergyReportConfig& cfg,
                                                       std::uint64_t seed) {
  const auto hull = hull_polygon(tri);
  Vec2 lo = tri.sites.front(), hi = tri.sites.front();
  for (const auto& p : tri.sites) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double space_len = cfg.length_fraction * (hi - lo).norm();
  std::vector<double> cum;
  double total = 0.0;
  for (std::size_t t = 0; t < tri.triangles.size(); ++t) cum.push_back(total += tri.triangle_area(static_cast<int>(t)));
  Rng rng(seed);
  std::vector<std::pair<Vec2, Vec2>> out;
  while (static_cast<int>(out.size()) < cfg.paths) {
    const double r = rng.uniform() * total;
    const auto t = std::min<std::size_t>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin(), cum.size() - 1);
    const auto& f = tri.triangles[t];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec2& A = tri.sites[static_cast<std::size_t>(f[0])];
    const Vec2& B = tri.sites[static_cast<std::size_t>(f[1])];
    const Vec2& C = tri.sites[static_cast<std::size_t>(f[2])];
    const Vec2 start = A + u * (B - A) + v * (C - A);
    const double len = cfg.per_facet ? cfg.length_fraction * (A.cwiseMax(B).cwiseMax(C) - A.cwiseMin(B).cwiseMin(C)).norm()
                                     : space_len;
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec2 d(std::cos(theta), std::sin(theta));
    const double s = clip_ray(hull, start, d, len) * (1.0 - 1e-9);
    if (s < 1e-6 * len) continue;
    out.emplace_back(start, start + s * d);
  }
  return out;
}

std::vector<EnergyRow> energy_report(const Space& s, const PipelineConfig& c) {
  s.require_stage("train-map", "energy-report");
  if (c.energy.samples != c.geodesic.max_nodes)
    fail(ErrorCode::invalid_input, "energy_report.samples (" + std::to_string(c.energy.samples) +
                                       ") must equal geodesic.max_nodes (" + std::to_string(c.geodesic.max_nodes) +
                                       ") so all three paths share one discretization");
  const auto& gen = *s.generator;
  const auto cache = space_cache(s);
  const auto paths = sample_report_paths(*s.tri, c.energy, derive_seed(c.seed, 50));
  const int n = c.energy.samples;
  const double scale = n - 1;  // discrete sum -> length-independent Dirichlet energy
  std::vector<EnergyRow> rows;
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const auto [a, b] = paths[p];
    EnergyRow row{a, b};
    std::vector<LatentVector> ours;
    std::vector<Eigen::VectorXd> shown;
    for (int k = 0; k < n; ++k) {
      const Vec2 x = a + (static_cast<double>(k) / (n - 1)) * (b - a);
      const auto inf = infer(gen, cache, *s.fem, x, c.blend);
      ours.push_back(inf.latent);
      shown.push_back(flat(inf.cloud));
    }
    row.ours = scale * path_energy(gen, ours);
    row.ours_primal = scale * path_energy(shown);
    row.z_linear = scale * path_energy(gen, straight_polyline(ours.front(), ours.back(), static_cast<std::size_t>(n)));
    GeodesicConfig cfg = c.geodesic;
    cfg.seed = derive_seed(derive_seed(c.seed, 51), p);
    const auto opt = optimize_geodesic(gen, ours.front(), ours.back(), cfg);
    row.z_opt = scale * path_energy(gen, opt.polyline);
    rows.push_back(row);
  }
  return rows;
}

std::string energy_report_csv(const std::vector<EnergyRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "path,x0,y0,x1,y1,ours,z_linear,z_opt,ours_primal\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << i << ',' << r.start.x() << ',' << r.start.y() << ',' << r.end.x() << ',' << r.end.y() << ',' << r.ours
        << ',' << r.z_linear << ',' << r.z_opt << ',' << r.ours_primal << '\n';
  }
  return out.str();
}

json energy_report_summary(const std::vector<EnergyRow>& rows) {
  double o = 0, l = 0, z = 0, p = 0;
  for (const auto& r : rows) {
    o += r.ours;
    l += r.z_linear;
    z += r.z_opt;
    p += r.ours_primal;
  }
  const double n = std::max<std::size_t>(rows.size(), 1);
  return {{"paths", rows.size()},
          {"mean_ours", o / n},
          {"mean_z_linear", l / n},
          {"mean_z_opt", z / n},
          {"mean_ours_primal", p / n}};
}

// ---------------------------------------------------------------------------
// deform

std::vector<Vec2> parse_path(const std::string& text) {
  std::vector<Vec2> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    const auto comma = item.find(',');
    if (comma == std::string::npos) fail(ErrorCode::invalid_input, "path point '" + item + "' must be x,y");
    try {
      std::size_t used = 0;
      const double x = std::stod(item.substr(0, comma), &used);
      const double y = std::stod(item.substr(comma + 1), &used);
      if (!std::isfinite(x) || !std::isfinite(y)) throw std::invalid_argument("non-finite");
      out.emplace_back(x, y);
    } catch (const std::logic_error&) {
      fail(ErrorCode::invalid_input, "path point '" + item + "' is not a pair of numbers");
    }
  }
  return out;
}

std::vector<unsigned char> encode_frame_stream(const std::vector<TriMesh>& frames) {
  binio::Writer w;
  for (char ch : std::string("MSFR")) w.u8(static_cast<std::uint8_t>(ch));
  w.u32(1);
  const auto& first = frames.at(0);
  w.u32(static_cast<std::uint32_t>(first.vertices.rows()));
  w.u32(static_cast<std::uint32_t>(first.faces.size()));
  w.u32(static_cast<std::uint32_t>(frames.size()));
  for (const auto& f : first.faces)
    for (int i : f) w.u32(static_cast<std::uint32_t>(i));
  for (const auto& fr : frames)
    for (Eigen::Index i = 0; i < fr.vertices.rows(); ++i)
      for (int k = 0; k < 3; ++k) w.f32(static_cast<float>(fr.vertices(i, k)));
  return w.take();
}

std::vector<TriMesh> run_deform(const Space& s, const PipelineConfig& c, const DeformRequest& req) {
  s.require_stage("train-map", "deform");
  if (req.path.size() < 2) fail(ErrorCode::invalid_input, "zero-length trajectory: the path needs at least two points");
  const auto positions = s.positions();
  int idx = req.landmark.empty() ? active_mesh(positions, req.path.front()) : s.landmark_index(req.landmark);
  if (idx < 0) fail(ErrorCode::not_found, "unknown landmark '" + req.landmark + "'");
  const auto cache = space_cache(s);
  const auto sampler = space_sampler(*s.generator, cache, *s.fem, c.blend);
  auto frames = deform_along(sampler, s.landmarks[static_cast<std::size_t>(idx)].mesh, req.path, c.deform);
  if (!req.frames_dir.empty()) {
    fs::create_directories(req.frames_dir);
    if (req.format == FrameFormat::obj) {
      for (std::size_t i = 0; i < frames.size(); ++i) {
        std::ostringstream name;
        name << "frame_" << std::setw(4) << std::setfill('0') << i << ".obj";
        write_obj(frames[i], req.frames_dir / name.str());
      }
    } else {
      binio::write_file(req.frames_dir / "frames.bin", encode_frame_stream(frames));
    }
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Synthetic spaces

fs::path write_synthetic_space(const SynthOptions& o, const fs::path& dir) {
  if (o.landmarks < 3) fail(ErrorCode::invalid_input, "synth: at least 3 landmarks are required");
  GeneratorSpec spec;
  spec.family = o.family;
  spec.latent_dim = o.latent_dim;
  spec.point_count = o.point_count;
  spec.seed = derive_seed(o.seed, 1);
  spec.params = o.params;
  const auto gen = make_generator(spec);
  if (!gen->has_surface()) fail(ErrorCode::invalid_input, "synth: family '" + o.family + "' has no surface model");

  fs::create_directories(dir / "meshes");
  Rng rng(derive_seed(o.seed, 2));
  json landmarks = json::array();
  // The bump family's first three coordinates are axis scales around 1.
  const bool scaled = o.family == "bump_ellipsoid";
  LatentVector neutral = LatentVector::Zero(o.latent_dim);
  if (scaled) neutral.head(3).setOnes();
  if (o.layout != "box" && o.layout != "sheet") fail(ErrorCode::invalid_input, "synth: unknown layout '" + o.layout + "'");
  if (o.layout == "sheet" && o.latent_dim < 2) fail(ErrorCode::invalid_input, "synth: sheet layout needs latent_dim >= 2");
  Eigen::MatrixXd frame;
  if (o.layout == "sheet") {
    Eigen::MatrixXd g(o.latent_dim, 2);
    for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = rng.normal();
    frame = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(o.latent_dim, 2);
  }
  for (int i = 0; i < o.landmarks; ++i) {
    LatentVector z = neutral;
    if (o.layout == "sheet") {
      const double r = o.latent_radius * std::sqrt(rng.uniform()), a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      z += frame * Eigen::Vector2d(r * std::cos(a), r * std::sin(a));
    } else {
      for (int k = 0; k < o.latent_dim; ++k)
        z[k] += scaled && k < 3 ? rng.uniform(-0.25, 0.25) : rng.uniform(-o.latent_radius, o.latent_radius);
    }
    TriMesh mesh = icosphere(2 + i % 2);  // landmarks differ in vertex count
    mesh.vertices = gen->surface(mesh.vertices, z);
    const std::string id = "L" + std::to_string(i);
    write_obj(mesh, dir / "meshes" / (id + ".obj"));
    landmarks.push_back({{"id", id}, {"mesh", "meshes/" + id + ".obj"}});
  }

  json doc;
  doc["seed"] = o.seed;
  doc["generator"] = spec.to_json();
  doc["landmarks"] = landmarks;
  doc["projection"] = json::object();
  if (scaled) doc["projection"]["init"] = std::vector<double>(neutral.data(), neutral.data() + neutral.size());
  if (o.fast) {
    doc["projection"]["sample_counts"] = {1024, 2048};
    doc["projection"]["iters_per_stage"] = 150;
    doc["fem"] = {{"target_faces", 1000}};
    doc["train"] = {{"iters", 1000}};
  }
  const fs::path path = dir / "config.json";
  binio::write_file(path, doc.dump(2) + "\n");
  return path;
}

}  // namespace msub
