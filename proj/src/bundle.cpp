#include "msub/bundle.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <sstream>

#include "msub/binary_io.hpp"
#include "msub/error.hpp"

namespace msub {

namespace fs = std::filesystem;
using Bytes = std::vector<unsigned char>;

bool Space::has_stage(const std::string& stage) const {
  return std::find(stages.begin(), stages.end(), stage) != stages.end();
}

void Space::mark_stage(const std::string& stage) {
  if (!has_stage(stage)) stages.push_back(stage);
}

void Space::require_stage(const std::string& stage, const std::string& needed_by) const {
  if (!has_stage(stage))
    fail(ErrorCode::missing_stage, "'" + needed_by + "' needs the '" + stage + "' stage; run `msub " + stage +
                                       "` on this bundle first");
}

std::vector<Vec2> Space::positions() const {
  std::vector<Vec2> out;
  for (const auto& l : landmarks) {
    if (!l.position) fail(ErrorCode::missing_stage, "landmark '" + l.id + "' has no position; run `msub embed` first");
    out.push_back(*l.position);
  }
  return out;
}

std::vector<LatentVector> Space::latents() const {
  std::vector<LatentVector> out;
  for (const auto& l : landmarks) out.push_back(l.latent);
  return out;
}

int Space::landmark_index(const std::string& id) const {
  for (std::size_t i = 0; i < landmarks.size(); ++i)
    if (landmarks[i].id == id) return static_cast<int>(i);
  return -1;
}

// ---------------------------------------------------------------------------

std::string sha256_hex(const Bytes& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorCode::io, "sha256: digest failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return out.str();
}

std::string sha256_hex(const std::string& text) { return sha256_hex(Bytes(text.begin(), text.end())); }

// ---------------------------------------------------------------------------

Bytes encode_latents(const std::vector<LatentVector>& latents) {
  binio::Writer w;
  w.u32(static_cast<std::uint32_t>(latents.size()));
  w.u32(latents.empty() ? 0u : static_cast<std::uint32_t>(latents.front().size()));
  for (const auto& z : latents)
    for (Eigen::Index k = 0; k < z.size(); ++k) w.f64(z[k]);
  return w.take();
}

std::vector<LatentVector> decode_latents(const Bytes& bytes) {
  binio::Reader r(bytes, "latents.bin");
  const auto n = r.u32(), d = r.u32();
  std::vector<LatentVector> out(n, LatentVector(d));
  for (auto& z : out)
    for (std::uint32_t k = 0; k < d; ++k) z[k] = r.f64();
  r.expect_done();
  return out;
}

Bytes encode_polylines(const Triangulation2D& tri, const std::vector<GeodesicPolyline>& polys) {
  if (polys.size() != tri.edges.size()) fail(ErrorCode::invalid_input, "polylines: one per Delaunay edge required");
  binio::Writer w;
  w.u32(static_cast<std::uint32_t>(polys.size()));
  for (std::size_t e = 0; e < polys.size(); ++e) {
    const auto& p = polys[e];
    w.u32(static_cast<std::uint32_t>(e));
    w.u32(static_cast<std::uint32_t>(tri.edges[e][0]));
    w.u32(static_cast<std::uint32_t>(tri.edges[e][1]));
    w.u32(static_cast<std::uint32_t>(p.nodes.size()));
    w.u32(static_cast<std::uint32_t>(p.nodes.front().size()));
    for (const auto& z : p.nodes)
      for (Eigen::Index k = 0; k < z.size(); ++k) w.f64(z[k]);
    const auto& knots = p.warp.knots();
    w.u32(static_cast<std::uint32_t>(knots.size()));
    for (const auto& [a, b] : knots) {
      w.f64(a);
      w.f64(b);
    }
  }
  return w.take();
}

std::vector<GeodesicPolyline> decode_polylines(const Triangulation2D& tri, const Bytes& bytes) {
  binio::Reader r(bytes, "polylines.bin");
  const auto n = r.u32();
  if (n != tri.edges.size()) fail(ErrorCode::checksum, "polylines.bin does not match the Delaunay edges");
  std::vector<GeodesicPolyline> out(n);
  for (std::uint32_t e = 0; e < n; ++e) {
    const auto id = r.u32(), a = r.u32(), b = r.u32();
    if (id != e || static_cast<int>(a) != tri.edges[e][0] || static_cast<int>(b) != tri.edges[e][1])
      fail(ErrorCode::checksum, "polylines.bin edge record " + std::to_string(e) + " does not match the triangulation");
    const auto count = r.u32(), d = r.u32();
    out[e].nodes.assign(count, LatentVector(d));
    for (auto& z : out[e].nodes)
      for (std::uint32_t k = 0; k < d; ++k) z[k] = r.f64();
    const auto knots = r.u32();
    std::vector<std::pair<double, double>> kv(knots);
    for (auto& [x, y] : kv) {
      x = r.f64();
      y = r.f64();
    }
    out[e].warp = Warp(std::move(kv));
  }
  r.expect_done();
  return out;
}

Bytes encode_fem(const FemMesh& fem) {
  binio::Writer w;
  w.u32(static_cast<std::uint32_t>(fem.level));
  w.u32(static_cast<std::uint32_t>(fem.vertices.size()));
  for (const auto& v : fem.vertices) {
    w.f64(v.x());
    w.f64(v.y());
  }
  w.u32(static_cast<std::uint32_t>(fem.faces.size()));
  for (const auto& f : fem.faces)
    for (int i : f) w.u32(static_cast<std::uint32_t>(i));
  for (const auto& t : fem.tags) {
    w.u8(static_cast<std::uint8_t>(t.kind));
    w.put<std::int32_t>(t.edge);
    w.f64(t.t);
    w.put<std::int32_t>(t.landmark);
  }
  for (int f : fem.face_facet) w.u32(static_cast<std::uint32_t>(f));
  return w.take();
}

FemMesh decode_fem(const Triangulation2D& tri, const Bytes& bytes) {
  binio::Reader r(bytes, "fem.bin");
  const auto level = r.u32();
  if (level < 1 || level > 4096) fail(ErrorCode::checksum, "fem.bin: implausible subdivision level");
  FemMesh fem = discretize_level(tri, static_cast<int>(level));
  auto mismatch = [] { fail(ErrorCode::checksum, "fem.bin does not match the triangulation it claims to discretize"); };
  if (r.u32() != fem.vertices.size()) mismatch();
  for (const auto& v : fem.vertices) {
    const double x = r.f64(), y = r.f64();
    if (x != v.x() || y != v.y()) mismatch();
  }
  if (r.u32() != fem.faces.size()) mismatch();
  for (const auto& f : fem.faces)
    for (int i : f)
      if (r.u32() != static_cast<std::uint32_t>(i)) mismatch();
  for (const auto& t : fem.tags) {
    const auto kind = r.u8();
    const auto edge = r.get<std::int32_t>();
    const auto tt = r.f64();
    const auto lm = r.get<std::int32_t>();
    if (kind != static_cast<std::uint8_t>(t.kind) || edge != t.edge || tt != t.t || lm != t.landmark) mismatch();
  }
  for (int f : fem.face_facet)
    if (r.u32() != static_cast<std::uint32_t>(f)) mismatch();
  r.expect_done();
  return fem;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kFormat = "msub-space-bundle";

void check_id(const std::string& id) {
  if (id.empty() || !std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
      }) || id.front() == '.')
    fail(ErrorCode::invalid_input, "landmark id '" + id + "' must use only letters, digits, '_', '-', '.'");
}

std::string obj_text(const TriMesh& mesh) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  return out.str();
}

Bytes f32_bytes(const std::vector<float>& values) {
  binio::Writer w;
  for (float v : values) w.f32(v);
  return w.take();
}

std::vector<float> f32_values(const Bytes& bytes, const std::string& name) {
  if (bytes.size() % 4 != 0) fail(ErrorCode::checksum, name + ": size is not a multiple of 4");
  binio::Reader r(bytes, name);
  std::vector<float> out(bytes.size() / 4);
  for (auto& v : out) v = r.f32();
  return out;
}

}  // namespace

fs::path save_bundle(const Space& space, const fs::path& dir) {
  nlohmann::json files = nlohmann::json::object();
  auto put = [&](const std::string& name, const Bytes& bytes) {
    binio::write_file(dir / name, bytes);
    files[name] = {{"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}};
  };

  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kBundleVersion;
  manifest["generator"] = space.generator_spec.to_json();
  manifest["stages"] = space.stages;
  manifest["config"] = space.config;
  manifest["reports"] = space.reports;

  if (!space.generator_weights.empty()) {
    put("generator.bin", f32_bytes(space.generator_weights));
    manifest["generator_weights"] = "generator.bin";
  }

  nlohmann::json landmarks = nlohmann::json::array();
  for (std::size_t i = 0; i < space.landmarks.size(); ++i) {
    const auto& l = space.landmarks[i];
    check_id(l.id);
    const std::string mesh_path = "meshes/" + l.id + ".obj";
    const std::string text = obj_text(l.mesh);
    put(mesh_path, Bytes(text.begin(), text.end()));
    nlohmann::json rec = {{"id", l.id}, {"index", i}, {"mesh", mesh_path}};
    rec["position"] = l.position ? nlohmann::json::array({l.position->x(), l.position->y()}) : nlohmann::json();
    landmarks.push_back(rec);
  }
  manifest["landmarks"] = landmarks;
  if (space.has_stage("project")) put("latents.bin", encode_latents(space.latents()));

  if (space.tri) {
    manifest["delaunay"] = {{"edges", space.tri->edges}, {"triangles", space.tri->triangles}, {"hull", space.tri->hull}};
  }
  if (space.tri && !space.polylines.empty()) put("polylines.bin", encode_polylines(*space.tri, space.polylines));
  if (space.plan) {
    const std::string text = space.plan->to_json().dump(2) + "\n";
    put("switchplan.json", Bytes(text.begin(), text.end()));
  }
  if (space.fem) put("fem.bin", encode_fem(*space.fem));
  if (space.model) {
    const auto& m = *space.model;
    put("mlp.bin", f32_bytes(m.mlp.to_f32()));
    manifest["mlp"] = {{"shape", m.mlp.shape_manifest()},
                       {"encoding", {{"max_frequency", m.encoding.max_frequency},
                                     {"include_input", m.encoding.include_input}}},
                       {"input_origin", {m.input_origin.x(), m.input_origin.y()}},
                       {"input_scale", m.input_scale}};
  }
  manifest["files"] = files;

  const fs::path path = dir / "manifest.json";
  binio::write_file(path, manifest.dump(2) + "\n");
  return path;
}

Space load_bundle(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::is_directory(dir)) fail(ErrorCode::not_a_bundle, "'" + dir.string() + "' is not a directory");
  if (!fs::exists(mpath)) fail(ErrorCode::not_a_bundle, "'" + dir.string() + "' has no manifest.json");
  nlohmann::json manifest;
  {
    const auto bytes = binio::read_file(mpath);
    try {
      manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::not_a_bundle, "'" + mpath.string() + "' is not valid JSON: " + e.what());
    }
  }
  if (!manifest.is_object() || manifest.value("format", "") != kFormat)
    fail(ErrorCode::not_a_bundle, "'" + mpath.string() + "' is not a space bundle manifest");
  const int version = manifest.value("version", -1);
  if (version != kBundleVersion)
    fail(ErrorCode::unsupported_version, "bundle version " + std::to_string(version) + " is not supported (expected " +
                                             std::to_string(kBundleVersion) + ")");

  const auto& files = manifest.at("files");
  auto get = [&](const std::string& name) {
    if (!files.contains(name)) fail(ErrorCode::checksum, "manifest does not list required file '" + name + "'");
    const fs::path p = dir / name;
    if (!fs::exists(p)) fail(ErrorCode::io, "bundle file missing: '" + p.string() + "'");
    Bytes bytes = binio::read_file(p);
    if (sha256_hex(bytes) != files.at(name).at("sha256").get<std::string>())
      fail(ErrorCode::checksum, "checksum mismatch for bundle file '" + p.string() + "'");
    return bytes;
  };

  try {
    Space s;
    s.config = manifest.at("config");
    s.reports = manifest.value("reports", nlohmann::json::object());
    s.stages = manifest.at("stages").get<std::vector<std::string>>();
    s.generator_spec = GeneratorSpec::from_json(manifest.at("generator"));
    if (manifest.contains("generator_weights"))
      s.generator_weights = f32_values(get(manifest.at("generator_weights").get<std::string>()), "generator.bin");
    s.generator = make_generator(s.generator_spec, s.generator_weights);

    std::vector<LatentVector> latents;
    if (s.has_stage("project")) latents = decode_latents(get("latents.bin"));
    const auto& recs = manifest.at("landmarks");
    if (s.has_stage("project") && latents.size() != recs.size())
      fail(ErrorCode::checksum, "latents.bin holds " + std::to_string(latents.size()) + " latents for " +
                                    std::to_string(recs.size()) + " landmarks");
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto& rec = recs[i];
      Landmark l;
      l.id = rec.at("id").get<std::string>();
      check_id(l.id);
      const auto mesh_name = rec.at("mesh").get<std::string>();
      get(mesh_name);  // checksum only
      l.mesh = read_obj(dir / mesh_name);
      if (!latents.empty()) l.latent = latents[i];
      if (!rec.at("position").is_null()) {
        const auto p = rec.at("position").get<std::vector<double>>();
        if (p.size() != 2) fail(ErrorCode::invalid_input, "landmark '" + l.id + "': position must be [x, y]");
        l.position = Vec2(p[0], p[1]);
      }
      s.landmarks.push_back(std::move(l));
    }

    const bool embedded = std::all_of(s.landmarks.begin(), s.landmarks.end(), [](const Landmark& l) {
      return l.position.has_value();
    });
    if (embedded && s.landmarks.size() >= 3) {
      s.tri = delaunay(s.positions());
      if (manifest.contains("delaunay") &&
          manifest["delaunay"].at("edges").get<std::vector<std::array<int, 2>>>() != s.tri->edges)
        fail(ErrorCode::checksum, "manifest Delaunay edges do not match the landmark positions");
    }
    if (files.contains("polylines.bin")) {
      if (!s.tri) fail(ErrorCode::checksum, "polylines.bin present without landmark positions");
      s.polylines = decode_polylines(*s.tri, get("polylines.bin"));
    }
    if (files.contains("switchplan.json")) {
      const auto bytes = get("switchplan.json");
      s.plan = SwitchPlan::from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    }
    if (files.contains("fem.bin")) {
      if (!s.tri) fail(ErrorCode::checksum, "fem.bin present without landmark positions");
      s.fem = decode_fem(*s.tri, get("fem.bin"));
    }
    if (files.contains("mlp.bin")) {
      const auto& mj = manifest.at("mlp");
      MapModel m;
      const auto values = f32_values(get("mlp.bin"), "mlp.bin");
      m.mlp = Mlp::from_f32(mj.at("shape"), values);
      m.encoding.max_frequency = mj.at("encoding").at("max_frequency").get<int>();
      m.encoding.include_input = mj.at("encoding").at("include_input").get<bool>();
      const auto o = mj.at("input_origin").get<std::vector<double>>();
      m.input_origin = Vec2(o.at(0), o.at(1));
      m.input_scale = mj.at("input_scale").get<double>();
      m.boundary = s.polylines;
      m.landmark_latents = latents;
      s.model = std::move(m);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_input, "malformed bundle manifest '" + mpath.string() + "': " + e.what());
  }
}

}  // namespace msub
