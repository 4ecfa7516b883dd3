#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "msub/bundle.hpp"
#include "msub/deform.hpp"
#include "msub/embedding.hpp"
#include "msub/geodesic.hpp"
#include "msub/projection.hpp"
#include "msub/submanifold.hpp"

namespace msub {

struct LandmarkInput {
  std::string id;
  std::filesystem::path mesh;              // resolved against the config directory
  std::optional<LatentVector> warm_start;  // projection z0 (zero if absent)
};

struct EnergyReportConfig {
  int paths = 100;
  int samples = 64;
  double length_fraction = 0.5;
  // Path length reference: the bounding-box diagonal of the Delaunay facet the
  // path starts in (true) or of the whole triangulation (false).
  bool per_facet = true;
};

struct PipelineConfig {
  nlohmann::json echo = nlohmann::json::object();  // the input document, overrides applied
  GeneratorSpec generator;
  std::vector<LandmarkInput> landmarks;
  std::uint64_t seed = 0;
  std::filesystem::path out;

  ProjectionSchedule projection;
  std::optional<LatentVector> projection_init;  // z0 for landmarks without their own
  int knn_k = 0;  // 0: min(5, N - 1)
  Stage1Config stage1;
  Stage2Config stage2;
  GeodesicConfig geodesic;
  double target_faces = 2000.0;
  SwitchConfig switches;
  Blend blend = Blend::primal;
  TrainConfig train;
  DeformOptions deform;
  EnergyReportConfig energy;
  double serve_max_step = 0.0;  // 0: mean Delaunay edge length / 180
};

/// Reads a TOML or JSON document (chosen by extension, TOML otherwise sniffed).
nlohmann::json read_config_document(const std::filesystem::path& path);
/// `key.sub=value` edits; the value is parsed as JSON when possible, else kept as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);
// Mesh files are checked unless the document comes from a bundle echo.
PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                            bool require_meshes = true);
PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Stage names in pipeline order.
const std::vector<std::string>& build_stages();
// Complete stage list accepted by run_stage.
const std::vector<std::string>& all_stages();

/// Fresh space from the config: generator built, landmark meshes loaded.
Space init_space(const PipelineConfig& config);

// Build stages. Each validates its prerequisites, drops any downstream
// artifacts, records a report and marks itself complete.
void stage_project(Space& space, const PipelineConfig& config);
void stage_embed(Space& space, const PipelineConfig& config);
void stage_geodesics(Space& space, const PipelineConfig& config);
void stage_switchpoints(Space& space, const PipelineConfig& config);
void stage_train_map(Space& space, const PipelineConfig& config);
void run_build_stage(const std::string& stage, Space& space, const PipelineConfig& config);
void run_pipeline(Space& space, const PipelineConfig& config);

// Per-vertex latents and lifts of the trained map.
InferenceCache space_cache(const Space& space);

// ---------------------------------------------------------------------------
// energy-report

struct EnergyRow {
  Vec2 start, end;
  double ours = 0.0;         // G of the inferred latents along the path
  double ours_primal = 0.0;  // the clouds the space displays (configured blend)
  double z_linear = 0.0;
  double z_opt = 0.0;
};

std::vector<std::pair<Vec2, Vec2>> sample_report_paths(const Triangulation2D& tri, const EnergyReportConfig& config,
                                                       std::uint64_t seed);
std::vector<EnergyRow> energy_report(const Space& space, const PipelineConfig& config);
std::string energy_report_csv(const std::vector<EnergyRow>& rows);
nlohmann::json energy_report_summary(const std::vector<EnergyRow>& rows);

// ---------------------------------------------------------------------------
// deform

enum class FrameFormat { obj, stream };

struct DeformRequest {
  std::vector<Vec2> path;
  std::string landmark;  // empty: Voronoi owner of the first path point
  std::filesystem::path frames_dir;
  FrameFormat format = FrameFormat::obj;
};

std::vector<Vec2> parse_path(const std::string& text);  // "x,y;x,y;..."
std::vector<TriMesh> run_deform(const Space& space, const PipelineConfig& config, const DeformRequest& request);

// Binary frame stream: magic "MSFR", u32 version, u32 vertices, u32 faces,
// u32 frames, faces (u32 x 3), then per frame f32 x 3 x vertices.
std::vector<unsigned char> encode_frame_stream(const std::vector<TriMesh>& frames);

// ---------------------------------------------------------------------------
// Synthetic spaces

struct SynthOptions {
  std::string family = "bump_ellipsoid";
  int landmarks = 6;
  int latent_dim = 8;
  int point_count = 512;
  std::uint64_t seed = 0;
  double latent_radius = 0.8;
  // box: latents uniform in a cube around the neutral latent. sheet: latents
  // uniform in a disk on a random 2-plane through it.
  std::string layout = "box";
  nlohmann::json params = nlohmann::json::object();  // generator family parameters
  bool fast = true;  // desk-scale stage budgets
};

/// Writes landmark meshes and a pipeline config into `dir`; returns the config path.
std::filesystem::path write_synthetic_space(const SynthOptions& options, const std::filesystem::path& dir);

}  // namespace msub
