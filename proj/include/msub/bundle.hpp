#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "msub/deform.hpp"
#include "msub/generator.hpp"
#include "msub/geodesic.hpp"
#include "msub/geomcore.hpp"
#include "msub/submanifold.hpp"

namespace msub {

inline constexpr int kBundleVersion = 1;

struct Landmark {
  std::string id;
  TriMesh mesh;
  LatentVector latent;
  std::optional<Vec2> position;
};

/// Everything a built (or partially built) exploration space consists of.
struct Space {
  nlohmann::json config = nlohmann::json::object();  // echo of the pipeline config
  GeneratorSpec generator_spec;
  std::vector<float> generator_weights;
  GeneratorPtr generator;

  std::vector<Landmark> landmarks;
  std::vector<std::string> stages;  // completed, in order
  nlohmann::json reports = nlohmann::json::object();  // per-stage summaries

  std::optional<Triangulation2D> tri;
  std::vector<GeodesicPolyline> polylines;  // per Delaunay edge
  std::optional<SwitchPlan> plan;
  std::optional<FemMesh> fem;
  std::optional<MapModel> model;

  bool has_stage(const std::string& stage) const;
  void mark_stage(const std::string& stage);
  // Throws missing_stage naming the command to run.
  void require_stage(const std::string& stage, const std::string& needed_by) const;

  std::vector<Vec2> positions() const;
  std::vector<LatentVector> latents() const;
  int landmark_index(const std::string& id) const;  // -1 if absent
};

std::string sha256_hex(const std::vector<unsigned char>& bytes);
std::string sha256_hex(const std::string& text);

/// Writes manifest.json plus binary payloads; returns the manifest path.
std::filesystem::path save_bundle(const Space& space, const std::filesystem::path& dir);
Space load_bundle(const std::filesystem::path& dir);

// Payload encoders, exposed for tests.
std::vector<unsigned char> encode_latents(const std::vector<LatentVector>& latents);
std::vector<LatentVector> decode_latents(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_polylines(const Triangulation2D& tri, const std::vector<GeodesicPolyline>& polys);
std::vector<GeodesicPolyline> decode_polylines(const Triangulation2D& tri, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_fem(const FemMesh& fem);
FemMesh decode_fem(const Triangulation2D& tri, const std::vector<unsigned char>& bytes);

}  // namespace msub
