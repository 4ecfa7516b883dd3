#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "msub/error.hpp"
#include "msub/pipeline.hpp"
#include "msub/service.hpp"

namespace py = pybind11;
using namespace msub;

namespace {

using SpacePtr = std::shared_ptr<Space>;

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Eigen::MatrixXd stack_rows(const std::vector<Vec2>& v) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(v.size()), 2);
  for (std::size_t i = 0; i < v.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  return out;
}

Eigen::MatrixXd stack_rows(const std::vector<LatentVector>& v) {
  if (v.empty()) return {};
  Eigen::MatrixXd out(static_cast<Eigen::Index>(v.size()), v.front().size());
  for (std::size_t i = 0; i < v.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  return out;
}

std::vector<Vec2> unstack_path(const Eigen::MatrixXd& m) {
  if (m.cols() != 2) fail(ErrorCode::invalid_input, "path must be an (n, 2) array");
  std::vector<Vec2> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m(i, 0), m(i, 1));
  return out;
}

Eigen::MatrixXi faces_array(const std::vector<Face>& faces) {
  Eigen::MatrixXi out(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    for (int k = 0; k < 3; ++k) out(static_cast<Eigen::Index>(i), k) = faces[i][static_cast<std::size_t>(k)];
  return out;
}

PipelineConfig space_config(const Space& s) { return parse_config(s.config, {}, false); }

// Keeps the space alive for as long as the service exists.
struct PyService {
  std::shared_ptr<const Space> space;
  std::unique_ptr<SpaceService> service;
};

}  // namespace

PYBIND11_MODULE(_msub, m) {
  m.doc() = "2D explorable deformation subspaces of shape generators";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error;
      PyErr_SetObject(exc.ptr(), py::make_tuple(to_string(e.code()), e.what()).ptr());
    }
  });

  m.def("synth", [](const std::filesystem::path& out, const std::string& family, int landmarks, int latent_dim,
                    int points, std::uint64_t seed, double radius, const std::string& layout, const py::dict& params,
                    bool fast) {
        SynthOptions o;
        o.family = family;
        o.landmarks = landmarks;
        o.latent_dim = latent_dim;
        o.point_count = points;
        o.seed = seed;
        o.latent_radius = radius;
        o.layout = layout;
        o.params = from_python(params);
        o.fast = fast;
        return write_synthetic_space(o, out);
      },
      py::arg("out"), py::arg("family") = "bump_ellipsoid", py::arg("landmarks") = 6, py::arg("latent_dim") = 8,
      py::arg("points") = 512, py::arg("seed") = 0, py::arg("radius") = 0.8, py::arg("layout") = "box",
      py::arg("params") = py::dict(), py::arg("fast") = true,
      "Write synthetic landmark meshes and a pipeline config; returns the config path.");

  m.def("read_config", [](const std::filesystem::path& path, const std::vector<std::string>& overrides) {
        auto doc = read_config_document(path);
        for (const auto& o : overrides) apply_override(doc, o);
        return to_python(doc);
      },
      py::arg("path"), py::arg("overrides") = std::vector<std::string>{}, "Config document with overrides applied.");

  py::class_<Space, SpacePtr>(m, "Space")
      .def_property_readonly("stages", [](const Space& s) { return s.stages; })
      .def_property_readonly("landmark_ids",
                             [](const Space& s) {
                               std::vector<std::string> ids;
                               for (const auto& l : s.landmarks) ids.push_back(l.id);
                               return ids;
                             })
      .def_property_readonly("positions", [](const Space& s) { return stack_rows(s.positions()); })
      .def_property_readonly("latents", [](const Space& s) { return stack_rows(s.latents()); })
      .def_property_readonly("config", [](const Space& s) { return to_python(s.config); })
      .def_property_readonly("reports", [](const Space& s) { return to_python(s.reports); })
      .def_property_readonly("edges", [](const Space& s) {
        s.require_stage("embed", "edges");
        return s.tri->edges;
      })
      .def("mesh", [](const Space& s, const std::string& id) {
        const int i = s.landmark_index(id);
        if (i < 0) fail(ErrorCode::not_found, "unknown landmark '" + id + "'");
        const auto& mesh = s.landmarks[static_cast<std::size_t>(i)].mesh;
        return py::make_tuple(mesh.vertices, faces_array(mesh.faces));
      }, py::arg("landmark"), "Landmark mesh as (vertices (n, 3), faces (m, 3)).")
      .def("infer", [](const Space& s, double x, double y, const std::string& blend) {
        s.require_stage("train-map", "infer");
        const auto r = infer(*s.generator, *s.model, *s.fem, Vec2(x, y), blend_from_string(blend));
        return py::make_tuple(r.latent, r.cloud.points);
      }, py::arg("x"), py::arg("y"), py::arg("blend") = "primal", "Latent and point cloud at an exploration point.")
      .def("forward", [](const Space& s, const LatentVector& z) { return s.generator->forward(z).points; },
           py::arg("z"), "Generator output for a latent.")
      .def("energy_report", [](const Space& s) {
        const auto rows = energy_report(s, space_config(s));
        Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), 8);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const auto& r = rows[i];
          out.row(static_cast<Eigen::Index>(i)) << r.start.x(), r.start.y(), r.end.x(), r.end.y(), r.ours, r.z_linear,
              r.z_opt, r.ours_primal;
        }
        return out;
      }, "Per-path energies: columns x0, y0, x1, y1, ours, z_linear, z_opt, ours_primal.")
      .def("deform", [](const Space& s, const Eigen::MatrixXd& path, const std::string& landmark, int steps) {
        auto cfg = space_config(s);
        if (steps > 0) cfg.deform.steps = steps;
        DeformRequest req;
        req.path = unstack_path(path);
        req.landmark = landmark;
        const auto frames = run_deform(s, cfg, req);
        std::vector<Points> out;
        for (const auto& f : frames) out.push_back(f.vertices);
        return out;
      }, py::arg("path"), py::arg("landmark") = "", py::arg("steps") = 0,
         "Deform a landmark mesh along a 2D path; returns the vertex arrays of every frame.")
      .def("save", [](const Space& s, const std::filesystem::path& dir) { return save_bundle(s, dir); },
           py::arg("dir"));

  m.def("load_bundle", [](const std::filesystem::path& dir) { return std::make_shared<Space>(load_bundle(dir)); },
        py::arg("dir"));

  m.def("build", [](const std::filesystem::path& config, const std::filesystem::path& out,
                    const std::vector<std::string>& overrides, const std::vector<std::string>& stages) {
        auto cfg = load_config(config, overrides);
        cfg.out = out;
        auto space = std::make_shared<Space>(init_space(cfg));
        {
          py::gil_scoped_release release;
          if (stages.empty()) {
            run_pipeline(*space, cfg);
          } else {
            for (const auto& st : stages) run_build_stage(st, *space, cfg);
          }
          save_bundle(*space, out);
        }
        return space;
      },
      py::arg("config"), py::arg("out"), py::arg("overrides") = std::vector<std::string>{},
      py::arg("stages") = std::vector<std::string>{}, "Run build stages (all by default) and save the bundle.");

  py::class_<PyService>(m, "Service")
      .def(py::init([](const SpacePtr& space, double max_step) {
             SpaceService::Options opt;
             if (space && !space->config.empty()) {
               const auto cfg = space_config(*space);
               opt = {cfg.blend, cfg.deform.lambda, cfg.serve_max_step};
             }
             if (max_step > 0.0) opt.max_step = max_step;
             auto p = std::make_unique<PyService>();
             p->space = space;
             p->service = std::make_unique<SpaceService>(p->space, opt);
             return p;
           }),
           py::arg("space"), py::arg("max_step") = 0.0)
      .def_property_readonly("ready", [](const PyService& s) { return s.service->ready(); })
      .def("manifest", [](const PyService& s) { return to_python(s.service->space_manifest()); })
      .def("start_session", [](PyService& s, const std::string& landmark) { return s.service->start_session(landmark).id; },
           py::arg("landmark"))
      .def("drag", [](PyService& s, const std::string& sid, double x, double y, double max_step) {
        DragReply r;
        {
          py::gil_scoped_release release;
          r = s.service->drag(sid, Vec2(x, y), max_step);
        }
        py::list sw;
        for (const auto& e : r.switches) sw.append(py::dict(py::arg("from") = e.from, py::arg("to") = e.to,
                                                            py::arg("at") = py::make_tuple(e.at.x(), e.at.y())));
        return py::dict(py::arg("seq") = r.seq, py::arg("vertices") = r.vertices, py::arg("switches") = sw,
                        py::arg("clamped") = r.clamped, py::arg("position") = py::make_tuple(r.position.x(), r.position.y()),
                        py::arg("active") = r.active, py::arg("substeps") = r.substeps);
      }, py::arg("session"), py::arg("x"), py::arg("y"), py::arg("max_step") = 0.0)
      .def("session_vertices", [](const PyService& s, const std::string& sid) { return s.service->session(sid).vertices; },
           py::arg("session"));
}
