#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msub/binary_io.hpp"
#include "msub/bundle.hpp"
#include "msub/error.hpp"
#include "msub/pipeline.hpp"
#include "msub/service.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace msub;

namespace {

struct ConfigFlags {
  std::string config;
  std::string out;
  std::string generator;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config, "pipeline config (TOML or JSON)");
  cmd->add_option("--out", f.out, "bundle directory")->option_text("DIR");
  cmd->add_option("--bundle", f.out, "bundle directory (alias of --out)");
  cmd->add_option("--generator", f.generator, "generator spec: inline JSON or a JSON/TOML file");
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--set", f.overrides, "config override key.path=value (repeatable)");
}

json generator_document(const std::string& text) {
  if (fs::exists(text)) return read_config_document(text);
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    fail(ErrorCode::invalid_input, "--generator must be a file or inline JSON");
  }
}

// The config comes from --config, else from the bundle's echo.
PipelineConfig resolve_config(const ConfigFlags& f, const Space* bundle, fs::path* bundle_dir) {
  json doc;
  fs::path base;
  bool from_file = !f.config.empty();
  if (from_file) {
    doc = read_config_document(f.config);
    base = fs::path(f.config).parent_path();
  } else if (bundle) {
    doc = bundle->config;
  } else {
    fail(ErrorCode::invalid_input, "no config: pass --config or point --out at an existing bundle");
  }
  if (!f.generator.empty()) doc["generator"] = generator_document(f.generator);
  if (f.seed) doc["seed"] = *f.seed;
  for (const auto& o : f.overrides) apply_override(doc, o);
  auto cfg = parse_config(doc, base, from_file);
  if (!f.out.empty()) cfg.out = f.out;
  if (cfg.out.empty()) fail(ErrorCode::invalid_input, "no bundle directory: pass --out or set 'out' in the config");
  if (bundle_dir) *bundle_dir = cfg.out;
  return cfg;
}

std::optional<Space> try_load(const std::string& dir) {
  if (dir.empty() || !fs::exists(fs::path(dir) / "manifest.json")) return std::nullopt;
  return load_bundle(dir);
}

Space require_bundle(const std::string& dir) {
  if (dir.empty()) fail(ErrorCode::invalid_input, "pass --bundle <dir>");
  return load_bundle(dir);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void run_stage_command(const std::string& stage, const ConfigFlags& f) {
  auto existing = try_load(f.out.empty() && !f.config.empty() ? "" : f.out);
  if (!existing && f.config.empty() && stage != "project" && stage != "run")
    fail(ErrorCode::missing_stage, "no bundle at '" + f.out + "'; run `msub project --config <file> --out " + f.out +
                                       "` first");
  fs::path dir;
  auto cfg = resolve_config(f, existing ? &*existing : nullptr, &dir);
  if (!existing) existing = try_load(dir.string());
  std::vector<std::string> stages;
  if (stage == "run") stages = build_stages();
  else stages = {stage};

  Space space;
  if (stages.front() == "project") space = init_space(cfg);
  else if (existing) space = std::move(*existing);
  else fail(ErrorCode::missing_stage, "no bundle at '" + dir.string() + "'; run `msub project` first");

  for (const auto& s : stages) {
    const auto t0 = std::chrono::steady_clock::now();
    run_build_stage(s, space, cfg);
    save_bundle(space, dir);
    std::fprintf(stderr, "[%s] done in %.1f s -> %s\n", s.c_str(), seconds_since(t0), dir.string().c_str());
  }
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::numerical:
    case ErrorCode::training_diverged: return 3;
    default: return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msub: build and explore 2D deformation subspaces of shape generators"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress warnings");

  ConfigFlags flags;
  std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
  for (const std::string name : {"embed", "geodesics", "switchpoints", "train-map", "run"}) {
    auto* cmd = app.add_subcommand(name, name == "run" ? "run every build stage in order" : "run the " + name + " stage");
    add_config_flags(cmd, flags);
    stage_cmds.emplace_back(name, cmd);
  }

  // project: pipeline stage, or standalone with --mesh
  auto* project_cmd = app.add_subcommand("project", "project landmark meshes into the generator's latent space");
  add_config_flags(project_cmd, flags);
  std::string mesh_path;
  project_cmd->add_option("--mesh", mesh_path, "standalone: project one OBJ (writes latents.bin to --out)");

  auto* deform = app.add_subcommand("deform", "deform a landmark mesh along a 2D trajectory");
  add_config_flags(deform, flags);
  std::string path_text, path_file, landmark, frames_dir, format = "obj";
  deform->add_option("--path", path_text, "trajectory \"x,y;x,y;...\"");
  deform->add_option("--path-file", path_file, "trajectory file, one \"x,y\" per line");
  deform->add_option("--landmark", landmark, "landmark id (default: Voronoi owner of the first point)");
  deform->add_option("--frames", frames_dir, "frame output directory")->required();
  deform->add_option("--format", format, "obj | stream")->check(CLI::IsMember({"obj", "stream"}));

  auto* report = app.add_subcommand("energy-report", "path energies of the space vs latent baselines (CSV)");
  add_config_flags(report, flags);
  std::string csv_path;
  report->add_option("--csv", csv_path, "CSV output (default <bundle>/energy_report.csv)");

  auto* serve = app.add_subcommand("serve", "serve the exploration API over HTTP");
  add_config_flags(serve, flags);
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host);
  serve->add_option("--port", port, "0 picks a free port");

  auto* synth = app.add_subcommand("synth", "write a synthetic landmark set and its pipeline config");
  SynthOptions so;
  std::string synth_out;
  bool full = false;
  synth->add_option("--family", so.family)->check(CLI::IsMember({"linear", "bump_ellipsoid", "tanh_network"}));
  synth->add_option("--landmarks", so.landmarks);
  synth->add_option("--latent-dim", so.latent_dim);
  synth->add_option("--points", so.point_count);
  synth->add_option("--seed", so.seed);
  synth->add_option("--radius", so.latent_radius);
  synth->add_option("--layout", so.layout, "box | sheet")->check(CLI::IsMember({"box", "sheet"}));
  std::vector<std::string> synth_params;
  synth->add_option("--param", synth_params, "generator parameter key=value (repeatable)");
  synth->add_flag("--full", full, "use the full default stage budgets");
  synth->add_option("--out", synth_out, "directory")->required();

  auto* info = app.add_subcommand("info", "print a bundle summary");
  std::string info_dir;
  info->add_option("--bundle", info_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (quiet) set_warnings_enabled(false);

  try {
    for (const auto& [name, cmd] : stage_cmds)
      if (cmd->parsed()) run_stage_command(name, flags);

    if (project_cmd->parsed()) {
      if (mesh_path.empty()) {
        run_stage_command("project", flags);
      } else {
        if (flags.generator.empty() || flags.out.empty())
          fail(ErrorCode::invalid_input, "standalone project needs --mesh, --generator and --out");
        auto spec = GeneratorSpec::from_json(generator_document(flags.generator));
        const auto gen = make_generator(spec);
        ProjectionSchedule sched;
        for (const auto& o : flags.overrides) {
          json doc = sched.to_json();
          apply_override(doc, o);
          sched = ProjectionSchedule::from_json(doc);
        }
        if (flags.seed) sched.seed = *flags.seed;
        const auto res = msub::project(*gen, read_obj(mesh_path), sched, LatentVector::Zero(gen->latent_dim()));
        binio::write_file(flags.out, encode_latents(std::vector<LatentVector>{res.latent}));
        std::fprintf(stderr, "[project] chamfer %.6g -> %s\n", res.loss, flags.out.c_str());
      }
    }

    if (deform->parsed()) {
      auto space = require_bundle(flags.out);
      const auto cfg = resolve_config(flags, &space, nullptr);
      DeformRequest req;
      if (!path_file.empty()) {
        const auto bytes = binio::read_file(path_file);
        std::string text(bytes.begin(), bytes.end());
        for (auto& ch : text)
          if (ch == '\n') ch = ';';
        req.path = parse_path(text);
      } else {
        req.path = parse_path(path_text);
      }
      req.landmark = landmark;
      req.frames_dir = frames_dir;
      req.format = format == "stream" ? FrameFormat::stream : FrameFormat::obj;
      const auto frames = run_deform(space, cfg, req);
      std::fprintf(stderr, "[deform] %zu frames -> %s\n", frames.size(), frames_dir.c_str());
    }

    if (report->parsed()) {
      auto space = require_bundle(flags.out);
      const auto cfg = resolve_config(flags, &space, nullptr);
      const auto rows = energy_report(space, cfg);
      const fs::path out = csv_path.empty() ? fs::path(flags.out) / "energy_report.csv" : fs::path(csv_path);
      binio::write_file(out, energy_report_csv(rows));
      std::cout << energy_report_summary(rows).dump(2) << "\n";
      std::fprintf(stderr, "[energy-report] %zu paths -> %s\n", rows.size(), out.string().c_str());
    }

    if (serve->parsed()) {
      auto space = std::make_shared<const Space>(require_bundle(flags.out));
      const auto cfg = resolve_config(flags, space.get(), nullptr);
      SpaceService::Options opt{cfg.blend, cfg.deform.lambda, cfg.serve_max_step};
      SpaceService svc(space, opt);
      if (!svc.ready()) fail(ErrorCode::not_ready, "bundle is not fully built; run `msub run` first");
      HttpServer server(svc);
      int bound = port;
      if (port == 0) bound = server.bind_any_port(host);
      else if (!server.bind(host, port)) bound = -1;
      if (bound <= 0) fail(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
      std::printf("listening on http://%s:%d\n", host.c_str(), bound);
      std::fflush(stdout);
      server.listen_after_bind();
    }

    if (synth->parsed()) {
      so.fast = !full;
      for (const auto& p : synth_params) apply_override(so.params, p);
      const auto path = write_synthetic_space(so, synth_out);
      std::cout << path.string() << "\n";
    }

    if (info->parsed()) {
      const auto space = load_bundle(info_dir);
      json out = {{"stages", space.stages}, {"landmarks", space.landmarks.size()},
                  {"generator", space.generator_spec.to_json()}, {"reports", space.reports}};
      std::cout << out.dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "msub: error [%s]: %s\n", to_string(e.code()), e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "msub: error: %s\n", e.what());
    return 2;
  }
  return 0;
}
