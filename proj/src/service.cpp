#include "msub/service.hpp"

#include <cmath>
#include <thread>

#include <httplib.h>

#include "msub/binary_io.hpp"
#include "msub/error.hpp"

namespace msub {

using json = nlohmann::json;

SpaceService::SpaceService(std::shared_ptr<const Space> space) : SpaceService(std::move(space), Options{}) {}

SpaceService::SpaceService(std::shared_ptr<const Space> space, Options options)
    : space_(std::move(space)), options_(options) {
  if (!space_ || !space_->has_stage("train-map") || !space_->fem || !space_->model || !space_->tri) return;
  cache_ = build_inference_cache(*space_->generator, *space_->model, *space_->fem);
  sampler_ = space_sampler(*space_->generator, cache_, *space_->fem, options_.blend);
  positions_ = space_->positions();
  for (int v : space_->tri->hull) hull_.push_back(positions_[static_cast<std::size_t>(v)]);
  double mean = 0.0;
  for (const auto& e : space_->tri->edges)
    mean += (positions_[static_cast<std::size_t>(e[0])] - positions_[static_cast<std::size_t>(e[1])]).norm();
  mean /= static_cast<double>(space_->tri->edges.size());
  max_step_ = options_.max_step > 0.0 ? options_.max_step : mean / 180.0;
  ready_ = true;
}

void SpaceService::require_ready() const {
  if (!ready_) fail(ErrorCode::not_ready, "no built space is loaded (run the pipeline through train-map)");
}

const Space& SpaceService::space() const {
  require_ready();
  return *space_;
}

json SpaceService::space_manifest() const {
  require_ready();
  const auto& s = *space_;
  json landmarks = json::array();
  for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
    const auto& l = s.landmarks[i];
    landmarks.push_back({{"id", l.id},
                         {"index", i},
                         {"position", {positions_[i].x(), positions_[i].y()}},
                         {"vertex_count", l.mesh.vertices.rows()},
                         {"face_count", l.mesh.faces.size()}});
  }
  auto pts = [](const std::vector<Vec2>& poly) {
    json out = json::array();
    for (const auto& p : poly) out.push_back({p.x(), p.y()});
    return out;
  };
  json cells = json::array();
  for (const auto& cell : voronoi_cells_clipped(positions_, hull_)) cells.push_back(pts(cell));
  json out = {{"landmarks", landmarks},
              {"edges", s.tri->edges},
              {"triangles", s.tri->triangles},
              {"hull", s.tri->hull},
              {"hull_polygon", pts(hull_)},
              {"voronoi", cells},
              {"generator", s.generator_spec.to_json()},
              {"stages", s.stages},
              {"max_step", max_step_},
              {"lambda", options_.lambda}};
  if (s.plan) out["switch_plan"] = s.plan->to_json();
  return out;
}

json SpaceService::mesh_json(const std::string& landmark_id) const {
  require_ready();
  const int i = space_->landmark_index(landmark_id);
  if (i < 0) fail(ErrorCode::not_found, "unknown landmark '" + landmark_id + "'");
  const auto& m = space_->landmarks[static_cast<std::size_t>(i)].mesh;
  std::vector<double> v(m.vertices.data(), m.vertices.data() + m.vertices.size());
  std::vector<int> f;
  for (const auto& face : m.faces) f.insert(f.end(), face.begin(), face.end());
  return {{"id", landmark_id}, {"index", i}, {"vertices", v}, {"faces", f}};
}

std::shared_ptr<SpaceService::Session> SpaceService::find(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorCode::not_found, "unknown session '" + id + "'");
  return it->second;
}

SessionState SpaceService::start_session(const std::string& landmark_id) {
  require_ready();
  const int i = space_->landmark_index(landmark_id);
  if (i < 0) fail(ErrorCode::not_found, "unknown landmark '" + landmark_id + "'");
  auto session = std::make_shared<Session>();
  auto& st = session->state;
  st.active = i;
  st.vertices = space_->landmarks[static_cast<std::size_t>(i)].mesh.vertices;
  st.position = positions_[static_cast<std::size_t>(i)];
  st.path = {st.position};
  st.lambda = options_.lambda;
  st.created = std::chrono::system_clock::now();
  {
    std::lock_guard lock(sessions_mutex_);
    st.id = "s" + std::to_string(next_session_++);
    sessions_[st.id] = session;
  }
  return st;
}

SessionState SpaceService::session(const std::string& session_id) const {
  const auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  return s->state;
}

std::size_t SpaceService::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

Points SpaceService::fresh_trajectory(int landmark, const Vec2& to, double max_step) const {
  const Vec2& from = positions_[static_cast<std::size_t>(landmark)];
  const TriMesh& mesh = space_->landmarks[static_cast<std::size_t>(landmark)].mesh;
  const double len = (to - from).norm();
  if (len == 0.0) return mesh.vertices;
  const int steps = std::max(1, static_cast<int>(std::ceil(len / max_step)));
  const std::vector<Vec2> path{from, to};
  return advect(sampler_, mesh, path, DeformOptions{steps, options_.lambda}).vertices;
}

DragReply SpaceService::drag(const std::string& session_id, const Vec2& target_in, double max_step) {
  require_ready();
  if (!target_in.allFinite()) fail(ErrorCode::invalid_input, "drag target must be finite");
  if (!(max_step > 0.0)) max_step = max_step_;
  const auto session = find(session_id);
  std::lock_guard lock(session->mutex);
  auto& st = session->state;
  if (st.faulted) fail(ErrorCode::numerical, "session '" + session_id + "' is faulted; start a new session");

  DragReply reply;
  Vec2 target = target_in;
  if (!inside_convex(hull_, target, 0.0)) {
    Vec2 centroid = Vec2::Zero();
    for (const auto& p : hull_) centroid += p;
    centroid /= static_cast<double>(hull_.size());
    const Vec2 edge = closest_on_polygon(hull_, target);
    target = centroid + (1.0 - 1e-9) * (edge - centroid);
    reply.clamped = true;
  }

  const Vec2 start = st.position;
  const double len = (target - start).norm();
  if (len == 0.0) {
    reply.seq = ++st.seq;
    reply.position = st.position;
    reply.active = st.active;
    return reply;
  }

  const int subs = std::max(1, static_cast<int>(std::ceil(len / max_step)));
  Points verts = st.vertices;
  int active = st.active;
  Vec2 x = start;
  std::vector<Vec2> path = st.path;
  try {
    for (int i = 1; i <= subs; ++i) {
      const Vec2 next = i == subs ? target : Vec2(start + (static_cast<double>(i) / subs) * (target - start));
      const int owner = voronoi_cell_of(positions_, next);
      if (owner != active) {
        Vec2 lo = x, hi = next;
        for (int it = 0; it < 60; ++it) {
          const Vec2 mid = 0.5 * (lo + hi);
          (voronoi_cell_of(positions_, mid) == active ? lo : hi) = mid;
        }
        const Vec2 cross = voronoi_cell_of(positions_, hi) == owner ? hi : next;
        verts = fresh_trajectory(owner, cross, max_step);
        if (cross != next) verts = flow_step(sampler_, cross, next, verts, options_.lambda);
        reply.switches.push_back({active, owner, cross});
        active = owner;
      } else {
        verts = flow_step(sampler_, x, next, verts, options_.lambda);
      }
      x = next;
      path.push_back(x);
      ++reply.substeps;
    }
    if (!verts.allFinite()) fail(ErrorCode::numerical, "drag produced non-finite vertex positions");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::numerical || e.code() == ErrorCode::training_diverged) st.faulted = true;
    throw;
  } catch (const std::exception& e) {
    st.faulted = true;
    fail(ErrorCode::numerical, std::string("drag failed: ") + e.what());
  }

  st.vertices = std::move(verts);
  st.active = active;
  st.position = x;
  st.path = std::move(path);
  reply.seq = ++st.seq;
  reply.vertices = st.vertices;
  reply.position = st.position;
  reply.active = st.active;
  return reply;
}

// ---------------------------------------------------------------------------
// Frames

std::vector<unsigned char> encode_frame(std::uint64_t seq, const Points& vertices) {
  binio::Writer w;
  w.u64(seq);
  w.u32(static_cast<std::uint32_t>(vertices.rows()));
  for (Eigen::Index i = 0; i < vertices.rows(); ++i)
    for (int k = 0; k < 3; ++k) w.f32(static_cast<float>(vertices(i, k)));
  return w.take();
}

std::vector<unsigned char> encode_error_frame(std::uint64_t seq, const std::string& message) {
  binio::Writer w;
  w.u64(seq);
  w.u32(kErrorFrame);
  w.u32(static_cast<std::uint32_t>(message.size()));
  for (char c : message) w.u8(static_cast<std::uint8_t>(c));
  return w.take();
}

DecodedFrame decode_frame(const std::vector<unsigned char>& bytes) {
  binio::Reader r(bytes, "frame");
  DecodedFrame f;
  f.seq = r.u64();
  const auto count = r.u32();
  if (count == kErrorFrame) {
    f.error = true;
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) f.message.push_back(static_cast<char>(r.u8()));
  } else {
    f.vertices.resize(count, 3);
    for (std::uint32_t i = 0; i < count; ++i)
      for (int k = 0; k < 3; ++k) f.vertices(i, k) = r.f32();
  }
  r.expect_done();
  return f;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::not_ready:
    case ErrorCode::missing_stage: return 409;
    case ErrorCode::invalid_input:
    case ErrorCode::degenerate_input:
    case ErrorCode::outside: return 400;
    default: return 500;
  }
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", code}, {"message", message}}.dump(), "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, to_string(ErrorCode::invalid_input), std::string("malformed JSON body: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

json session_json(const SessionState& s, const SpaceService& svc) {
  return {{"session", s.id},
          {"active", s.active},
          {"active_id", svc.space().landmarks[static_cast<std::size_t>(s.active)].id},
          {"position", {s.position.x(), s.position.y()}},
          {"vertex_count", s.vertices.rows()},
          {"seq", s.seq},
          {"faulted", s.faulted},
          {"lambda", s.lambda},
          {"path_length", s.path.size()},
          {"created_unix_ms", std::chrono::duration_cast<std::chrono::milliseconds>(s.created.time_since_epoch()).count()}};
}

}  // namespace

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(SpaceService& svc) : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.Get("/api/space", guarded([&svc](const httplib::Request&, httplib::Response& res) {
            res.set_content(svc.space_manifest().dump(), "application/json");
          }));
  srv.Get(R"(/api/mesh/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            res.set_content(svc.mesh_json(req.matches[1]).dump(), "application/json");
          }));
  srv.Post("/api/session", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto body = json::parse(req.body);
             const auto st = svc.start_session(body.at("landmark").get<std::string>());
             res.set_content(session_json(st, svc).dump(), "application/json");
           }));
  srv.Get(R"(/api/session/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            res.set_content(session_json(svc.session(req.matches[1]), svc).dump(), "application/json");
          }));
  srv.Post(R"(/api/session/([^/]+)/drag)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const std::string sid = req.matches[1];
             const auto body = json::parse(req.body);
             const Vec2 target(body.at("x").get<double>(), body.at("y").get<double>());
             const double max_step = body.value("max_step", 0.0);
             try {
               const auto reply = svc.drag(sid, target, max_step);
               const auto frame = encode_frame(reply.seq, reply.vertices);
               res.set_content(std::string(frame.begin(), frame.end()), "application/octet-stream");
               res.set_header("X-Msub-Active", std::to_string(reply.active));
               res.set_header("X-Msub-Position", std::to_string(reply.position.x()) + "," +
                                                     std::to_string(reply.position.y()));
               res.set_header("X-Msub-Clamped", reply.clamped ? "1" : "0");
               json sw = json::array();
               for (const auto& e : reply.switches) sw.push_back({{"from", e.from}, {"to", e.to}, {"at", {e.at.x(), e.at.y()}}});
               res.set_header("X-Msub-Switches", sw.dump());
             } catch (const Error& e) {
               if (e.code() != ErrorCode::numerical && e.code() != ErrorCode::training_diverged) throw;
               const auto st = svc.session(sid);
               const auto frame = encode_error_frame(st.seq, e.what());
               res.status = 500;
               res.set_content(std::string(frame.begin(), frame.end()), "application/octet-stream");
             }
           }));
}

HttpServer::~HttpServer() = default;

int HttpServer::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }
bool HttpServer::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }
bool HttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }
void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace msub
