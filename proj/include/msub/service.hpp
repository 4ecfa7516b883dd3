#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "msub/bundle.hpp"
#include "msub/deform.hpp"
#include "msub/submanifold.hpp"

namespace msub {

struct SwitchEvent {
  int from = -1;
  int to = -1;
  Vec2 at = Vec2::Zero();  // crossing point on the Voronoi boundary
};

struct DragReply {
  std::uint64_t seq = 0;
  Points vertices;  // empty when nothing moved
  std::vector<SwitchEvent> switches;
  bool clamped = false;  // target was pulled back into the hull
  Vec2 position = Vec2::Zero();
  int active = -1;
  int substeps = 0;
};

struct SessionState {
  std::string id;
  int active = -1;
  Points vertices;
  Vec2 position = Vec2::Zero();
  std::vector<Vec2> path;
  double lambda = 0.01;
  bool faulted = false;
  std::uint64_t seq = 0;
  std::chrono::system_clock::time_point created;
};

/// Exploration API over one loaded space. Sessions are isolated; requests on
/// one session are serialized, different sessions run concurrently.
class SpaceService {
 public:
  struct Options {
    Blend blend = Blend::primal;
    double lambda = 0.01;
    double max_step = 0.0;  // <= 0: mean Delaunay edge length / 180
  };

  // A null or unfinished space yields a service that reports not_ready.
  explicit SpaceService(std::shared_ptr<const Space> space, Options options);
  explicit SpaceService(std::shared_ptr<const Space> space);

  bool ready() const { return ready_; }
  const Space& space() const;
  double default_max_step() const { return max_step_; }

  nlohmann::json space_manifest() const;
  nlohmann::json mesh_json(const std::string& landmark_id) const;

  SessionState start_session(const std::string& landmark_id);
  DragReply drag(const std::string& session_id, const Vec2& target, double max_step = 0.0);
  SessionState session(const std::string& session_id) const;
  std::size_t session_count() const;

 private:
  struct Session {
    mutable std::mutex mutex;
    SessionState state;
  };
  std::shared_ptr<Session> find(const std::string& id) const;
  void require_ready() const;
  Points fresh_trajectory(int landmark, const Vec2& to, double max_step) const;

  std::shared_ptr<const Space> space_;
  Options options_;
  bool ready_ = false;
  InferenceCache cache_;
  CloudSampler sampler_;
  std::vector<Vec2> positions_;
  std::vector<Vec2> hull_;
  double max_step_ = 0.0;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_session_ = 1;
};

// Frame wire format: u64 sequence, u32 vertex count, f32 x 3 x count.
// Error frames carry count 0xFFFFFFFF followed by u32 length and a UTF-8 message.
inline constexpr std::uint32_t kErrorFrame = 0xFFFFFFFFu;
std::vector<unsigned char> encode_frame(std::uint64_t seq, const Points& vertices);
std::vector<unsigned char> encode_error_frame(std::uint64_t seq, const std::string& message);

struct DecodedFrame {
  std::uint64_t seq = 0;
  bool error = false;
  std::string message;
  Points vertices;
};
DecodedFrame decode_frame(const std::vector<unsigned char>& bytes);

/// HTTP front end:
///   GET  /api/space              space manifest (JSON)
///   GET  /api/mesh/{id}          landmark mesh (JSON)
///   POST /api/session            {"landmark": id} -> session JSON
///   GET  /api/session/{sid}      session state (JSON)
///   POST /api/session/{sid}/drag {"x", "y", "max_step"?} -> binary frame
class HttpServer {
 public:
  explicit HttpServer(SpaceService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  int bind_any_port(const std::string& host);
  bool bind(const std::string& host, int port);
  bool listen_after_bind();  // blocks until stop()
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace msub
