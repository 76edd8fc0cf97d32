#ifndef WEAKHAR_ANNOSERVE_HPP
#define WEAKHAR_ANNOSERVE_HPP

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

// Eigen must be seen before httplib: <resolv.h> defines a `_res` macro.
#include "weakhar/annotate.hpp"
#include "weakhar/error.hpp"

#include <httplib.h>
#include <json.hpp>

// HTTP front for an AnnotationSession. Endpoints:
//   GET  /api/session             counts, pending requests, vocabulary (404 without a session)
//   GET  /api/requests/next       lowest unlabelled cluster, 204 when done
//   POST /api/requests/{id}/label {"label_id": n}; 409 duplicate, 422 unknown label, 404 unknown id
//   GET  /api/clusters/{id}       member count and centroid clip span
//   GET  /assets/*                files from the assets directory
// Ground-truth labels are never part of any response.
namespace weakhar {

inline constexpr int kDefaultPort = 8787;

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = kDefaultPort;  // 0 picks a free port
  std::filesystem::path assets_dir;
};

inline nlohmann::json to_json(const AnnotatorRequest& r) {
  nlohmann::json j{{"request_id", r.request_id},
                   {"participant_id", r.participant_id},
                   {"clip_index", r.clip_index},
                   {"cluster_id", r.cluster_id},
                   {"span", {{"start_s", r.span.start_s}, {"end_s", r.span.end_s}}}};
  j["media_hint"] = r.media_hint ? nlohmann::json(*r.media_hint) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const SessionState& s) {
  nlohmann::json vocab = nlohmann::json::array();
  for (std::size_t i = 0; i < s.vocabulary.size(); ++i) vocab.push_back({{"id", i}, {"name", s.vocabulary[i]}});
  nlohmann::json pending = nlohmann::json::array();
  for (const auto& r : s.pending) pending.push_back(to_json(r));
  return {{"session_id", s.session_id},
          {"participant_id", s.participant_id},
          {"total_clusters", s.total_clusters},
          {"labeled", s.labeled},
          {"pending", s.pending.size()},
          {"pending_requests", pending},
          {"vocabulary", vocab}};
}

class AnnotationServer {
 public:
  explicit AnnotationServer(ServerOptions opts = {}) : opts_(std::move(opts)) { routes(); }

  ~AnnotationServer() { stop(); }

  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start() {
    if (thread_.joinable()) throw StateError("server already running");
    if (opts_.port == 0) {
      port_ = server_.bind_to_any_port(opts_.host);
      if (port_ < 0) throw StateError("cannot bind " + opts_.host);
    } else {
      if (!server_.bind_to_port(opts_.host, opts_.port))
        throw StateError("cannot bind " + opts_.host + ":" + std::to_string(opts_.port) + " (port in use?)");
      port_ = opts_.port;
    }
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (!thread_.joinable()) return;
    server_.stop();
    thread_.join();
  }

  int port() const { return port_; }

  void set_session(std::shared_ptr<AnnotationSession> session) {
    std::lock_guard lock(mu_);
    session_ = std::move(session);
  }

  std::shared_ptr<AnnotationSession> session() const {
    std::lock_guard lock(mu_);
    return session_;
  }

  // Blocks until the current session has every non-empty cluster labelled.
  void wait_until_complete(std::chrono::milliseconds poll = std::chrono::milliseconds(200)) const {
    for (;;) {
      auto s = session();
      if (!s || s->complete()) return;
      std::this_thread::sleep_for(poll);
    }
  }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
  }

  std::shared_ptr<AnnotationSession> open_session() const {
    auto s = session();
    return s && s->is_open() ? s : nullptr;
  }

  void routes() {
    // SO_REUSEPORT (httplib's default) would let a second server share a busy port.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    server_.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    });
    server_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
      auto s = open_session();
      if (!s) return send_error(res, 404, "no open session");
      send_json(res, 200, to_json(s->state()));
    });

    server_.Get("/api/requests/next", [this](const httplib::Request&, httplib::Response& res) {
      auto s = open_session();
      if (!s) return send_error(res, 404, "no open session");
      auto next = s->next_request();
      if (!next) {
        res.status = 204;
        return;
      }
      send_json(res, 200, to_json(*next));
    });

    server_.Post(R"(/api/requests/([^/]+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = open_session();
      if (!s) return send_error(res, 404, "no open session");
      const auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object() || !body.contains("label_id") || !body["label_id"].is_number_integer())
        return send_error(res, 422, "body must be {\"label_id\": <integer>}");
      const auto label = body["label_id"].get<long long>();
      const int label_id = label < 0 || label > 1'000'000 ? -1 : static_cast<int>(label);
      switch (s->submit(req.matches[1].str(), label_id)) {
        case SubmitStatus::kAccepted:
          return send_json(res, 200, {{"status", "accepted"}, {"labeled", s->state().labeled}});
        case SubmitStatus::kDuplicate:
          return send_error(res, 409, "request already labelled");
        case SubmitStatus::kUnknownLabel:
          return send_error(res, 422, "label_id " + std::to_string(label) + " is not in the vocabulary");
        case SubmitStatus::kUnknownRequest:
          return send_error(res, 404, "unknown request " + req.matches[1].str());
      }
    });

    server_.Get(R"(/api/clusters/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = open_session();
      if (!s) return send_error(res, 404, "no open session");
      const auto& centroids = s->centroids();
      const auto digits = req.matches[1].str();
      const long long id = digits.size() > 9 ? centroids.components : std::stoll(digits);
      const Centroid* c = id < centroids.components ? centroids.find(static_cast<int>(id)) : nullptr;
      if (!c) return send_error(res, 404, "cluster " + req.matches[1].str() + " is empty or unknown");
      nlohmann::json j{{"cluster_id", c->cluster_id},
                       {"member_count", centroids.member_counts[static_cast<std::size_t>(c->cluster_id)]},
                       {"centroid_clip", c->clip_index},
                       {"request_id", s->request_id(c->cluster_id)}};
      const auto span = s->span(c->clip_index);
      j["span"] = {{"start_s", span.start_s}, {"end_s", span.end_s}};
      send_json(res, 200, j);
    });

    if (!opts_.assets_dir.empty()) {
      if (!std::filesystem::is_directory(opts_.assets_dir))
        throw ConfigError("assets directory " + opts_.assets_dir.string() + " does not exist");
      server_.set_mount_point("/assets", opts_.assets_dir.string());
    }
  }

  ServerOptions opts_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::shared_ptr<AnnotationSession> session_;
};

}  // namespace weakhar

#endif  // WEAKHAR_ANNOSERVE_HPP
