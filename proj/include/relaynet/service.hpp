#pragma once

// HTTP + event-stream front end for designer sessions.
//
//   POST /sessions                          create (201), 400 on bad scenario
//   GET  /sessions/{id}/graph?view=...      model | learnt | hybrid
//   POST /sessions/{id}/relays              {"add":[..],"remove":[..]}
//   POST /sessions/{id}/step                {"action":"design|learn|evaluate|augment|finalize|repair"}
//   GET  /sessions/{id}/metrics
//   GET  /sessions/{id}/events              text/event-stream; ?since=N polls JSON

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "relaynet/common.hpp"

namespace relaynet::service {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<std::string> token;  // required as "Authorization: Bearer <token>"
    std::optional<std::filesystem::path> snapshot_dir;
    Exec exec = Exec::parallel;
};

struct Response {
    int status = 200;
    nlohmann::json body;
};

class Service {
public:
    explicit Service(ServiceOptions opts);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Transport-independent handlers; the HTTP routes delegate to these.
    Response create_session(const nlohmann::json& body);
    Response graph(const std::string& id, const std::string& view);
    Response relays(const std::string& id, const nlohmann::json& body);
    Response step(const std::string& id, const nlohmann::json& body);
    Response metrics(const std::string& id);
    Response events_since(const std::string& id, long since);

    /// Blocks until stop(). Returns false if the port could not be bound.
    bool listen();
    /// Binds an ephemeral port and returns it; serve with listen_after_bind().
    int bind_any_port();
    bool listen_after_bind();
    void wait_until_ready();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace relaynet::service
