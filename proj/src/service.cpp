#include "relaynet/service.hpp"

#include <atomic>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include <httplib.h>

#include "relaynet/designer.hpp"
#include "relaynet/fieldsim.hpp"
#include "relaynet/topology.hpp"

namespace relaynet::service {

namespace {

using nlohmann::json;

// Request-level failures carry their HTTP status.
struct HttpError : Error {
    HttpError(int status, const std::string& what) : Error(what), status(status) {}
    int status;
};

Response error_response(int status, const std::string& msg) {
    return {status, {{"error", msg}}};
}

struct Event {
    long seq = 0;
    json body;
};

struct Field {
    bool simulated = true;
    std::string preset;
    std::uint64_t seed = 1;
    int hello_packets = 200;
    std::uint64_t campaigns = 0;
    std::optional<fieldsim::GroundTruthChannel> channel;
};

struct Entry {
    std::mutex command;  // one command at a time
    designer::SessionState state;
    Field field;

    std::mutex events_mu;
    std::condition_variable events_cv;
    std::vector<Event> events;
};

json graph_delta(const topology::NetworkGraph& before, const topology::NetworkGraph& after) {
    json deployed_on = json::array();
    json deployed_off = json::array();
    for (const auto& n : after.nodes()) {
        const bool was = before.has_node(n.id) && before.node(n.id).deployed;
        if (n.deployed && !was) deployed_on.push_back(n.id);
        if (!n.deployed && was) deployed_off.push_back(n.id);
    }
    json edges = json::array();
    for (const auto& [key, e] : after.edges()) {
        const auto* old = before.edge(key.a, key.b);
        if (!old || old->provenance != e.provenance || old->p_out_hat != e.p_out_hat) {
            json je = {{"a", e.a}, {"b", e.b}, {"provenance", topology::to_string(e.provenance)}};
            je["p_out_hat"] = e.p_out_hat ? json(*e.p_out_hat) : json();
            edges.push_back(std::move(je));
        }
    }
    return {{"deployed_added", deployed_on}, {"deployed_removed", deployed_off}, {"edges_changed", edges}};
}

json pdel_json(const std::map<NodeId, double>& m) {
    json j = json::object();
    for (const auto& [id, p] : m) j[std::to_string(id)] = p;
    return j;
}

json field_to_json(const Field& f) {
    return {{"simulated", f.simulated},
            {"preset", f.preset},
            {"seed", f.seed},
            {"hello_packets", f.hello_packets},
            {"campaigns", f.campaigns},
            {"cycle", f.channel ? f.channel->cycle() : 0}};
}

std::set<NodeId> id_set(const json& j, const char* key) {
    std::set<NodeId> out;
    if (!j.contains(key)) return out;
    if (!j.at(key).is_array()) throw HttpError(400, std::string("'") + key + "' must be an array");
    for (const auto& v : j.at(key)) out.insert(v.get<NodeId>());
    return out;
}

}  // namespace

struct Service::Impl {
    ServiceOptions opts;
    std::mutex registry_mu;
    std::map<std::string, std::shared_ptr<Entry>> sessions;
    std::uint64_t next_id = 1;
    httplib::Server server;
    std::atomic<bool> stopping{false};

    explicit Impl(ServiceOptions o) : opts(std::move(o)) {
        if (opts.snapshot_dir) {
            std::filesystem::create_directories(*opts.snapshot_dir);
            load_snapshots();
        }
        routes();
    }

    std::shared_ptr<Entry> find(const std::string& id) {
        std::lock_guard lk(registry_mu);
        const auto it = sessions.find(id);
        if (it == sessions.end()) throw HttpError(404, "unknown session '" + id + "'");
        return it->second;
    }

    void bind_field(Entry& e) {
        if (!e.field.simulated) return;
        std::map<NodeId, Point> pos;
        for (const auto& n : e.state.scenario.nodes) pos[n.id] = n.pos;
        auto params = fieldsim::load_channel(e.field.preset);
        params.seed = e.field.seed;
        e.field.channel.emplace(pos, params);
    }

    designer::CampaignProvider provider(Entry& e, const json& body) {
        if (e.field.simulated) {
            return [&e](const std::set<NodeId>& deployed) {
                return e.field.channel->hello_campaign(deployed, e.field.hello_packets, Exec::serial,
                                                      ++e.field.campaigns);
            };
        }
        if (!body.contains("trace"))
            throw HttpError(400, "external field: learn needs a 'trace' record array");
        fieldsim::GroundTruthChannel::Campaign c;
        for (const auto& r : body.at("trace"))
            c.trace.records.push_back({r.at("tx_id").get<NodeId>(), r.at("rx_id").get<NodeId>(),
                                       r.at("seq").get<long>(), r.at("rssi_dbm").get<double>(),
                                       r.value("time_ms", 0.0)});
        linkmodel::validate_trace(c.trace);
        c.sent = body.contains("meta") ? linkmodel::sent_counts_from_json(body.at("meta"))
                                       : linkmodel::infer_sent_counts(c.trace);
        return [c](const std::set<NodeId>&) { return c; };
    }

    void emit(Entry& e, json body) {
        {
            std::lock_guard lk(e.events_mu);
            const long seq = static_cast<long>(e.events.size()) + 1;
            body["seq"] = seq;
            e.events.push_back({seq, std::move(body)});
        }
        e.events_cv.notify_all();
    }

    void snapshot(const std::string& id, Entry& e) {
        if (!opts.snapshot_dir) return;
        json events = json::array();
        {
            std::lock_guard lk(e.events_mu);
            for (const auto& ev : e.events) events.push_back(ev.body);
        }
        json j = {{"id", id},
                  {"session", designer::session_to_json(e.state)},
                  {"field", field_to_json(e.field)},
                  {"events", events}};
        const auto path = *opts.snapshot_dir / (id + ".json");
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp);
            out << j.dump(2) << '\n';
        }
        std::filesystem::rename(tmp, path);
    }

    void load_snapshots() {
        for (const auto& f : std::filesystem::directory_iterator(*opts.snapshot_dir)) {
            if (f.path().extension() != ".json") continue;
            std::ifstream in(f.path());
            const json j = json::parse(in);
            auto e = std::make_shared<Entry>();
            e->state = designer::session_from_json(j.at("session"));
            e->state.exec = opts.exec;
            const auto& fj = j.at("field");
            e->field.simulated = fj.at("simulated").get<bool>();
            e->field.preset = fj.at("preset").get<std::string>();
            e->field.seed = fj.at("seed").get<std::uint64_t>();
            e->field.hello_packets = fj.at("hello_packets").get<int>();
            e->field.campaigns = fj.at("campaigns").get<std::uint64_t>();
            bind_field(*e);
            if (e->field.channel) e->field.channel->advance_cycles(fj.value("cycle", 0));
            for (const auto& ev : j.at("events")) e->events.push_back({ev.at("seq").get<long>(), ev});
            sessions[j.at("id").get<std::string>()] = e;
            next_id = std::max<std::uint64_t>(next_id, sessions.size() + 1);
        }
    }

    std::string new_id() {
        // Opaque but reproducible ids.
        while (true) {
            std::ostringstream s;
            s << 's' << std::hex << (derive_seed(0x5e55, next_id++) & 0xffffffffffffULL);
            if (!sessions.contains(s.str())) return s.str();
        }
    }

    Response create(const json& body) {
        if (!body.is_object() || !body.contains("scenario"))
            throw HttpError(400, "body must contain 'scenario'");
        DeploymentScenario sc;
        try {
            sc = body.at("scenario").get<DeploymentScenario>();
            if (body.contains("qos")) sc.qos = body.at("qos").get<qosmap::QoSSpec>();
            sc.validate();
        } catch (const std::exception& ex) {
            throw HttpError(400, ex.what());
        }
        auto e = std::make_shared<Entry>();
        const std::string preset = body.value("preset", std::string("indoor"));
        const bool external = body.value("field", std::string("simulated")) == "external";
        std::optional<linkmodel::LinkModel> model;
        try {
            if (body.contains("link_model"))
                model = body.at("link_model").get<linkmodel::LinkModel>();
            else if (!sc.link_model)
                model = fieldsim::preset_link_model(preset);
            e->state = designer::make_session(sc, model, opts.exec);
        } catch (const std::exception& ex) {
            throw HttpError(400, ex.what());
        }
        e->field.simulated = !external;
        e->field.preset = preset;
        e->field.seed = body.value("seed", std::uint64_t{1});
        e->field.hello_packets = body.value("hello_packets", 200);
        if (e->field.hello_packets < 1) throw HttpError(400, "hello_packets must be >= 1");
        try {
            bind_field(*e);
        } catch (const std::exception& ex) {
            throw HttpError(400, ex.what());
        }
        std::string id;
        {
            std::lock_guard lk(registry_mu);
            id = new_id();
            sessions[id] = e;
        }
        std::lock_guard cmd(e->command);
        emit(*e, {{"type", "created"}, {"phase", designer::to_string(e->state.phase)}});
        snapshot(id, *e);
        return {201,
                {{"id", id},
                 {"phase", designer::to_string(e->state.phase)},
                 {"h_max", e->state.h_max},
                 {"link_model", e->state.link_model},
                 {"field", field_to_json(e->field)}}};
    }

    Response get_graph(const std::string& id, const std::string& view) {
        auto e = find(id);
        std::lock_guard lk(e->command);
        const auto& s = e->state;
        topology::NetworkGraph g;
        if (view == "model") {
            g = topology::build_model_graph(s.scenario, s.link_model);
            for (NodeId d : s.deployed) g.node(d).deployed = true;
        } else if (view == "learnt") {
            g = topology::learnt_graph(s.graph);
        } else if (view == "hybrid" || view.empty()) {
            g = topology::hybrid_graph(s.graph);
        } else {
            throw HttpError(400, "view must be model, learnt or hybrid");
        }
        json j = g;
        j["view"] = view.empty() ? "hybrid" : view;
        return {200, j};
    }

    Response post_relays(const std::string& id, const json& body) {
        auto e = find(id);
        const auto add = id_set(body, "add");
        const auto remove = id_set(body, "remove");
        std::lock_guard lk(e->command);
        const auto before = e->state.graph;
        const auto n_log = e->state.iteration_log.size();
        try {
            designer::user_override(e->state, add, remove);
        } catch (const Error& ex) {
            throw HttpError(409, ex.what());
        }
        json records = json::array();
        for (auto i = n_log; i < e->state.iteration_log.size(); ++i)
            records.push_back(e->state.iteration_log[i]);
        const json delta = graph_delta(before, e->state.graph);
        emit(*e, {{"type", "relays"},
                  {"records", records},
                  {"phase", designer::to_string(e->state.phase)},
                  {"delta", delta}});
        snapshot(id, *e);
        return {200,
                {{"records", records},
                 {"deployed_relays", e->state.deployed_relays()},
                 {"delta", delta},
                 {"graph", topology::hybrid_graph(e->state.graph)}}};
    }

    Response post_step(const std::string& id, const json& body) {
        if (!body.is_object() || !body.contains("action")) throw HttpError(400, "body must contain 'action'");
        const std::string action = body.at("action").get<std::string>();
        auto e = find(id);
        std::lock_guard lk(e->command);
        auto& s = e->state;
        const auto before = s.graph;
        const auto n_log = s.iteration_log.size();
        bool ok = true;
        try {
            if (body.contains("advance_cycles")) {
                if (!e->field.channel) throw HttpError(400, "advance_cycles needs a simulated field");
                e->field.channel->advance_cycles(body.at("advance_cycles").get<int>());
            }
            if (action == "design") {
                ok = designer::initial_design(s);
            } else if (action == "learn") {
                designer::learn_links(s, provider(*e, body));
            } else if (action == "evaluate") {
                ok = designer::evaluate(s);
            } else if (action == "augment") {
                ok = designer::augment(s);
            } else if (action == "finalize") {
                designer::finalize(s);
            } else if (action == "repair") {
                if (!body.contains("windowed_pdel"))
                    throw HttpError(400, "repair needs 'windowed_pdel' per source");
                std::map<NodeId, double> w;
                for (const auto& [k, v] : body.at("windowed_pdel").items()) w[std::stoi(k)] = v.get<double>();
                ok = designer::repair(s, provider(*e, body), w);
            } else {
                throw HttpError(400, "unknown action '" + action + "'");
            }
        } catch (const HttpError&) {
            throw;
        } catch (const json::exception& ex) {
            throw HttpError(400, ex.what());
        } catch (const Error& ex) {
            throw HttpError(409, ex.what());
        }
        json records = json::array();
        for (auto i = n_log; i < s.iteration_log.size(); ++i) records.push_back(s.iteration_log[i]);
        const json delta = graph_delta(before, s.graph);
        json result = {{"action", action},
                       {"ok", ok},
                       {"records", records},
                       {"phase", designer::to_string(s.phase)},
                       {"declared_infeasible", s.declared_infeasible},
                       {"per_source_pdel_predicted", pdel_json(designer::best_route_pdel(s))},
                       {"delta", delta}};
        if (!ok && action == "evaluate") result["hint"] = "augment";
        emit(*e, {{"type", "step"},
                  {"action", action},
                  {"records", records},
                  {"phase", designer::to_string(s.phase)},
                  {"delta", delta}});
        snapshot(id, *e);
        return {200, result};
    }

    Response get_metrics(const std::string& id) {
        auto e = find(id);
        std::lock_guard lk(e->command);
        const auto& s = e->state;
        long n_events = 0;
        {
            std::lock_guard ek(e->events_mu);
            n_events = static_cast<long>(e->events.size());
        }
        json j = {{"phase", designer::to_string(s.phase)},
                  {"h_max", s.h_max},
                  {"k", s.qos.k},
                  {"p_del_target", s.qos.p_del},
                  {"iterations", designer::iterations_run(s)},
                  {"log_length", s.iteration_log.size()},
                  {"deployed_relays", s.deployed_relays()},
                  {"declared_infeasible", s.declared_infeasible},
                  {"per_source_pdel_predicted", pdel_json(designer::best_route_pdel(s))},
                  {"events", n_events},
                  {"field", field_to_json(e->field)}};
        j["design"] = s.current_design ? json(*s.current_design) : json();
        return {200, j};
    }

    Response get_events(const std::string& id, long since) {
        auto e = find(id);
        std::lock_guard lk(e->events_mu);
        json out = json::array();
        for (const auto& ev : e->events)
            if (ev.seq > since) out.push_back(ev.body);
        return {200, out};
    }

    bool authorized(const httplib::Request& req) const {
        if (!opts.token) return true;
        return req.get_header_value("Authorization") == "Bearer " + *opts.token;
    }

    template <class F>
    void wrap(const httplib::Request& req, httplib::Response& res, F f) {
        Response r;
        if (!authorized(req)) {
            r = error_response(401, "missing or wrong token");
        } else {
            try {
                r = f();
            } catch (const HttpError& ex) {
                r = error_response(ex.status, ex.what());
            } catch (const json::exception& ex) {
                r = error_response(400, ex.what());
            } catch (const std::exception& ex) {
                r = error_response(500, ex.what());
            }
        }
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }

    static json parse_body(const httplib::Request& req) {
        try {
            return req.body.empty() ? json::object() : json::parse(req.body);
        } catch (const json::exception& ex) {
            throw HttpError(400, std::string("malformed JSON: ") + ex.what());
        }
    }

    void stream_events(const std::string& id, long since, httplib::Response& res) {
        auto e = find(id);
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream", [this, e, since](std::size_t, httplib::DataSink& sink) mutable {
                std::unique_lock lk(e->events_mu);
                e->events_cv.wait_for(lk, std::chrono::milliseconds(250), [&] {
                    return stopping.load() || static_cast<long>(e->events.size()) > since;
                });
                if (stopping) {
                    sink.done();
                    return true;
                }
                std::string chunk;
                for (const auto& ev : e->events) {
                    if (ev.seq <= since) continue;
                    chunk += "id: " + std::to_string(ev.seq) + "\nevent: " +
                             ev.body.value("type", std::string("event")) + "\ndata: " + ev.body.dump() +
                             "\n\n";
                    since = ev.seq;
                }
                lk.unlock();
                if (chunk.empty()) chunk = ": keep-alive\n\n";
                return sink.write(chunk.data(), chunk.size());
            });
    }

    void routes() {
        server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            wrap(req, res, [&] { return create(parse_body(req)); });
        });
        server.Get(R"(/sessions/([^/]+)/graph)", [this](const httplib::Request& req, httplib::Response& res) {
            wrap(req, res, [&] {
                return get_graph(req.matches[1], req.has_param("view") ? req.get_param_value("view") : "");
            });
        });
        server.Post(R"(/sessions/([^/]+)/relays)", [this](const httplib::Request& req, httplib::Response& res) {
            wrap(req, res, [&] { return post_relays(req.matches[1], parse_body(req)); });
        });
        server.Post(R"(/sessions/([^/]+)/step)", [this](const httplib::Request& req, httplib::Response& res) {
            wrap(req, res, [&] { return post_step(req.matches[1], parse_body(req)); });
        });
        server.Get(R"(/sessions/([^/]+)/metrics)", [this](const httplib::Request& req, httplib::Response& res) {
            wrap(req, res, [&] { return get_metrics(req.matches[1]); });
        });
        server.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
            if (!authorized(req)) {
                res.status = 401;
                res.set_content(json{{"error", "missing or wrong token"}}.dump(), "application/json");
                return;
            }
            const std::string id = req.matches[1];
            if (req.has_param("since")) {
                wrap(req, res, [&] { return get_events(id, std::stol(req.get_param_value("since"))); });
                return;
            }
            long since = 0;
            if (req.has_header("Last-Event-ID")) since = std::stol(req.get_header_value("Last-Event-ID"));
            try {
                stream_events(id, since, res);
            } catch (const HttpError& ex) {
                res.status = ex.status;
                res.set_content(json{{"error", ex.what()}}.dump(), "application/json");
            }
        });
    }
};

Service::Service(ServiceOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}

Service::~Service() { stop(); }

template <class F>
static Response guarded(F f) {
    try {
        return f();
    } catch (const HttpError& ex) {
        return error_response(ex.status, ex.what());
    } catch (const nlohmann::json::exception& ex) {
        return error_response(400, ex.what());
    }
}

Response Service::create_session(const nlohmann::json& body) {
    return guarded([&] { return impl_->create(body); });
}
Response Service::graph(const std::string& id, const std::string& view) {
    return guarded([&] { return impl_->get_graph(id, view); });
}
Response Service::relays(const std::string& id, const nlohmann::json& body) {
    return guarded([&] { return impl_->post_relays(id, body); });
}
Response Service::step(const std::string& id, const nlohmann::json& body) {
    return guarded([&] { return impl_->post_step(id, body); });
}
Response Service::metrics(const std::string& id) {
    return guarded([&] { return impl_->get_metrics(id); });
}
Response Service::events_since(const std::string& id, long since) {
    return guarded([&] { return impl_->get_events(id, since); });
}

bool Service::listen() { return impl_->server.listen(impl_->opts.host, impl_->opts.port); }
int Service::bind_any_port() { return impl_->server.bind_to_any_port(impl_->opts.host); }
bool Service::listen_after_bind() { return impl_->server.listen_after_bind(); }
void Service::wait_until_ready() { impl_->server.wait_until_ready(); }

void Service::stop() {
    if (!impl_) return;
    impl_->stopping = true;
    {
        std::lock_guard lk(impl_->registry_mu);
        for (auto& [id, e] : impl_->sessions) e->events_cv.notify_all();
    }
    if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace relaynet::service
