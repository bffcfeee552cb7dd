#include "relaynet/scenario.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace relaynet {

std::string to_string(Role r) {
    switch (r) {
        case Role::source: return "source";
        case Role::potential_relay: return "potential_relay";
        case Role::sink: return "sink";
    }
    return "?";
}

Role role_from_string(const std::string& s) {
    if (s == "source") return Role::source;
    if (s == "potential_relay" || s == "relay") return Role::potential_relay;
    if (s == "sink") return Role::sink;
    throw Error("unknown node role '" + s + "'");
}

void DeploymentScenario::validate() const {
    std::set<NodeId> ids;
    int sinks = 0;
    int srcs = 0;
    for (const auto& n : nodes) {
        if (!ids.insert(n.id).second) throw Error("scenario: duplicate node id " + std::to_string(n.id));
        if (!std::isfinite(n.pos.x) || !std::isfinite(n.pos.y))
            throw Error("scenario: non-finite node position");
        sinks += n.role == Role::sink;
        srcs += n.role == Role::source;
    }
    if (sinks != 1) throw Error("scenario: exactly one sink required");
    if (srcs < 1) throw Error("scenario: at least one source required");
    qos.validate();
    if (link_model) link_model->validate();
}

const ScenarioNode& DeploymentScenario::node(NodeId id) const {
    for (const auto& n : nodes)
        if (n.id == id) return n;
    throw Error("scenario: unknown node id " + std::to_string(id));
}

NodeId DeploymentScenario::sink() const {
    for (const auto& n : nodes)
        if (n.role == Role::sink) return n.id;
    throw Error("scenario: no sink");
}

std::vector<NodeId> DeploymentScenario::sources() const {
    std::vector<NodeId> out;
    for (const auto& n : nodes)
        if (n.role == Role::source) out.push_back(n.id);
    return out;
}

std::vector<NodeId> DeploymentScenario::potential_relays() const {
    std::vector<NodeId> out;
    for (const auto& n : nodes)
        if (n.role == Role::potential_relay) out.push_back(n.id);
    return out;
}

void to_json(nlohmann::json& j, const DeploymentScenario& s) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : s.nodes)
        nodes.push_back({{"id", n.id}, {"x_m", n.pos.x}, {"y_m", n.pos.y}, {"role", to_string(n.role)}});
    j = {{"nodes", nodes}, {"qos", s.qos}};
    if (s.link_model)
        j["link_model"] = *s.link_model;
    else
        j["link_model"] = "estimate";
}

void from_json(const nlohmann::json& j, DeploymentScenario& s) {
    s = {};
    for (const auto& n : j.at("nodes"))
        s.nodes.push_back({n.at("id").get<NodeId>(),
                           {n.at("x_m").get<double>(), n.at("y_m").get<double>()},
                           role_from_string(n.at("role").get<std::string>())});
    if (j.contains("qos")) s.qos = j.at("qos").get<qosmap::QoSSpec>();
    if (j.contains("link_model") && j.at("link_model").is_object())
        s.link_model = j.at("link_model").get<linkmodel::LinkModel>();
    s.validate();
}

DeploymentScenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scenario file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("scenario " + path + ": " + e.what());
    }
    return j.get<DeploymentScenario>();
}

}  // namespace relaynet
