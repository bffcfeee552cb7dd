#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "relaynet/common.hpp"
#include "relaynet/linkmodel.hpp"
#include "relaynet/qosmap.hpp"

namespace relaynet {

enum class Role { source, potential_relay, sink };

std::string to_string(Role r);
Role role_from_string(const std::string& s);

struct ScenarioNode {
    NodeId id = 0;
    Point pos;
    Role role = Role::potential_relay;
};

/// A design problem instance: node locations with roles plus QoS targets.
/// `link_model` is nullopt when the scenario asks for estimation.
struct DeploymentScenario {
    std::vector<ScenarioNode> nodes;
    qosmap::QoSSpec qos;
    std::optional<linkmodel::LinkModel> link_model;

    /// Throws Error on duplicate ids, sink count != 1, or no source.
    void validate() const;

    const ScenarioNode& node(NodeId id) const;
    NodeId sink() const;
    std::vector<NodeId> sources() const;
    std::vector<NodeId> potential_relays() const;
};

void to_json(nlohmann::json& j, const DeploymentScenario& s);
void from_json(const nlohmann::json& j, DeploymentScenario& s);

DeploymentScenario load_scenario(const std::string& path);

}  // namespace relaynet
