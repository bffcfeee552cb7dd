#pragma once

// Minimum-relay, hop-constrained, k-node-disjoint rooted Steiner network
// design over a graph of modeled and field-learnt links.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "relaynet/common.hpp"
#include "relaynet/linkmodel.hpp"
#include "relaynet/scenario.hpp"

namespace relaynet::topology {

enum class Provenance { modeled, learnt_good, learnt_bad };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct GraphNode {
    NodeId id = 0;
    Point pos;
    Role role = Role::potential_relay;
    bool deployed = false;
};

struct Edge {
    NodeId a = 0;  // a < b
    NodeId b = 0;
    Provenance provenance = Provenance::modeled;
    std::optional<double> p_out_hat;

    bool traversable() const { return provenance != Provenance::learnt_bad; }
};

class NetworkGraph {
public:
    NetworkGraph() = default;
    explicit NetworkGraph(std::vector<GraphNode> nodes);

    const std::vector<GraphNode>& nodes() const { return nodes_; }
    const std::map<PairKey, Edge>& edges() const { return edges_; }

    bool has_node(NodeId id) const { return index_.contains(id); }
    const GraphNode& node(NodeId id) const;
    GraphNode& node(NodeId id);
    NodeId sink() const;
    std::vector<NodeId> sources() const;
    std::vector<NodeId> potential_relays() const;
    std::set<NodeId> deployed() const;

    /// Learnt provenance overrides modeled; a modeled record never
    /// replaces a learnt one.
    void set_edge(const Edge& e);
    void remove_edge(NodeId a, NodeId b);
    const Edge* edge(NodeId a, NodeId b) const;
    bool traversable(NodeId a, NodeId b) const;

    /// Throws Error when an invariant fails (sink count, edge endpoints).
    void validate() const;

private:
    std::vector<GraphNode> nodes_;
    std::map<NodeId, std::size_t> index_;
    std::map<PairKey, Edge> edges_;
};

using Path = std::vector<NodeId>;  // source ... sink

struct Design {
    std::set<NodeId> relays_used;
    std::map<NodeId, std::vector<Path>> routes;
    int h_max = 0;

    friend bool operator==(const Design&, const Design&) = default;
};

NetworkGraph build_model_graph(const DeploymentScenario& scenario,
                               const linkmodel::LinkModel& model);

/// Learnt edges among deployed pairs (bad ones dropped) plus modeled edges
/// with at least one undeployed endpoint.
NetworkGraph hybrid_graph(const NetworkGraph& g);

/// Learnt-good edges among deployed nodes only; undeployed nodes removed.
NetworkGraph learnt_graph(const NetworkGraph& g);

/// Per-node relay cost; nodes absent from the map are not usable as
/// intermediates unless they are sources (always usable at cost 0).
using RelayCost = std::map<NodeId, int>;

struct SolverStats {
    int flow_solves = 0;
    bool exhausted = false;  // branch budget hit before proving optimality
};

/// k node-disjoint source->sink paths of at most h_max hops minimizing the
/// number of cost-1 relays used (hop count breaks ties). nullopt when no
/// such path set exists.
std::optional<std::vector<Path>> hop_bounded_disjoint_paths(
    const NetworkGraph& g, NodeId source, int k, int h_max, const RelayCost& relay_cost,
    const std::set<NodeId>& forbidden = {}, SolverStats* stats = nullptr);

struct DesignOptions {
    /// Relays that cost nothing and are never pruned (already deployed).
    std::set<NodeId> free_relays;
    /// Restricts usable relays; nullopt means every potential relay.
    std::optional<std::set<NodeId>> candidate_relays;
    Exec exec = Exec::parallel;
};

/// Greedy initial solution (farthest source first, zero-cost reuse of
/// selected relays) followed by sequential relay pruning.
std::optional<Design> extract_design(const NetworkGraph& g, int h_max, int k,
                                     const DesignOptions& opts = {});

/// Design restricted to learnt-good links between deployed nodes.
std::optional<Design> evaluate_learnt(const NetworkGraph& g, int h_max, int k,
                                      Exec exec = Exec::parallel);

/// Additional relay locations needed on the hybrid graph (deployed relays
/// are free). Returns the design alongside the additions.
struct Augmentation {
    std::set<NodeId> additional_relays;
    Design design;
};
std::optional<Augmentation> augment(const NetworkGraph& g, int h_max, int k,
                                    Exec exec = Exec::parallel);

/// Independent checker of every Design invariant against a graph. Returns
/// human-readable violations; empty means valid.
std::vector<std::string> validate_design(const NetworkGraph& g, const Design& d, int k);

/// Number of route appearances of each relay in the design.
std::map<NodeId, int> traversal_counts(const Design& d, const NetworkGraph& g);

void to_json(nlohmann::json& j, const NetworkGraph& g);
void from_json(const nlohmann::json& j, NetworkGraph& g);
void to_json(nlohmann::json& j, const Design& d);
void from_json(const nlohmann::json& j, Design& d);

}  // namespace relaynet::topology
