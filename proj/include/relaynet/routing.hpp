#pragma once

// Operating a designed network: static k-route forwarding with periodic
// traceroute, an RPL-like dynamic routing simulator with EWMA link
// estimation, and windowed repair triggers.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "relaynet/fieldsim.hpp"
#include "relaynet/qosmap.hpp"
#include "relaynet/topology.hpp"

namespace relaynet::routing {

inline constexpr double kEstimateFloor = 1e-4;

/// (1 - alpha) * window_per + alpha * previous, clamped to [1e-4, 1].
double ewma_update(double previous, double window_per, double alpha = 0.5);

struct RplNodeState {
    NodeId node_id = 0;
    std::set<NodeId> potential_parents;
    std::map<NodeId, double> link_estimate;  // q-hat per parent, absent = 1
    double rank = kInf;
    std::optional<NodeId> preferred_parent;
    double lowest_rank = kInf;  // lowest rank held since the node last attached
};

struct RankUpdate {
    RplNodeState state;
    bool changed = false;
};

/// Link cost -ln(1 - q); infinite at q = 1.
double link_cost(double q_hat);

/// Parent choice minimizing rank(p) - ln(1 - q_p) among parents whose rank
/// is below the node's current rank. Detaches (rank = inf, no parent) when
/// nothing is eligible or the rank would exceed the lowest rank held since
/// attaching by more than `max_rank_increase`.
RankUpdate recompute_rank_and_parent(const RplNodeState& node,
                                     const std::map<NodeId, double>& neighbor_ranks,
                                     double max_rank_increase = kInf);

struct StaticRouteState {
    std::vector<topology::Path> routes;
    int active_index = 0;
    double last_traceroute_s = 0.0;
    bool delivery_failed = false;
};

inline constexpr double kTraceroutePeriodS = 150.0;

/// Probes the active route when a traceroute epoch is due; on failure
/// switches round-robin to the next route that probes healthy. With a single
/// route nothing is ever probed.
StaticRouteState static_route_step(const StaticRouteState& state, double t_s,
                                   const std::function<bool(const topology::Path&)>& probe,
                                   double period_s = kTraceroutePeriodS);

/// Repair policy: number of further violating windows tolerated after the
/// first one.
struct TriggerPolicy {
    int wait_windows = 1;
};
inline constexpr TriggerPolicy kPolicyA{1};
/// ceil(140 / 100): seven 20-packet estimation windows expressed in
/// 100-packet delivery windows.
inline constexpr TriggerPolicy kPolicyB{2};

enum class TriggerDecision { hold, trigger };

/// Triggers iff the trailing run of windows below `target` is longer than
/// the policy's wait.
TriggerDecision repair_trigger_check(const std::vector<double>& windows, double target,
                                     TriggerPolicy policy);

// ---- simulation -----------------------------------------------------------

struct ChannelEvent {
    double at_s = 0.0;
    NodeId a = 0;
    NodeId b = 0;
    double shadow_db = 0.0;  // new static shadowing for the pair
};

struct OperateConfig {
    double duration_s = 24 * 3600.0;
    double data_period_s = 15.0;
    double dao_period_s = 15.0;
    double drift_period_s = 3600.0;  // one channel drift step per period
    double traceroute_period_s = kTraceroutePeriodS;
    int per_window_attempts = 20;
    double alpha = 0.5;
    double max_rank_increase = 0.5;
    int delivery_window = 100;
    double rssi_min_dbm = -88.0;
    double q_max = 0.05;
    qosmap::QoSSpec qos;
    qosmap::MacParams mac;
    std::uint64_t seed = 1;
    std::vector<ChannelEvent> events;
};

struct ProtocolWindows {
    std::string protocol;
    std::map<NodeId, std::vector<double>> p_del_hat;  // per source, per window
    long rank_violations = 0;  // attached nodes whose rank <= their parent's
    std::set<std::pair<NodeId, NodeId>> links_used;     // carried data or DAO
    std::set<std::pair<NodeId, NodeId>> links_updated;  // estimate changed

    double mean(NodeId source) const;
    double mean() const;
};

/// RPL-like operation over `graph` (learnt-good edges among deployed nodes
/// define potential parents). The channel is copied; `events` and drift
/// are applied to the copy.
ProtocolWindows simulate_rpl(const topology::NetworkGraph& graph,
                             const fieldsim::GroundTruthChannel& channel,
                             const OperateConfig& cfg);

/// Static source routing over the design's k routes.
ProtocolWindows simulate_static(const topology::Design& design,
                                const fieldsim::GroundTruthChannel& channel,
                                const OperateConfig& cfg);

/// Learnt-quality graph from the channel's analytic outage at the current
/// state, restricted to `nodes`.
topology::NetworkGraph ground_truth_graph(const topology::NetworkGraph& layout,
                                          const fieldsim::GroundTruthChannel& channel,
                                          const std::set<NodeId>& nodes, double rssi_min_dbm,
                                          double p_out_target);

/// True when `source` has a route of at most h_max hops in the ground
/// truth whose predicted delivery meets qos.p_del; the route is checked by
/// the independent Design validator.
bool qos_path_exists(const topology::NetworkGraph& truth, NodeId source, int h_max,
                     const qosmap::QoSSpec& qos, double q_max);

/// Header `window_index,source_id,p_del_hat,protocol`.
void write_windows_csv(std::ostream& out, const std::vector<ProtocolWindows>& runs);
void to_json(nlohmann::json& j, const ProtocolWindows& w);

}  // namespace relaynet::routing
