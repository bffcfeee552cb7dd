#pragma once

// Field-interactive iterative design loop: initial design, link learning,
// evaluation, augmentation, finalize, and post-deployment repair.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "relaynet/fieldsim.hpp"
#include "relaynet/linkmodel.hpp"
#include "relaynet/qosmap.hpp"
#include "relaynet/scenario.hpp"
#include "relaynet/topology.hpp"

namespace relaynet::designer {

enum class Phase { designing, operating, repairing };
enum class Action { initial, learn, evaluate, augment, user_override, finalize, repair };

std::string to_string(Phase p);
std::string to_string(Action a);
Phase phase_from_string(const std::string& s);
Action action_from_string(const std::string& s);

struct IterationRecord {
    int index = 0;
    Action action = Action::initial;
    std::set<NodeId> relays_added;
    std::set<NodeId> relays_removed;
    bool feasible = false;
    std::map<NodeId, double> per_source_pdel_predicted;
    std::string note;

    friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct SessionState {
    DeploymentScenario scenario;
    linkmodel::LinkModel link_model;
    qosmap::QoSSpec qos;
    int h_max = 0;
    topology::NetworkGraph graph;
    std::set<NodeId> deployed;  // sources, sink and deployed relays
    std::optional<topology::Design> current_design;
    std::vector<IterationRecord> iteration_log;
    Phase phase = Phase::designing;
    bool declared_infeasible = false;
    Exec exec = Exec::parallel;

    std::set<NodeId> deployed_relays() const;
};

/// Anything that can run a hello campaign over a set of deployed nodes.
using CampaignProvider =
    std::function<fieldsim::GroundTruthChannel::Campaign(const std::set<NodeId>& deployed)>;

/// Campaign provider over a ground-truth channel. Each call uses a fresh
/// nonce so repeated campaigns within one drift cycle are independent.
class ChannelField {
public:
    ChannelField(fieldsim::GroundTruthChannel& channel, int n_packets, Exec exec = Exec::parallel);
    fieldsim::GroundTruthChannel::Campaign operator()(const std::set<NodeId>& deployed);
    fieldsim::GroundTruthChannel& channel() { return *channel_; }

private:
    fieldsim::GroundTruthChannel* channel_;
    int n_packets_;
    Exec exec_;
    std::uint64_t campaigns_ = 0;
};

/// Session over a validated scenario. The link model comes from the
/// scenario unless one is passed. h_max is fixed here from qosmap.
SessionState make_session(const DeploymentScenario& scenario,
                          const std::optional<linkmodel::LinkModel>& model = std::nullopt,
                          Exec exec = Exec::parallel);

/// Model-graph design; marks suggested relays plus sources and sink as
/// deployed. Returns false (and logs an infeasible record) when no design
/// exists; the session then stays in `designing`.
bool initial_design(SessionState& s);

/// Relearns every deployed pair and overrides their edges with learnt
/// provenance.
void learn_links(SessionState& s, const CampaignProvider& field);

/// Design on learnt-good links between deployed nodes. While repairing,
/// deployed relays are free and never pruned, and success returns the
/// session to `operating`.
bool evaluate(SessionState& s);

/// Adds the relays the hybrid graph needs. Returns false when none can help.
bool augment(SessionState& s);

/// Removes deployed relays the current design does not use; enters
/// `operating`.
void finalize(SessionState& s);

/// Manual relay placement/removal while designing. Throws Error when a
/// removal would orphan a route of the current design or an id is not a
/// potential relay.
void user_override(SessionState& s, const std::set<NodeId>& add, const std::set<NodeId>& remove);

/// learn -> evaluate -> (augment -> learn -> evaluate)* -> finalize.
/// `max_iterations` <= 0 means the number of potential relay locations.
std::optional<topology::Design> iterate_until_feasible(SessionState& s,
                                                       const CampaignProvider& field,
                                                       int max_iterations = 0);

/// Number of learn+evaluate rounds recorded so far.
int iterations_run(const SessionState& s);

/// Predicted delay-bounded delivery of one route from the graph's learnt
/// outages (unmeasured edges count as outage-free).
double predicted_route_pdel(const SessionState& s, const topology::Path& route,
                            const qosmap::InTimeTable& table);
/// Per source, per route of the current design.
std::map<NodeId, std::vector<double>> route_pdel(const SessionState& s);
/// Per source, the best route's prediction.
std::map<NodeId, double> best_route_pdel(const SessionState& s);

/// Enters `repairing` and logs the trigger.
void start_repair(SessionState& s, const std::string& reason);
/// learn -> evaluate -> (augment -> learn -> evaluate)* keeping every
/// deployed relay. Returns false (phase stays `repairing`) when infeasible.
bool complete_repair(SessionState& s, const CampaignProvider& field);

/// Operating-phase repair. `windowed_pdel` holds each source's latest
/// windowed delivery estimate; throws Error unless some source is below the
/// QoS target.
bool repair(SessionState& s, const CampaignProvider& field,
            const std::map<NodeId, double>& windowed_pdel);

/// Re-executes a recorded log against a field and returns the new session.
SessionState replay(const DeploymentScenario& scenario,
                    const std::optional<linkmodel::LinkModel>& model,
                    const std::vector<IterationRecord>& log, const CampaignProvider& field,
                    Exec exec = Exec::parallel);

// ---- robustness -----------------------------------------------------------

struct RobustnessFixture {
    DeploymentScenario base;  // every location as potential relay, plus the sink
    std::vector<std::vector<NodeId>> source_sets;
};

struct RobustnessRow {
    int set_index = 0;
    std::vector<NodeId> sources;
    std::set<NodeId> initial_relays;
    std::vector<int> augmentation_cycles;
    std::set<NodeId> final_relays;
    int redesign_count = 0;
    bool infeasible = false;

    friend bool operator==(const RobustnessRow&, const RobustnessRow&) = default;
};

struct RobustnessReport {
    int k = 1;
    int n_cycles = 40;
    double trigger_pdel = 0.73;
    std::uint64_t seed = 1;
    std::vector<RobustnessRow> rows;

    int total_redesigns() const;
    int sets_without_augmentation() const;
    friend bool operator==(const RobustnessReport&, const RobustnessReport&) = default;
};

struct RobustnessOptions {
    int k = 1;
    int n_cycles = 40;
    double trigger_pdel = 0.73;
    std::uint64_t seed = 1;
    int hello_packets = 200;
    fieldsim::ChannelParams channel = fieldsim::preset("indoor");
    Exec exec = Exec::parallel;
};

/// Each source set gets its own channel replica seeded from
/// (seed, set index); sets run in parallel.
RobustnessReport robustness_experiment(const RobustnessFixture& fixture,
                                       const RobustnessOptions& opts);

/// Renders the report as a plain-text table.
std::string render_table(const RobustnessReport& r);

// ---- serialization --------------------------------------------------------

void to_json(nlohmann::json& j, const IterationRecord& r);
void from_json(const nlohmann::json& j, IterationRecord& r);
nlohmann::json session_to_json(const SessionState& s);
SessionState session_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const RobustnessReport& r);

}  // namespace relaynet::designer
