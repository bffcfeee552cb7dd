#pragma once

// Seeded experiment fixtures shared by the CLI, tests and acceptance runs.

#include <cstdint>
#include <map>
#include <vector>

#include "relaynet/designer.hpp"
#include "relaynet/fieldsim.hpp"
#include "relaynet/routing.hpp"
#include "relaynet/scenario.hpp"
#include "relaynet/topology.hpp"

namespace relaynet::fixtures {

/// Channel whose good/bad boundary sits just beyond `r_max_m`: no
/// shadowing, mild fading, so every modeled link is good in the field.
fieldsim::ChannelParams model_consistent_channel(double r_max_m, double p_out_target,
                                                 std::uint64_t seed);

/// Indoor-floor layout: 24 locations on a jittered 6 x 4 grid (5 m pitch)
/// plus a sink near one end, with 10 source sets of 4 locations each.
designer::RobustnessFixture robustness_fixture();

struct ConvergenceInstance {
    DeploymentScenario scenario;
    fieldsim::ChannelParams channel;
    std::vector<PairKey> forced_bad;  // modeled pairs blocked in the field
};

/// Random geometric scenario where `bad_fraction` of the modeled links are
/// blocked (shadowing forced to -40 dB) in an otherwise model-consistent
/// field.
ConvergenceInstance convergence_instance(std::uint64_t seed, double bad_fraction = 0.2);

/// Ground truth for a convergence instance with the blocks applied.
fieldsim::GroundTruthChannel make_channel(const ConvergenceInstance& inst);

struct MacLineFixture {
    std::map<NodeId, Point> positions;
    topology::Design design;
    fieldsim::ChannelParams channel;
};

/// `n_sources` sources sharing a relay chain of `hops` hops at 5 m spacing;
/// links are outage-free.
MacLineFixture mac_line_fixture(int hops, int n_sources = 1);

/// Line scenario: sink at 0, `n_relays` potential relays every `spacing_m`,
/// one source at the far end.
DeploymentScenario line_scenario(int n_relays, double spacing_m, double r_max_m);

struct RplFixture {
    DeploymentScenario scenario;
    fieldsim::ChannelParams channel;
    std::vector<routing::ChannelEvent> events;  // applied during operation
    std::vector<std::pair<PairKey, double>> initial_shadowing;  // forced before design
    std::optional<NodeId> affected_source;
    double sever_at_s = 0.0;
};

/// Nine nodes on a 6 m grid (sink in a corner, two sources), k = 2,
/// drifting field.
RplFixture rpl_k2_fixture(std::uint64_t seed);

/// k = 1: two sources share one relay. At `sever_at_s` the affected
/// source's only parent link dies while a previously blocked link to the
/// other source becomes good.
RplFixture rpl_sever_fixture(std::uint64_t seed);

struct RplComparison {
    topology::Design design;
    topology::NetworkGraph graph;  // learnt graph state after design
    routing::ProtocolWindows rpl;
    routing::ProtocolWindows static_routes;
    bool truth_path_after_events = false;  // for the affected source
};

/// Designs the fixture through the iterative loop, then operates it with
/// both protocols over identically seeded copies of the field.
RplComparison run_rpl_comparison(const RplFixture& f, routing::OperateConfig cfg);

}  // namespace relaynet::fixtures
