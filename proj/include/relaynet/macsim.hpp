#pragma once

// Packet-level discrete-event simulation of beaconless (unslotted) CSMA/CA
// over a designed network, driven by the ground-truth channel.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "relaynet/fieldsim.hpp"
#include "relaynet/qosmap.hpp"
#include "relaynet/topology.hpp"

namespace relaynet::fieldsim {

struct WindowStat {
    int window_index = 0;
    int packets_sent = 0;
    int packets_delivered_in_time = 0;
    double p_del_hat = 0.0;

    friend bool operator==(const WindowStat&, const WindowStat&) = default;
};

struct SourceDelivery {
    long generated = 0;
    long delivered = 0;
    long delivered_in_time = 0;
    std::vector<WindowStat> windows;  // complete windows only

    double p_del_hat() const {
        return generated == 0 ? 0.0 : static_cast<double>(delivered_in_time) / generated;
    }
    friend bool operator==(const SourceDelivery&, const SourceDelivery&) = default;
};

struct DeliveryLog {
    int window_size = 100;
    std::map<NodeId, SourceDelivery> per_source;

    friend bool operator==(const DeliveryLog&, const DeliveryLog&) = default;
};

struct MacSimOptions {
    double duration_s = 3600.0;     // arrivals stop here, the network then drains
    double rssi_min_dbm = -88.0;
    double q_max = 0.05;
    double r_max_m = 8.0;
    double carrier_sense_factor = 1.5;  // CS range = r_max_m * factor
    int window_size = 100;
    std::uint64_t seed = 1;
    qosmap::MacParams mac;
    /// Index into each source's route list; sources absent use route 0.
    std::map<NodeId, int> active_route;
};

/// Poisson arrivals at `arrival_rate_per_source` on every source's active
/// route, FIFO queues at every node, up to `mac.max_tx_attempts` attempts per
/// hop. A packet counts as in time when it reaches the sink within
/// `qos.d_max_ms` of its generation.
DeliveryLog run_mac_sim(const topology::Design& design, const GroundTruthChannel& channel,
                        double arrival_rate_per_source, const qosmap::QoSSpec& qos,
                        const MacSimOptions& opts = {});

/// Largest per-source rate in [lo, hi] at which every source's overall
/// in-time delivery ratio stays >= qos.p_del, by bisection. nullopt when
/// even `lo` fails.
std::optional<double> lambda_max(const topology::Design& design, const GroundTruthChannel& channel,
                                 const qosmap::QoSSpec& qos, const MacSimOptions& opts, double lo,
                                 double hi, int iterations = 12);

/// One hop of a lone packet (no contention): outcome and elapsed time.
struct LoneHop {
    bool delivered = false;
    int attempts = 0;
    std::int64_t elapsed_us = 0;
};
LoneHop simulate_lone_hop(const GroundTruthChannel& channel, NodeId tx, NodeId rx,
                          double rssi_min_dbm, double q_max, const qosmap::MacParams& mac,
                          std::mt19937_64& rng);

void to_json(nlohmann::json& j, const DeliveryLog& log);
void from_json(const nlohmann::json& j, DeliveryLog& log);
/// Header `source_id,window_index,packets_sent,packets_delivered_in_time,p_del_hat`.
void write_delivery_csv(std::ostream& out, const DeliveryLog& log);

}  // namespace relaynet::fieldsim
