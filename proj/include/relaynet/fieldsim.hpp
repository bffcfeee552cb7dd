#pragma once

// Simulated ground-truth radio field. Answers hello-packet link-learning
// campaigns, drifts slowly between learning cycles, and feeds the packet
// level MAC simulator.

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "relaynet/common.hpp"
#include "relaynet/linkmodel.hpp"
#include "relaynet/scenario.hpp"

namespace relaynet::fieldsim {

struct ChannelParams {
    std::string name = "custom";
    double tx_power_dbm = 0.0;
    double pl0_db = 40.0;
    double ref_dist_m = 1.0;
    double path_loss_exp = 3.0;
    double shadow_sigma_db = 4.0;
    double fast_sigma_db = 3.0;
    double drift_rho = 0.9;
    double drift_sigma_db = 0.0;
    double sensitivity_floor_dbm = -100.0;
    // PER below RSSI_min grows linearly from q_max at this rate per dB.
    double per_slope_per_db = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Named presets: "indoor" and "yard". Throws on unknown names.
ChannelParams preset(const std::string& name);

/// Link model chosen for a preset's environment: indoor R_max = 8 m at
/// P_out = 0.04, yard R_max = 30 m at P_out = 0.004, both at P_bad = 0.2.
linkmodel::LinkModel preset_link_model(const std::string& name);

/// Loads a preset by name, or a ChannelParams JSON file by path.
ChannelParams load_channel(const std::string& name_or_path);

class GroundTruthChannel {
public:
    GroundTruthChannel(std::map<NodeId, Point> positions, ChannelParams params);

    const ChannelParams& params() const { return params_; }
    const std::map<NodeId, Point>& positions() const { return positions_; }
    long cycle() const { return cycle_; }

    /// Geometry-only mean received power; throws if the nodes coincide.
    double mean_path_rssi(NodeId a, NodeId b) const;
    /// Mean RSSI including static shadowing and current drift (symmetric).
    double mean_rssi(NodeId a, NodeId b) const;
    /// One packet's RSSI: mean plus independent Gaussian fast fading.
    double sample_rssi(NodeId a, NodeId b, std::mt19937_64& rng) const;

    /// Closed-form fraction of packets below `rssi_min_dbm`.
    double analytic_outage(NodeId a, NodeId b, double rssi_min_dbm) const;

    /// Per-attempt packet error probability for a received RSSI.
    double per_at(double rssi_dbm, double rssi_min_dbm, double q_max) const;

    double shadowing(NodeId a, NodeId b) const;
    double drift(NodeId a, NodeId b) const;
    void force_shadowing(NodeId a, NodeId b, double s_db);

    /// Applies `n_cycles` Gauss-Markov drift steps to every pair. One step
    /// stands for one relearning gap (hours in the field); the gap length is
    /// folded into drift_rho and drift_sigma_db.
    void advance_cycles(int n_cycles);

    struct Campaign {
        linkmodel::MeasurementTrace trace;
        linkmodel::SentCounts sent;
    };

    /// Every deployed node broadcasts `n_packets` hellos in turn; every
    /// other deployed node logs what it hears above the sensitivity floor.
    /// `nonce` distinguishes repeated campaigns within one cycle.
    Campaign hello_campaign(const std::set<NodeId>& deployed, int n_packets,
                            Exec exec = Exec::parallel, std::uint64_t nonce = 0) const;

private:
    struct PairState {
        double shadow_db = 0.0;
        double drift_db = 0.0;
    };
    const PairState& state(NodeId a, NodeId b) const;

    std::map<NodeId, Point> positions_;
    ChannelParams params_;
    std::map<PairKey, PairState> pairs_;
    long cycle_ = 0;
};

/// 50-node measurement layout for R_max calibration of a preset.
std::map<NodeId, Point> calibration_layout(const std::string& preset_name, std::uint64_t seed);

struct Calibration {
    linkmodel::PBadCurve curve;
    double r_max_m = 0.0;
};

/// Full pipeline: campaign -> per-link outage -> worst direction ->
/// p_bad curve -> R_max.
Calibration calibrate_rmax(const ChannelParams& params, const std::map<NodeId, Point>& layout,
                           double rssi_min_dbm, double p_out_target, double p_bad_target,
                           int n_packets, Exec exec = Exec::parallel);

void to_json(nlohmann::json& j, const ChannelParams& p);
void from_json(const nlohmann::json& j, ChannelParams& p);

}  // namespace relaynet::fieldsim
