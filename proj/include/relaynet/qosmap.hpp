#pragma once

// QoS -> hop-count mapping under the lone-packet model: per-hop delay PMF
// of unslotted CSMA/CA with retransmissions, h-fold convolution, the hop
// bound, and per-path delay-bounded delivery prediction.

#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "relaynet/common.hpp"

namespace relaynet::qosmap {

inline constexpr int kMaxHopSearch = 32;

struct QoSSpec {
    double d_max_ms = 200.0;
    double p_del = 0.73;
    int k = 1;
    double in_time_target = 0.9999;

    void validate() const;
};

/// IEEE 802.15.4 2.4 GHz timing defaults (250 kb/s, 16 us symbols).
struct MacParams {
    double backoff_unit_ms = 0.32;  // aUnitBackoffPeriod, 20 symbols
    int mac_min_be = 3;
    int mac_max_be = 5;
    int max_csma_backoffs = 4;
    int max_tx_attempts = 4;
    double frame_tx_ms = 4.256;    // 133-byte PHY frame
    double ack_ms = 0.352;         // 11-byte ACK frame
    double turnaround_ms = 0.192;  // aTurnaroundTime, 12 symbols
    double cca_ms = 0.128;         // 8 symbols
    double ack_wait_ms = 0.864;    // macAckWaitDuration, 54 symbols

    /// Grid units spent by an attempt after its backoff, rounded up to the
    /// backoff grid: CCA + turnaround + frame + turnaround + ACK on success,
    /// CCA + turnaround + frame + ACK wait on failure.
    int success_overhead_units() const;
    int failure_overhead_units() const;
    void validate() const;
};

/// Per-hop (or per-path) delay distribution on a grid of `grid_ms`,
/// conditioned on the packet not being dropped. `mass[i]` is the
/// probability of delay `i * grid_ms`.
struct HopDelayPMF {
    double grid_ms = 0.32;
    std::vector<double> mass;
    double drop_prob = 0.0;

    double cdf(double d_ms) const;
    double mean_ms() const;
    double total_mass() const;
};

struct HopBound {
    int h_max = 0;
    int h_max_1 = 0;
    std::optional<int> h_max_2;  // nullopt means unbounded (P_out = 0)
};

HopDelayPMF hop_delay_pmf(double q, const MacParams& mac = {});

HopDelayPMF convolve_hops(const HopDelayPMF& pmf, int h);

/// Largest h (<= kMaxHopSearch) with D^(h)(d_max) >= in_time_target, or 0.
int in_time_hop_bound(double q_max, double d_max_ms, double in_time_target,
                      const MacParams& mac = {});

/// Throws Error("infeasible QoS") when the resulting h_max < 1.
HopBound hop_bound(double q_max, double d_max_ms, double p_out, double p_del,
                   double in_time_target = 0.9999, const MacParams& mac = {});

/// floor(d_max / per-hop quantile at `in_time_target`). Diagnostic only.
int per_hop_quantile_bound(double q_max, double d_max_ms, double in_time_target,
                           const MacParams& mac = {});

/// Caches D^(h)_{q}(d_max) for h = 1..kMaxHopSearch.
class InTimeTable {
public:
    InTimeTable(double q_max, double d_max_ms, const MacParams& mac = {});

    double in_time(int h) const;
    double q_max() const { return q_max_; }
    int attempts() const { return attempts_; }

private:
    double q_max_;
    int attempts_;
    std::vector<double> cdf_at_dmax_;  // index h-1
};

/// prod(1 - p_out_i) * (1 - q_max^n)^h * D^(h)(d_max).
double predict_path_pdel(std::span<const double> per_link_outage, double q_max, double d_max_ms,
                         const MacParams& mac = {});
double predict_path_pdel(std::span<const double> per_link_outage, const InTimeTable& table);

void to_json(nlohmann::json& j, const QoSSpec& q);
void from_json(const nlohmann::json& j, QoSSpec& q);
void to_json(nlohmann::json& j, const MacParams& m);
void from_json(const nlohmann::json& j, MacParams& m);

}  // namespace relaynet::qosmap
