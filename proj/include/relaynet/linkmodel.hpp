#pragma once

// Link-quality estimation from hello-packet RSSI traces: per-link outage,
// p_bad-vs-length curves, and the R_max range decision.

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "relaynet/common.hpp"

namespace relaynet::linkmodel {

enum class LinkQuality { good, bad };

struct TraceRecord {
    NodeId tx_id = 0;
    NodeId rx_id = 0;
    long seq = 0;
    double rssi_dbm = 0.0;
    double time_ms = 0.0;

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct MeasurementTrace {
    std::vector<TraceRecord> records;
};

/// Directed (tx, rx) -> number of hello packets the transmitter sent.
using SentCounts = std::map<std::pair<NodeId, NodeId>, long>;

struct LinkStats {
    NodeId tx_id = 0;
    NodeId rx_id = 0;
    double length_m = 0.0;
    long n_sent = 0;
    long n_received = 0;
    std::vector<double> rssi_samples;
    double p_out_hat = 1.0;
};

struct PBadBin {
    double length_m = 0.0;
    int n_links = 0;
    double p_bad = 0.0;
    bool low_confidence = false;  // fewer than kMinConfidentLinks links
};

struct PBadCurve {
    double bin_width_m = 1.0;
    std::vector<PBadBin> bins;  // ascending length, empty bins omitted
};

inline constexpr int kMinConfidentLinks = 5;

struct LinkModel {
    double r_max_m = 8.0;
    double rssi_min_dbm = -88.0;
    double q_max = 0.05;
    double p_out_target = 0.04;
    double p_bad_target = 0.2;

    void validate() const;
};

/// Throws if a record has tx == rx or a pair's sequence numbers go
/// backwards in time.
void validate_trace(const MeasurementTrace& trace);

LinkQuality per_threshold_classify(double rssi_dbm, double rssi_min_dbm);

/// Outage estimate for one directed pair. Lost packets count as outage.
LinkStats estimate_link_outage(const MeasurementTrace& trace, NodeId tx, NodeId rx, long n_sent,
                               double rssi_min_dbm);

/// Stats for every directed pair in `sent`, ordered by (tx, rx). Pairs with
/// no records get p_out_hat = 1. `positions` supplies link lengths.
std::vector<LinkStats> estimate_all_links(const MeasurementTrace& trace, const SentCounts& sent,
                                          const std::map<NodeId, Point>& positions,
                                          double rssi_min_dbm, Exec exec = Exec::parallel);

/// Collapses directed stats to one entry per unordered pair, keeping the
/// worse direction's outage. Pairs measured in one direction only keep it.
std::vector<LinkStats> worst_direction(std::span<const LinkStats> directed);

PBadCurve build_pbad_curve(std::span<const LinkStats> stats, double p_out_target,
                           double bin_width_m = 1.0);

/// Largest bin length such that it and every shorter non-empty bin satisfy
/// p_bad <= target. Throws Error("no feasible range") if the first bin fails.
double select_rmax(const PBadCurve& curve, double p_bad_target);

LinkQuality classify_bidirectional(const LinkStats& fwd, const LinkStats& rev,
                                   double p_out_target);

// ---- file formats -------------------------------------------------------

/// CSV with header `tx_id,rx_id,seq,rssi_dbm,time_ms`.
MeasurementTrace read_trace_csv(std::istream& in);
void write_trace_csv(std::ostream& out, const MeasurementTrace& trace);

/// Campaign metadata: `{"pairs":[{"tx":..,"rx":..,"n_sent":..}, ...]}`.
SentCounts sent_counts_from_json(const nlohmann::json& meta);
nlohmann::json sent_counts_to_json(const SentCounts& sent);

/// Inferred counts when no metadata is available: every transmitter is
/// assumed to have broadcast max(seq)+1 packets to every receiver that
/// appears anywhere in the trace.
SentCounts infer_sent_counts(const MeasurementTrace& trace);

/// `[{"bin_m":..,"n_links":..,"p_bad":..}, ...]`
nlohmann::json curve_to_json(const PBadCurve& curve);

void to_json(nlohmann::json& j, const LinkModel& m);
void from_json(const nlohmann::json& j, LinkModel& m);

}  // namespace relaynet::linkmodel
