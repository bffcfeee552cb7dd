#include "relaynet/fieldsim.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

namespace relaynet::fieldsim {

namespace {

constexpr std::uint64_t kTagShadow = 1;
constexpr std::uint64_t kTagDrift = 2;
constexpr std::uint64_t kTagHello = 3;
constexpr double kHelloPeriodMs = 10.0;

}  // namespace

void ChannelParams::validate() const {
    if (shadow_sigma_db < 0 || fast_sigma_db < 0 || drift_sigma_db < 0)
        throw Error("channel: sigmas must be >= 0");
    if (drift_rho < 0.0 || drift_rho > 1.0) throw Error("channel: drift_rho must lie in [0,1]");
    if (!(ref_dist_m > 0.0)) throw Error("channel: ref_dist_m must be > 0");
}

// Fitted so that calibrate_rmax on calibration_layout() gives 8 m (indoor,
// P_out=0.04) and 30 m (yard, P_out=0.004) at P_bad=0.2. Mirrored in
// config/indoor.json and config/yard.json.
ChannelParams preset(const std::string& name) {
    ChannelParams p;
    p.name = name;
    if (name == "indoor") {
        p.pl0_db = 46.0;
        p.path_loss_exp = 3.3;
        p.shadow_sigma_db = 5.0;
        p.fast_sigma_db = 4.0;
        p.drift_rho = 0.9;
        p.drift_sigma_db = 3.0;
        return p;
    }
    if (name == "yard") {
        p.pl0_db = 36.0;
        p.path_loss_exp = 3.0;
        p.shadow_sigma_db = 2.0;
        p.fast_sigma_db = 2.0;
        p.drift_rho = 0.9;
        p.drift_sigma_db = 2.0;
        return p;
    }
    throw Error("unknown channel preset '" + name + "'");
}

linkmodel::LinkModel preset_link_model(const std::string& name) {
    linkmodel::LinkModel m;
    m.p_bad_target = 0.2;
    if (name == "indoor") {
        m.r_max_m = 8.0;
        m.p_out_target = 0.04;
        return m;
    }
    if (name == "yard") {
        m.r_max_m = 30.0;
        m.p_out_target = 0.004;
        return m;
    }
    throw Error("unknown channel preset '" + name + "'");
}

ChannelParams load_channel(const std::string& name_or_path) {
    if (name_or_path == "indoor" || name_or_path == "yard") return preset(name_or_path);
    std::ifstream in(name_or_path);
    if (!in) throw Error("unknown channel preset or unreadable file '" + name_or_path + "'");
    nlohmann::json j;
    in >> j;
    return j.get<ChannelParams>();
}

GroundTruthChannel::GroundTruthChannel(std::map<NodeId, Point> positions, ChannelParams params)
    : positions_(std::move(positions)), params_(std::move(params)) {
    params_.validate();
    std::vector<NodeId> ids;
    for (const auto& [id, p] : positions_) ids.push_back(id);
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size(); ++j) {
            std::mt19937_64 rng(derive_seed(params_.seed, kTagShadow, ids[i], ids[j]));
            std::normal_distribution<double> n(0.0, 1.0);
            pairs_[PairKey{ids[i], ids[j]}] = {params_.shadow_sigma_db * n(rng), 0.0};
        }
}

const GroundTruthChannel::PairState& GroundTruthChannel::state(NodeId a, NodeId b) const {
    auto it = pairs_.find(PairKey::of(a, b));
    if (it == pairs_.end()) throw Error("channel: unknown node pair");
    return it->second;
}

double GroundTruthChannel::mean_path_rssi(NodeId a, NodeId b) const {
    const double d = distance(positions_.at(a), positions_.at(b));
    if (!(d > 0.0)) throw Error("channel: zero link distance");
    return params_.tx_power_dbm -
           (params_.pl0_db + 10.0 * params_.path_loss_exp * std::log10(d / params_.ref_dist_m));
}

double GroundTruthChannel::mean_rssi(NodeId a, NodeId b) const {
    const auto& s = state(a, b);
    return mean_path_rssi(a, b) + s.shadow_db + s.drift_db;
}

double GroundTruthChannel::sample_rssi(NodeId a, NodeId b, std::mt19937_64& rng) const {
    const double mu = mean_rssi(a, b);
    if (params_.fast_sigma_db == 0.0) return mu;
    std::normal_distribution<double> fast(0.0, params_.fast_sigma_db);
    return mu + fast(rng);
}

double GroundTruthChannel::analytic_outage(NodeId a, NodeId b, double rssi_min_dbm) const {
    const double mu = mean_rssi(a, b);
    if (params_.fast_sigma_db == 0.0) return mu < rssi_min_dbm ? 1.0 : 0.0;
    return normal_cdf((rssi_min_dbm - mu) / params_.fast_sigma_db);
}

double GroundTruthChannel::per_at(double rssi_dbm, double rssi_min_dbm, double q_max) const {
    if (rssi_dbm < params_.sensitivity_floor_dbm) return 1.0;
    if (rssi_dbm >= rssi_min_dbm) return q_max;
    return std::min(1.0, q_max + params_.per_slope_per_db * (rssi_min_dbm - rssi_dbm));
}

double GroundTruthChannel::shadowing(NodeId a, NodeId b) const { return state(a, b).shadow_db; }
double GroundTruthChannel::drift(NodeId a, NodeId b) const { return state(a, b).drift_db; }

void GroundTruthChannel::force_shadowing(NodeId a, NodeId b, double s_db) {
    auto it = pairs_.find(PairKey::of(a, b));
    if (it == pairs_.end()) throw Error("channel: unknown node pair");
    it->second.shadow_db = s_db;
}

void GroundTruthChannel::advance_cycles(int n_cycles) {
    const double rho = params_.drift_rho;
    const double innov = std::sqrt(std::max(0.0, 1.0 - rho * rho)) * params_.drift_sigma_db;
    for (int c = 0; c < n_cycles; ++c) {
        ++cycle_;
        for (auto& [key, s] : pairs_) {
            double z = 0.0;
            if (innov > 0.0) {
                std::mt19937_64 rng(derive_seed(params_.seed, kTagDrift, key.a, key.b,
                                                static_cast<std::uint64_t>(cycle_)));
                z = std::normal_distribution<double>(0.0, 1.0)(rng);
            }
            s.drift_db = rho * s.drift_db + innov * z;
        }
    }
}

GroundTruthChannel::Campaign GroundTruthChannel::hello_campaign(const std::set<NodeId>& deployed,
                                                                int n_packets, Exec exec,
                                                                std::uint64_t nonce) const {
    if (n_packets < 1) throw Error("hello_campaign: n_packets must be >= 1");
    const std::vector<NodeId> ids(deployed.begin(), deployed.end());
    for (NodeId id : ids)
        if (!positions_.contains(id)) throw Error("hello_campaign: unknown node");

    std::vector<std::pair<std::size_t, std::size_t>> ordered;
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < ids.size(); ++j)
            if (i != j) ordered.emplace_back(i, j);

    std::vector<std::vector<linkmodel::TraceRecord>> per_pair(ordered.size());
    const auto n = static_cast<long>(ordered.size());
    auto kernel = [&](long p) {
        const auto [ti, ri] = ordered[p];
        const NodeId tx = ids[ti];
        const NodeId rx = ids[ri];
        std::mt19937_64 rng(derive_seed(params_.seed, kTagHello, static_cast<std::uint64_t>(tx),
                                        static_cast<std::uint64_t>(rx),
                                        mix64(static_cast<std::uint64_t>(cycle_)) ^ nonce));
        auto& out = per_pair[p];
        const double t0 = static_cast<double>(ti) * n_packets * kHelloPeriodMs;
        for (int seq = 0; seq < n_packets; ++seq) {
            const double rssi = sample_rssi(tx, rx, rng);
            if (rssi < params_.sensitivity_floor_dbm) continue;
            out.push_back({tx, rx, seq, rssi, t0 + seq * kHelloPeriodMs});
        }
    };
    if (exec == Exec::serial) {
        for (long p = 0; p < n; ++p) kernel(p);
    } else {
#pragma omp parallel for schedule(dynamic, 8)
        for (long p = 0; p < n; ++p) kernel(p);
    }

    Campaign c;
    std::size_t total = 0;
    for (const auto& v : per_pair) total += v.size();
    c.trace.records.reserve(total);
    for (std::size_t p = 0; p < ordered.size(); ++p) {
        const auto [ti, ri] = ordered[p];
        c.sent[{ids[ti], ids[ri]}] = n_packets;
        c.trace.records.insert(c.trace.records.end(), per_pair[p].begin(), per_pair[p].end());
    }
    return c;
}

// ---- calibration ----------------------------------------------------------

std::map<NodeId, Point> calibration_layout(const std::string& preset_name, std::uint64_t seed) {
    // Jittered grid, 10 x 5 nodes; spacing matched to the environment so
    // that link lengths cover well beyond the expected range.
    double spacing = 0.0;
    if (preset_name == "indoor")
        spacing = 2.5;
    else if (preset_name == "yard")
        spacing = 8.0;
    else
        throw Error("no calibration layout for preset '" + preset_name + "'");
    std::mt19937_64 rng(derive_seed(seed, 0xCA11B));
    std::uniform_real_distribution<double> jitter(-0.35 * spacing, 0.35 * spacing);
    std::map<NodeId, Point> layout;
    NodeId id = 1;
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 10; ++c) {
            const double jx = jitter(rng);
            const double jy = jitter(rng);
            layout[id++] = {c * spacing + jx, r * spacing + jy};
        }
    return layout;
}

Calibration calibrate_rmax(const ChannelParams& params, const std::map<NodeId, Point>& layout,
                           double rssi_min_dbm, double p_out_target, double p_bad_target,
                           int n_packets, Exec exec) {
    GroundTruthChannel ch(layout, params);
    std::set<NodeId> all;
    for (const auto& [id, p] : layout) all.insert(id);
    const auto campaign = ch.hello_campaign(all, n_packets, exec);
    const auto directed =
        linkmodel::estimate_all_links(campaign.trace, campaign.sent, layout, rssi_min_dbm, exec);
    const auto links = linkmodel::worst_direction(directed);
    Calibration cal;
    cal.curve = linkmodel::build_pbad_curve(links, p_out_target);
    cal.r_max_m = linkmodel::select_rmax(cal.curve, p_bad_target);
    return cal;
}

void to_json(nlohmann::json& j, const ChannelParams& p) {
    j = {{"name", p.name},
         {"tx_power_dbm", p.tx_power_dbm},
         {"pl0_db", p.pl0_db},
         {"ref_dist_m", p.ref_dist_m},
         {"path_loss_exp", p.path_loss_exp},
         {"shadow_sigma_db", p.shadow_sigma_db},
         {"fast_sigma_db", p.fast_sigma_db},
         {"drift_rho", p.drift_rho},
         {"drift_sigma_db", p.drift_sigma_db},
         {"sensitivity_floor_dbm", p.sensitivity_floor_dbm},
         {"per_slope_per_db", p.per_slope_per_db},
         {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, ChannelParams& p) {
    ChannelParams d;
    p.name = j.value("name", d.name);
    p.tx_power_dbm = j.value("tx_power_dbm", d.tx_power_dbm);
    p.pl0_db = j.value("pl0_db", d.pl0_db);
    p.ref_dist_m = j.value("ref_dist_m", d.ref_dist_m);
    p.path_loss_exp = j.value("path_loss_exp", d.path_loss_exp);
    p.shadow_sigma_db = j.value("shadow_sigma_db", d.shadow_sigma_db);
    p.fast_sigma_db = j.value("fast_sigma_db", d.fast_sigma_db);
    p.drift_rho = j.value("drift_rho", d.drift_rho);
    p.drift_sigma_db = j.value("drift_sigma_db", d.drift_sigma_db);
    p.sensitivity_floor_dbm = j.value("sensitivity_floor_dbm", d.sensitivity_floor_dbm);
    p.per_slope_per_db = j.value("per_slope_per_db", d.per_slope_per_db);
    p.seed = j.value("seed", d.seed);
    p.validate();
}

}  // namespace relaynet::fieldsim
