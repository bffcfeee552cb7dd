#include "relaynet/qosmap.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

namespace relaynet::qosmap {

void QoSSpec::validate() const {
    if (!(d_max_ms > 0.0)) throw Error("qos: d_max_ms must be > 0");
    if (!(p_del > 0.0 && p_del < 1.0)) throw Error("qos: p_del must lie in (0,1)");
    if (k < 1) throw Error("qos: k must be >= 1");
    if (!(in_time_target > 0.0 && in_time_target < 1.0))
        throw Error("qos: in_time_target must lie in (0,1)");
    if (!(p_del < in_time_target)) throw Error("qos: p_del must be below in_time_target");
}

namespace {

int to_units(double ms, double unit) {
    // Round up, tolerating representation error of exact multiples.
    return static_cast<int>(std::ceil(ms / unit - 1e-9));
}

std::vector<double> convolve(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) return {};
    std::vector<double> out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == 0.0) continue;
        for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    }
    return out;
}

}  // namespace

int MacParams::success_overhead_units() const {
    return to_units(cca_ms + turnaround_ms + frame_tx_ms + turnaround_ms + ack_ms, backoff_unit_ms);
}

int MacParams::failure_overhead_units() const {
    return to_units(cca_ms + turnaround_ms + frame_tx_ms + ack_wait_ms, backoff_unit_ms);
}

void MacParams::validate() const {
    if (!(backoff_unit_ms > 0.0)) throw Error("mac: backoff unit must be > 0");
    if (mac_min_be < 0 || mac_max_be < mac_min_be || mac_max_be > 16)
        throw Error("mac: invalid backoff exponents");
    if (max_tx_attempts < 1) throw Error("mac: max_tx_attempts must be >= 1");
    if (max_csma_backoffs < 0) throw Error("mac: max_csma_backoffs must be >= 0");
    if (frame_tx_ms < 0 || ack_ms < 0 || turnaround_ms < 0 || cca_ms < 0 || ack_wait_ms < 0)
        throw Error("mac: negative timing");
}

double HopDelayPMF::cdf(double d_ms) const {
    const double limit = d_ms / grid_ms + 1e-9;
    double acc = 0.0;
    for (std::size_t i = 0; i < mass.size() && static_cast<double>(i) <= limit; ++i) acc += mass[i];
    return std::min(acc, 1.0);
}

double HopDelayPMF::mean_ms() const {
    double m = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) m += static_cast<double>(i) * mass[i];
    return m * grid_ms;
}

double HopDelayPMF::total_mass() const {
    return std::accumulate(mass.begin(), mass.end(), 0.0);
}

HopDelayPMF hop_delay_pmf(double q, const MacParams& mac) {
    mac.validate();
    if (!(q >= 0.0 && q < 1.0)) throw Error("hop_delay_pmf: q must lie in [0,1)");

    const int ok_units = mac.success_overhead_units();
    const int fail_units = mac.failure_overhead_units();

    // `prefix` is the delay accumulated by all previous failed attempts,
    // weighted by the probability of reaching the current attempt.
    std::vector<double> prefix{1.0};
    std::vector<double> success;
    double p_reach = 1.0;
    for (int j = 1; j <= mac.max_tx_attempts; ++j) {
        const int be = std::min(mac.mac_min_be + j - 1, mac.mac_max_be);
        const int window = 1 << be;
        std::vector<double> backoff(static_cast<std::size_t>(window), 1.0 / window);
        const auto after_backoff = convolve(prefix, backoff);

        std::vector<double> ok(after_backoff.size() + ok_units, 0.0);
        for (std::size_t i = 0; i < after_backoff.size(); ++i)
            ok[i + ok_units] = after_backoff[i] * (1.0 - q);
        if (success.size() < ok.size()) success.resize(ok.size(), 0.0);
        for (std::size_t i = 0; i < ok.size(); ++i) success[i] += ok[i];

        std::vector<double> next(after_backoff.size() + fail_units, 0.0);
        for (std::size_t i = 0; i < after_backoff.size(); ++i)
            next[i + fail_units] = after_backoff[i] * q;
        prefix = std::move(next);
        p_reach *= q;
    }

    HopDelayPMF pmf;
    pmf.grid_ms = mac.backoff_unit_ms;
    pmf.drop_prob = p_reach;
    const double delivered = 1.0 - p_reach;
    for (auto& m : success) m /= delivered;
    pmf.mass = std::move(success);
    return pmf;
}

HopDelayPMF convolve_hops(const HopDelayPMF& pmf, int h) {
    if (h < 1) throw Error("convolve_hops: h must be >= 1");
    HopDelayPMF out = pmf;
    for (int i = 1; i < h; ++i) out.mass = convolve(out.mass, pmf.mass);
    out.drop_prob = 1.0 - std::pow(1.0 - pmf.drop_prob, h);
    return out;
}

InTimeTable::InTimeTable(double q_max, double d_max_ms, const MacParams& mac)
    : q_max_(q_max), attempts_(mac.max_tx_attempts) {
    const auto hop = hop_delay_pmf(q_max, mac);
    auto acc = hop;
    cdf_at_dmax_.reserve(kMaxHopSearch);
    for (int h = 1; h <= kMaxHopSearch; ++h) {
        if (h > 1) acc.mass = convolve(acc.mass, hop.mass);
        cdf_at_dmax_.push_back(acc.cdf(d_max_ms));
    }
}

double InTimeTable::in_time(int h) const {
    if (h < 1) throw Error("in_time: h must be >= 1");
    if (h > kMaxHopSearch) return 0.0;  // beyond the search cap; treated as unusable
    return cdf_at_dmax_[static_cast<std::size_t>(h - 1)];
}

int in_time_hop_bound(double q_max, double d_max_ms, double in_time_target, const MacParams& mac) {
    const InTimeTable table(q_max, d_max_ms, mac);
    int best = 0;
    for (int h = 1; h <= kMaxHopSearch; ++h) {
        if (table.in_time(h) >= in_time_target)
            best = h;
        else
            break;
    }
    return best;
}

HopBound hop_bound(double q_max, double d_max_ms, double p_out, double p_del,
                   double in_time_target, const MacParams& mac) {
    QoSSpec{d_max_ms, p_del, 1, in_time_target}.validate();
    if (!(p_out >= 0.0 && p_out < 1.0)) throw Error("hop_bound: p_out must lie in [0,1)");

    HopBound hb;
    hb.h_max_1 = in_time_hop_bound(q_max, d_max_ms, in_time_target, mac);
    if (p_out > 0.0) {
        const double h2 = std::floor(std::log(p_del / in_time_target) / std::log(1.0 - p_out));
        hb.h_max_2 = static_cast<int>(std::min(h2, 1e6));
    }
    hb.h_max = hb.h_max_2 ? std::min(hb.h_max_1, *hb.h_max_2) : hb.h_max_1;
    if (hb.h_max < 1) throw Error("infeasible QoS");
    return hb;
}

int per_hop_quantile_bound(double q_max, double d_max_ms, double in_time_target,
                           const MacParams& mac) {
    const auto hop = hop_delay_pmf(q_max, mac);
    double acc = 0.0;
    std::size_t i = 0;
    for (; i < hop.mass.size(); ++i) {
        acc += hop.mass[i];
        if (acc >= in_time_target) break;
    }
    const double quantile_ms = static_cast<double>(i) * hop.grid_ms;
    return static_cast<int>(std::floor(d_max_ms / quantile_ms));
}

double predict_path_pdel(std::span<const double> per_link_outage, const InTimeTable& table) {
    if (per_link_outage.empty()) throw Error("predict_path_pdel: empty path");
    double p = 1.0;
    for (double o : per_link_outage) {
        if (!(o >= 0.0 && o <= 1.0)) throw Error("predict_path_pdel: outage outside [0,1]");
        p *= 1.0 - o;
    }
    const int h = static_cast<int>(per_link_outage.size());
    const double delta = std::pow(table.q_max(), table.attempts());
    return p * std::pow(1.0 - delta, h) * table.in_time(h);
}

double predict_path_pdel(std::span<const double> per_link_outage, double q_max, double d_max_ms,
                         const MacParams& mac) {
    return predict_path_pdel(per_link_outage, InTimeTable(q_max, d_max_ms, mac));
}

void to_json(nlohmann::json& j, const QoSSpec& q) {
    j = {{"d_max_ms", q.d_max_ms}, {"p_del", q.p_del}, {"k", q.k},
         {"in_time_target", q.in_time_target}};
}

void from_json(const nlohmann::json& j, QoSSpec& q) {
    QoSSpec d;
    q.d_max_ms = j.value("d_max_ms", d.d_max_ms);
    q.p_del = j.value("p_del", d.p_del);
    q.k = j.value("k", d.k);
    q.in_time_target = j.value("in_time_target", d.in_time_target);
    q.validate();
}

void to_json(nlohmann::json& j, const MacParams& m) {
    j = {{"backoff_unit_ms", m.backoff_unit_ms}, {"mac_min_be", m.mac_min_be},
         {"mac_max_be", m.mac_max_be},           {"max_csma_backoffs", m.max_csma_backoffs},
         {"max_tx_attempts", m.max_tx_attempts}, {"frame_tx_ms", m.frame_tx_ms},
         {"ack_ms", m.ack_ms},                   {"turnaround_ms", m.turnaround_ms},
         {"cca_ms", m.cca_ms},                   {"ack_wait_ms", m.ack_wait_ms}};
}

void from_json(const nlohmann::json& j, MacParams& m) {
    MacParams d;
    m.backoff_unit_ms = j.value("backoff_unit_ms", d.backoff_unit_ms);
    m.mac_min_be = j.value("mac_min_be", d.mac_min_be);
    m.mac_max_be = j.value("mac_max_be", d.mac_max_be);
    m.max_csma_backoffs = j.value("max_csma_backoffs", d.max_csma_backoffs);
    m.max_tx_attempts = j.value("max_tx_attempts", d.max_tx_attempts);
    m.frame_tx_ms = j.value("frame_tx_ms", d.frame_tx_ms);
    m.ack_ms = j.value("ack_ms", d.ack_ms);
    m.turnaround_ms = j.value("turnaround_ms", d.turnaround_ms);
    m.cca_ms = j.value("cca_ms", d.cca_ms);
    m.ack_wait_ms = j.value("ack_wait_ms", d.ack_wait_ms);
    m.validate();
}

}  // namespace relaynet::qosmap
