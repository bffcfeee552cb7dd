#include "relaynet/linkmodel.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace relaynet::linkmodel {

namespace {

bool is_prob_open(double p) { return p > 0.0 && p < 1.0; }

}  // namespace

void LinkModel::validate() const {
    if (!(r_max_m > 0.0)) throw Error("link model: r_max_m must be > 0");
    if (!is_prob_open(q_max) || !is_prob_open(p_out_target) || !is_prob_open(p_bad_target))
        throw Error("link model: probabilities must lie in (0,1)");
}

void validate_trace(const MeasurementTrace& trace) {
    std::map<std::pair<NodeId, NodeId>, std::vector<std::pair<double, long>>> by_pair;
    for (const auto& r : trace.records) {
        if (r.tx_id == r.rx_id) throw Error("trace: record with tx_id == rx_id");
        by_pair[{r.tx_id, r.rx_id}].emplace_back(r.time_ms, r.seq);
    }
    // Records of one pair may appear in any file order; the check is between
    // time and sequence number.
    for (auto& [key, rows] : by_pair) {
        std::sort(rows.begin(), rows.end());
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (rows[i].second < rows[i - 1].second)
                throw Error("trace: sequence numbers decrease in time for a pair");
    }
}

LinkQuality per_threshold_classify(double rssi_dbm, double rssi_min_dbm) {
    return rssi_dbm >= rssi_min_dbm ? LinkQuality::good : LinkQuality::bad;
}

namespace {

LinkStats stats_from_samples(NodeId tx, NodeId rx, long n_sent, std::vector<double> samples,
                             double rssi_min_dbm) {
    if (n_sent < 1) throw Error("estimate_link_outage: n_sent must be >= 1");
    if (static_cast<long>(samples.size()) > n_sent)
        throw Error("estimate_link_outage: more records than packets sent");
    LinkStats s;
    s.tx_id = tx;
    s.rx_id = rx;
    s.n_sent = n_sent;
    s.n_received = static_cast<long>(samples.size());
    const auto good = std::count_if(samples.begin(), samples.end(),
                                    [&](double v) { return v >= rssi_min_dbm; });
    s.p_out_hat = 1.0 - static_cast<double>(good) / static_cast<double>(n_sent);
    s.rssi_samples = std::move(samples);
    return s;
}

}  // namespace

LinkStats estimate_link_outage(const MeasurementTrace& trace, NodeId tx, NodeId rx, long n_sent,
                               double rssi_min_dbm) {
    std::vector<double> samples;
    for (const auto& r : trace.records)
        if (r.tx_id == tx && r.rx_id == rx) samples.push_back(r.rssi_dbm);
    return stats_from_samples(tx, rx, n_sent, std::move(samples), rssi_min_dbm);
}

std::vector<LinkStats> estimate_all_links(const MeasurementTrace& trace, const SentCounts& sent,
                                          const std::map<NodeId, Point>& positions,
                                          double rssi_min_dbm, Exec exec) {
    // Group samples by directed pair, preserving trace order within a pair.
    std::vector<std::pair<NodeId, NodeId>> pairs;
    pairs.reserve(sent.size());
    for (const auto& [key, n] : sent) pairs.push_back(key);

    std::map<std::pair<NodeId, NodeId>, std::size_t> index;
    for (std::size_t i = 0; i < pairs.size(); ++i) index.emplace(pairs[i], i);

    std::vector<std::vector<double>> samples(pairs.size());
    for (const auto& r : trace.records) {
        auto it = index.find({r.tx_id, r.rx_id});
        if (it == index.end()) throw Error("trace: record for a pair missing from sent counts");
        samples[it->second].push_back(r.rssi_dbm);
    }

    auto length_of = [&](NodeId a, NodeId b) {
        auto pa = positions.find(a);
        auto pb = positions.find(b);
        if (pa == positions.end() || pb == positions.end())
            throw Error("estimate_all_links: missing node position");
        return distance(pa->second, pb->second);
    };

    std::vector<LinkStats> out(pairs.size());
    const auto n = static_cast<long>(pairs.size());
    auto kernel = [&](long i) {
        const auto [tx, rx] = pairs[i];
        out[i] = stats_from_samples(tx, rx, sent.at(pairs[i]), std::move(samples[i]), rssi_min_dbm);
        out[i].length_m = length_of(tx, rx);
    };
    if (exec == Exec::serial) {
        for (long i = 0; i < n; ++i) kernel(i);
    } else {
        // Exceptions must not escape an OpenMP region; collect the first one.
        std::string failure;
#pragma omp parallel for schedule(dynamic, 16)
        for (long i = 0; i < n; ++i) {
            try {
                kernel(i);
            } catch (const std::exception& e) {
#pragma omp critical(relaynet_linkmodel_err)
                if (failure.empty()) failure = e.what();
            }
        }
        if (!failure.empty()) throw Error(failure);
    }
    return out;
}

std::vector<LinkStats> worst_direction(std::span<const LinkStats> directed) {
    std::map<PairKey, LinkStats> best;
    for (const auto& s : directed) {
        auto key = PairKey::of(s.tx_id, s.rx_id);
        auto it = best.find(key);
        if (it == best.end() || s.p_out_hat > it->second.p_out_hat) best[key] = s;
    }
    std::vector<LinkStats> out;
    out.reserve(best.size());
    for (auto& [k, s] : best) out.push_back(std::move(s));
    return out;
}

PBadCurve build_pbad_curve(std::span<const LinkStats> stats, double p_out_target,
                           double bin_width_m) {
    if (stats.empty()) throw Error("build_pbad_curve: empty stats list");
    if (!(bin_width_m > 0.0)) throw Error("build_pbad_curve: bin width must be > 0");
    std::map<long, std::pair<int, int>> bins;  // bin index -> (links, bad)
    for (const auto& s : stats) {
        if (!(s.length_m > 0.0)) throw Error("build_pbad_curve: link length must be > 0");
        const long idx = std::lround(s.length_m / bin_width_m);
        auto& [n, bad] = bins[idx];
        ++n;
        if (s.p_out_hat > p_out_target) ++bad;
    }
    PBadCurve curve;
    curve.bin_width_m = bin_width_m;
    for (const auto& [idx, nb] : bins) {
        const auto [n, bad] = nb;
        curve.bins.push_back({static_cast<double>(idx) * bin_width_m, n,
                              static_cast<double>(bad) / static_cast<double>(n),
                              n < kMinConfidentLinks});
    }
    return curve;
}

double select_rmax(const PBadCurve& curve, double p_bad_target) {
    if (curve.bins.empty()) throw Error("select_rmax: empty curve");
    double r = -1.0;
    for (const auto& b : curve.bins) {
        if (b.p_bad > p_bad_target) break;
        r = b.length_m;
    }
    if (r <= 0.0) throw Error("no feasible range");
    return r;
}

LinkQuality classify_bidirectional(const LinkStats& fwd, const LinkStats& rev,
                                   double p_out_target) {
    return fwd.p_out_hat <= p_out_target && rev.p_out_hat <= p_out_target ? LinkQuality::good
                                                                          : LinkQuality::bad;
}

// ---- file formats -------------------------------------------------------

MeasurementTrace read_trace_csv(std::istream& in) {
    MeasurementTrace trace;
    std::string line;
    if (!std::getline(in, line)) throw Error("trace csv: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "tx_id,rx_id,seq,rssi_dbm,time_ms")
        throw Error("trace csv: unexpected header '" + line + "'");
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        TraceRecord r;
        if (!(ss >> r.tx_id >> r.rx_id >> r.seq >> r.rssi_dbm >> r.time_ms))
            throw Error("trace csv: malformed line " + std::to_string(lineno));
        trace.records.push_back(r);
    }
    validate_trace(trace);
    return trace;
}

void write_trace_csv(std::ostream& out, const MeasurementTrace& trace) {
    out << "tx_id,rx_id,seq,rssi_dbm,time_ms\n";
    std::ostringstream row;
    row.precision(17);
    for (const auto& r : trace.records) {
        row.str("");
        row << r.tx_id << ',' << r.rx_id << ',' << r.seq << ',' << r.rssi_dbm << ',' << r.time_ms
            << '\n';
        out << row.str();
    }
}

SentCounts sent_counts_from_json(const nlohmann::json& meta) {
    SentCounts sent;
    for (const auto& p : meta.at("pairs")) {
        const long n = p.at("n_sent").get<long>();
        if (n < 1) throw Error("campaign metadata: n_sent must be >= 1");
        sent[{p.at("tx").get<NodeId>(), p.at("rx").get<NodeId>()}] = n;
    }
    return sent;
}

nlohmann::json sent_counts_to_json(const SentCounts& sent) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [k, n] : sent) pairs.push_back({{"tx", k.first}, {"rx", k.second}, {"n_sent", n}});
    return {{"pairs", pairs}};
}

SentCounts infer_sent_counts(const MeasurementTrace& trace) {
    std::map<NodeId, long> max_seq;
    std::vector<NodeId> nodes;
    for (const auto& r : trace.records) {
        auto& m = max_seq[r.tx_id];
        m = std::max(m, r.seq);
        nodes.push_back(r.tx_id);
        nodes.push_back(r.rx_id);
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    SentCounts sent;
    for (const auto& [tx, m] : max_seq)
        for (NodeId rx : nodes)
            if (rx != tx) sent[{tx, rx}] = m + 1;
    return sent;
}

nlohmann::json curve_to_json(const PBadCurve& curve) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : curve.bins)
        arr.push_back({{"bin_m", b.length_m}, {"n_links", b.n_links}, {"p_bad", b.p_bad},
                       {"low_confidence", b.low_confidence}});
    return arr;
}

void to_json(nlohmann::json& j, const LinkModel& m) {
    j = {{"r_max_m", m.r_max_m},
         {"rssi_min_dbm", m.rssi_min_dbm},
         {"q_max", m.q_max},
         {"p_out_target", m.p_out_target},
         {"p_bad_target", m.p_bad_target}};
}

void from_json(const nlohmann::json& j, LinkModel& m) {
    LinkModel d;
    m.r_max_m = j.value("r_max_m", d.r_max_m);
    m.rssi_min_dbm = j.value("rssi_min_dbm", d.rssi_min_dbm);
    m.q_max = j.value("q_max", d.q_max);
    m.p_out_target = j.value("p_out_target", d.p_out_target);
    m.p_bad_target = j.value("p_bad_target", d.p_bad_target);
    m.validate();
}

}  // namespace relaynet::linkmodel
