#include "relaynet/macsim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>
#include <queue>

#include <nlohmann/json.hpp>

namespace relaynet::fieldsim {

namespace {

constexpr std::uint64_t kTagMac = 0x3AC;

std::int64_t to_us(double ms) { return std::llround(ms * 1000.0); }

struct Timing {
    std::int64_t unit, cca, turnaround, frame, ack, ack_wait;

    explicit Timing(const qosmap::MacParams& m)
        : unit(to_us(m.backoff_unit_ms)),
          cca(to_us(m.cca_ms)),
          turnaround(to_us(m.turnaround_ms)),
          frame(to_us(m.frame_tx_ms)),
          ack(to_us(m.ack_ms)),
          ack_wait(to_us(m.ack_wait_ms)) {}

    std::int64_t success_tail() const { return turnaround + ack; }
};

int backoff_exponent(const qosmap::MacParams& m, int attempt, int nb) {
    return std::min(m.mac_min_be + (attempt - 1) + nb, m.mac_max_be);
}

bool attempt_succeeds(const GroundTruthChannel& ch, NodeId tx, NodeId rx, double rssi_min,
                      double q_max, std::mt19937_64& rng) {
    const double rssi = ch.sample_rssi(tx, rx, rng);
    const double per = ch.per_at(rssi, rssi_min, q_max);
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= per;
}

struct Packet {
    NodeId source = 0;
    long seq = 0;
    const topology::Path* path = nullptr;
    std::size_t hop = 0;  // index of the current holder in *path
    std::int64_t generated_us = 0;
    int attempt = 1;
    int nb = 0;
};

enum class Ev { arrival, backoff_end, tx_end, hop_done };

struct Event {
    std::int64_t t = 0;
    std::uint64_t seq = 0;
    Ev kind = Ev::arrival;
    NodeId node = 0;
    bool ok = false;

    bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
};

struct Transmission {
    NodeId tx = 0;
    NodeId rx = 0;
    std::int64_t start = 0;
    std::int64_t end = 0;
};

class MacSimulation {
public:
    MacSimulation(const topology::Design& design, const GroundTruthChannel& channel, double rate,
                  const qosmap::QoSSpec& qos, const MacSimOptions& opts)
        : channel_(channel),
          opts_(opts),
          timing_(opts.mac),
          rate_(rate),
          d_max_us_(to_us(qos.d_max_ms)),
          cs_range_(opts.r_max_m * opts.carrier_sense_factor),
          end_arrivals_us_(static_cast<std::int64_t>(std::llround(opts.duration_s * 1e6))),
          rng_(derive_seed(opts.seed, kTagMac)) {
        for (const auto& [src, paths] : design.routes) {
            if (paths.empty()) throw Error("run_mac_sim: source without routes");
            int idx = 0;
            if (auto it = opts.active_route.find(src); it != opts.active_route.end()) idx = it->second;
            if (idx < 0 || idx >= static_cast<int>(paths.size()))
                throw Error("run_mac_sim: active route index out of range");
            routes_[src] = &paths[idx];
            for (NodeId n : paths[idx])
                if (!channel.positions().contains(n)) throw Error("run_mac_sim: unknown node");
            log_.per_source[src];
        }
        log_.window_size = opts.window_size;
    }

    DeliveryLog run() {
        for (const auto& [src, path] : routes_) schedule(next_arrival(0), Ev::arrival, src);
        while (!events_.empty()) {
            const Event e = events_.top();
            events_.pop();
            now_ = e.t;
            switch (e.kind) {
                case Ev::arrival: on_arrival(e.node); break;
                case Ev::backoff_end: on_backoff_end(e.node); break;
                case Ev::tx_end: on_tx_end(e.node); break;
                case Ev::hop_done: on_hop_done(e.node, e.ok); break;
            }
        }
        finish_windows();
        return std::move(log_);
    }

private:
    void schedule(std::int64_t t, Ev kind, NodeId node, bool ok = false) {
        events_.push({t, next_event_seq_++, kind, node, ok});
    }

    std::int64_t next_arrival(std::int64_t from) {
        const double gap_s = std::exponential_distribution<double>(rate_)(rng_);
        return from + std::max<std::int64_t>(1, std::llround(gap_s * 1e6));
    }

    void on_arrival(NodeId src) {
        Packet p;
        p.source = src;
        p.seq = log_.per_source[src].generated++;
        p.path = routes_.at(src);
        p.generated_us = now_;
        per_source_outcomes_[src].push_back(false);
        enqueue(src, p);
        const std::int64_t t = next_arrival(now_);
        if (t < end_arrivals_us_) schedule(t, Ev::arrival, src);
    }

    void enqueue(NodeId node, Packet p) {
        if (p.path->size() == 1 || p.hop + 1 >= p.path->size()) {
            deliver(p);
            return;
        }
        auto& q = queues_[node];
        q.push_back(p);
        if (q.size() == 1) start_attempt(node);
    }

    void deliver(const Packet& p) {
        auto& s = log_.per_source[p.source];
        ++s.delivered;
        if (now_ - p.generated_us <= d_max_us_) {
            ++s.delivered_in_time;
            per_source_outcomes_[p.source][p.seq] = true;
        }
    }

    void start_attempt(NodeId node) {
        auto& p = queues_[node].front();
        const int be = backoff_exponent(opts_.mac, p.attempt, p.nb);
        const auto slots = std::uniform_int_distribution<std::int64_t>(0, (1LL << be) - 1)(rng_);
        schedule(now_ + slots * timing_.unit, Ev::backoff_end, node);
    }

    bool medium_busy_at(NodeId node) const {
        const Point here = channel_.positions().at(node);
        for (const auto& tx : on_air_)
            if (tx.start <= now_ && now_ < tx.end &&
                distance(channel_.positions().at(tx.tx), here) <= cs_range_)
                return true;
        return false;
    }

    void on_backoff_end(NodeId node) {
        auto& p = queues_[node].front();
        if (medium_busy_at(node)) {
            ++p.nb;
            if (p.nb > opts_.mac.max_csma_backoffs) {
                p.nb = 0;
                fail_attempt(node);
                return;
            }
            start_attempt(node);
            return;
        }
        const NodeId rx = (*p.path)[p.hop + 1];
        const std::int64_t start = now_ + timing_.cca + timing_.turnaround;
        on_air_.push_back({node, rx, start, start + timing_.frame});
        schedule(start + timing_.frame, Ev::tx_end, node);
    }

    void on_tx_end(NodeId node) {
        const auto& p = queues_[node].front();
        const NodeId rx = (*p.path)[p.hop + 1];
        auto self = std::find_if(on_air_.begin(), on_air_.end(),
                                 [&](const Transmission& t) { return t.tx == node && t.end == now_; });
        const Transmission mine = *self;
        const Point rx_pos = channel_.positions().at(rx);
        bool collided = false;
        for (const auto& other : on_air_) {
            if (&other == &*self) continue;
            if (other.end <= mine.start || other.start >= mine.end) continue;
            if (other.tx == rx || distance(channel_.positions().at(other.tx), rx_pos) <= cs_range_) {
                collided = true;
                break;
            }
        }
        const bool ok = !collided &&
                        attempt_succeeds(channel_, node, rx, opts_.rssi_min_dbm, opts_.q_max, rng_);
        prune_on_air();
        schedule(now_ + (ok ? timing_.success_tail() : timing_.ack_wait), Ev::hop_done, node, ok);
    }

    void prune_on_air() {
        // Keep anything that may still overlap a transmission in flight.
        std::int64_t horizon = now_;
        for (const auto& t : on_air_)
            if (t.end >= now_) horizon = std::min(horizon, t.start);
        std::erase_if(on_air_, [&](const Transmission& t) { return t.end <= horizon && t.end < now_; });
    }

    void on_hop_done(NodeId node, bool ok) {
        if (ok) {
            Packet p = queues_[node].front();
            queues_[node].pop_front();
            ++p.hop;
            p.attempt = 1;
            p.nb = 0;
            if (!queues_[node].empty()) start_attempt(node);
            enqueue((*p.path)[p.hop], p);
            return;
        }
        fail_attempt(node);
    }

    void fail_attempt(NodeId node) {
        auto& p = queues_[node].front();
        ++p.attempt;
        p.nb = 0;
        if (p.attempt > opts_.mac.max_tx_attempts) {
            queues_[node].pop_front();
            if (!queues_[node].empty()) start_attempt(node);
            return;
        }
        start_attempt(node);
    }

    void finish_windows() {
        const int w = log_.window_size;
        for (auto& [src, s] : log_.per_source) {
            const auto& outcomes = per_source_outcomes_[src];
            const long full = static_cast<long>(outcomes.size()) / w;
            for (long i = 0; i < full; ++i) {
                WindowStat ws;
                ws.window_index = static_cast<int>(i);
                ws.packets_sent = w;
                ws.packets_delivered_in_time = static_cast<int>(
                    std::count(outcomes.begin() + i * w, outcomes.begin() + (i + 1) * w, true));
                ws.p_del_hat = static_cast<double>(ws.packets_delivered_in_time) / w;
                s.windows.push_back(ws);
            }
        }
    }

    const GroundTruthChannel& channel_;
    const MacSimOptions& opts_;
    Timing timing_;
    double rate_;
    std::int64_t d_max_us_;
    double cs_range_;
    std::int64_t end_arrivals_us_;
    std::mt19937_64 rng_;

    std::map<NodeId, const topology::Path*> routes_;
    std::map<NodeId, std::deque<Packet>> queues_;
    std::map<NodeId, std::vector<bool>> per_source_outcomes_;
    std::vector<Transmission> on_air_;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
    std::uint64_t next_event_seq_ = 0;
    std::int64_t now_ = 0;
    DeliveryLog log_;
};

}  // namespace

DeliveryLog run_mac_sim(const topology::Design& design, const GroundTruthChannel& channel,
                        double arrival_rate_per_source, const qosmap::QoSSpec& qos,
                        const MacSimOptions& opts) {
    if (!(arrival_rate_per_source > 0.0)) throw Error("run_mac_sim: arrival rate must be > 0");
    if (!(opts.duration_s > 0.0)) throw Error("run_mac_sim: duration must be > 0");
    if (opts.window_size < 1) throw Error("run_mac_sim: window size must be >= 1");
    opts.mac.validate();
    qos.validate();
    return MacSimulation(design, channel, arrival_rate_per_source, qos, opts).run();
}

std::optional<double> lambda_max(const topology::Design& design, const GroundTruthChannel& channel,
                                 const qosmap::QoSSpec& qos, const MacSimOptions& opts, double lo,
                                 double hi, int iterations) {
    if (!(lo > 0.0) || !(hi > lo)) throw Error("lambda_max: need 0 < lo < hi");
    auto meets = [&](double rate) {
        const auto log = run_mac_sim(design, channel, rate, qos, opts);
        for (const auto& [src, s] : log.per_source)
            if (s.generated == 0 || s.p_del_hat() < qos.p_del) return false;
        return true;
    };
    if (!meets(lo)) return std::nullopt;
    if (meets(hi)) return hi;
    for (int i = 0; i < iterations; ++i) {
        const double mid = std::sqrt(lo * hi);
        (meets(mid) ? lo : hi) = mid;
    }
    return lo;
}

LoneHop simulate_lone_hop(const GroundTruthChannel& channel, NodeId tx, NodeId rx,
                          double rssi_min_dbm, double q_max, const qosmap::MacParams& mac,
                          std::mt19937_64& rng) {
    const Timing t(mac);
    LoneHop hop;
    for (int attempt = 1; attempt <= mac.max_tx_attempts; ++attempt) {
        const int be = backoff_exponent(mac, attempt, 0);
        hop.elapsed_us += std::uniform_int_distribution<std::int64_t>(0, (1LL << be) - 1)(rng) * t.unit;
        hop.elapsed_us += t.cca + t.turnaround + t.frame;
        hop.attempts = attempt;
        if (attempt_succeeds(channel, tx, rx, rssi_min_dbm, q_max, rng)) {
            hop.elapsed_us += t.success_tail();
            hop.delivered = true;
            return hop;
        }
        hop.elapsed_us += t.ack_wait;
    }
    return hop;
}

void to_json(nlohmann::json& j, const DeliveryLog& log) {
    nlohmann::json sources = nlohmann::json::object();
    for (const auto& [src, s] : log.per_source) {
        nlohmann::json windows = nlohmann::json::array();
        for (const auto& w : s.windows)
            windows.push_back({{"window_index", w.window_index},
                               {"packets_sent", w.packets_sent},
                               {"packets_delivered_in_time", w.packets_delivered_in_time},
                               {"p_del_hat", w.p_del_hat}});
        sources[std::to_string(src)] = {{"generated", s.generated},
                                        {"delivered", s.delivered},
                                        {"delivered_in_time", s.delivered_in_time},
                                        {"p_del_hat", s.p_del_hat()},
                                        {"windows", windows}};
    }
    j = {{"window_size", log.window_size}, {"sources", sources}};
}

void from_json(const nlohmann::json& j, DeliveryLog& log) {
    log = {};
    log.window_size = j.at("window_size").get<int>();
    for (const auto& [key, s] : j.at("sources").items()) {
        SourceDelivery d;
        d.generated = s.at("generated").get<long>();
        d.delivered = s.at("delivered").get<long>();
        d.delivered_in_time = s.at("delivered_in_time").get<long>();
        for (const auto& w : s.at("windows"))
            d.windows.push_back({w.at("window_index").get<int>(), w.at("packets_sent").get<int>(),
                                 w.at("packets_delivered_in_time").get<int>(),
                                 w.at("p_del_hat").get<double>()});
        log.per_source[std::stoi(key)] = std::move(d);
    }
}

void write_delivery_csv(std::ostream& out, const DeliveryLog& log) {
    out << "source_id,window_index,packets_sent,packets_delivered_in_time,p_del_hat\n";
    for (const auto& [src, s] : log.per_source)
        for (const auto& w : s.windows)
            out << src << ',' << w.window_index << ',' << w.packets_sent << ','
                << w.packets_delivered_in_time << ',' << w.p_del_hat << '\n';
}

}  // namespace relaynet::fieldsim
