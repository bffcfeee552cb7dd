#include "relaynet/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <queue>
#include <tuple>

#include <nlohmann/json.hpp>

#include "relaynet/macsim.hpp"

namespace relaynet::routing {

double ewma_update(double previous, double window_per, double alpha) {
    if (!(previous >= 0.0 && previous <= 1.0) || !(window_per >= 0.0 && window_per <= 1.0))
        throw Error("ewma_update: inputs must lie in [0,1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("ewma_update: alpha must lie in [0,1]");
    const double v = (1.0 - alpha) * window_per + alpha * previous;
    return std::clamp(v, kEstimateFloor, 1.0);
}

double link_cost(double q_hat) { return q_hat >= 1.0 ? kInf : -std::log1p(-q_hat); }

RankUpdate recompute_rank_and_parent(const RplNodeState& node,
                                     const std::map<NodeId, double>& neighbor_ranks,
                                     double max_rank_increase) {
    double best = kInf;
    std::optional<NodeId> best_parent;
    for (NodeId p : node.potential_parents) {
        const auto r_it = neighbor_ranks.find(p);
        const double r = r_it == neighbor_ranks.end() ? kInf : r_it->second;
        if (!std::isfinite(r)) continue;
        if (std::isfinite(node.rank) && !(r < node.rank)) continue;
        const auto q_it = node.link_estimate.find(p);
        const double cand = r + link_cost(q_it == node.link_estimate.end() ? 1.0 : q_it->second);
        if (cand < best) {
            best = cand;
            best_parent = p;
        }
    }
    RankUpdate out{node, false};
    if (!best_parent || best - node.lowest_rank > max_rank_increase) {
        out.state.rank = kInf;
        out.state.preferred_parent.reset();
        out.state.lowest_rank = kInf;
    } else {
        out.state.rank = best;
        out.state.preferred_parent = best_parent;
        out.state.lowest_rank = std::min(node.lowest_rank, best);
    }
    const bool rank_moved = std::isfinite(out.state.rank) != std::isfinite(node.rank) ||
                            (std::isfinite(node.rank) && std::abs(out.state.rank - node.rank) > 1e-9);
    out.changed = rank_moved || out.state.preferred_parent != node.preferred_parent;
    return out;
}

StaticRouteState static_route_step(const StaticRouteState& state, double t_s,
                                   const std::function<bool(const topology::Path&)>& probe,
                                   double period_s) {
    StaticRouteState out = state;
    if (state.routes.size() <= 1) return out;
    if (t_s - state.last_traceroute_s < period_s) return out;
    out.last_traceroute_s = t_s;
    const int k = static_cast<int>(state.routes.size());
    for (int step = 0; step < k; ++step) {
        const int idx = (state.active_index + step) % k;
        if (probe(state.routes[idx])) {
            out.active_index = idx;
            out.delivery_failed = false;
            return out;
        }
    }
    out.delivery_failed = true;
    return out;
}

TriggerDecision repair_trigger_check(const std::vector<double>& windows, double target,
                                     TriggerPolicy policy) {
    int trailing = 0;
    for (auto it = windows.rbegin(); it != windows.rend() && *it < target; ++it) ++trailing;
    return trailing > policy.wait_windows ? TriggerDecision::trigger : TriggerDecision::hold;
}

double ProtocolWindows::mean(NodeId source) const {
    const auto& v = p_del_hat.at(source);
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double ProtocolWindows::mean() const {
    double sum = 0.0;
    long n = 0;
    for (const auto& [src, v] : p_del_hat) {
        sum += std::accumulate(v.begin(), v.end(), 0.0);
        n += static_cast<long>(v.size());
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {

constexpr std::uint64_t kTagRpl = 0x391;
constexpr std::uint64_t kTagStatic = 0x57A;

// Shared operating clock: channel events, drift steps, DAOs and data.
class Operation {
public:
    Operation(const fieldsim::GroundTruthChannel& channel, const OperateConfig& cfg,
              std::uint64_t tag, std::vector<NodeId> sources)
        : channel_(channel), cfg_(cfg), rng_(derive_seed(cfg.seed, tag)), sources_(std::move(sources)) {
        if (!(cfg.data_period_s > 0.0) || !(cfg.duration_s > 0.0))
            throw Error("operate: periods and duration must be > 0");
        if (cfg.delivery_window < 1 || cfg.per_window_attempts < 1)
            throw Error("operate: window sizes must be >= 1");
        for (NodeId s : sources_) outcomes_[s];
    }

    fieldsim::GroundTruthChannel& channel() { return channel_; }
    std::mt19937_64& rng() { return rng_; }
    const OperateConfig& cfg() const { return cfg_; }

    fieldsim::LoneHop hop(NodeId u, NodeId v) {
        return fieldsim::simulate_lone_hop(channel_, u, v, cfg_.rssi_min_dbm, cfg_.q_max, cfg_.mac,
                                           rng_);
    }

    void record_delivery(NodeId source, bool in_time) { outcomes_[source].push_back(in_time); }

    bool in_time(std::int64_t elapsed_us) const {
        return elapsed_us <= std::llround(cfg_.qos.d_max_ms * 1000.0);
    }

    template <class OnDao, class OnData, class OnTick>
    void run(OnDao on_dao, OnData on_data, OnTick on_tick) {
        std::size_t next_event = 0;
        auto events = cfg_.events;
        std::stable_sort(events.begin(), events.end(),
                         [](const auto& a, const auto& b) { return a.at_s < b.at_s; });
        double next_drift = cfg_.drift_period_s > 0.0 ? cfg_.drift_period_s : kInf;
        double next_dao = cfg_.dao_period_s > 0.0 ? 0.0 : kInf;
        double next_data = 0.0;
        while (true) {
            const double t = std::min(next_dao, next_data);
            if (t >= cfg_.duration_s) break;
            while (next_event < events.size() && events[next_event].at_s <= t) {
                const auto& e = events[next_event++];
                channel_.force_shadowing(e.a, e.b, e.shadow_db);
            }
            while (next_drift <= t) {
                channel_.advance_cycles(1);
                next_drift += cfg_.drift_period_s;
            }
            on_tick(t);
            if (next_dao <= t) {
                on_dao(t);
                next_dao += cfg_.dao_period_s;
            }
            if (next_data <= t) {
                for (NodeId s : sources_) on_data(s, t);
                next_data += cfg_.data_period_s;
            }
        }
    }

    std::map<NodeId, std::vector<double>> windows() const {
        std::map<NodeId, std::vector<double>> out;
        const int w = cfg_.delivery_window;
        for (const auto& [src, v] : outcomes_) {
            auto& dst = out[src];
            for (std::size_t i = 0; i + w <= v.size(); i += w)
                dst.push_back(static_cast<double>(std::count(v.begin() + i, v.begin() + i + w, true)) / w);
        }
        return out;
    }

private:
    fieldsim::GroundTruthChannel channel_;
    const OperateConfig& cfg_;
    std::mt19937_64 rng_;
    std::vector<NodeId> sources_;
    std::map<NodeId, std::vector<bool>> outcomes_;
};

struct LinkWindow {
    int attempts = 0;
    int failures = 0;
};

class RplNetwork {
public:
    RplNetwork(const topology::NetworkGraph& g, const OperateConfig& cfg) : cfg_(cfg) {
        sink_ = g.sink();
        for (const auto& n : g.nodes())
            if (n.deployed) ids_.push_back(n.id);
        if (std::find(ids_.begin(), ids_.end(), sink_) == ids_.end())
            throw Error("simulate_rpl: sink is not deployed");
        for (NodeId u : ids_) {
            RplNodeState st;
            st.node_id = u;
            if (u != sink_)
                for (NodeId v : ids_) {
                    const auto* e = g.edge(u, v);
                    if (v != u && e && e->provenance == topology::Provenance::learnt_good)
                        st.potential_parents.insert(v);
                }
            st.rank = u == sink_ ? 0.0 : kInf;
            nodes_[u] = st;
        }
        recompute();
    }

    std::optional<NodeId> next_hop(NodeId u) {
        if (u == sink_) return std::nullopt;
        const auto& st = nodes_.at(u);
        if (st.preferred_parent) return st.preferred_parent;
        if (probe_dirty_) build_probe_tree();
        const auto it = probe_parent_.find(u);
        if (it == probe_parent_.end()) return std::nullopt;
        return it->second;
    }

    void record(NodeId u, NodeId v, const fieldsim::LoneHop& hop, ProtocolWindows& out) {
        out.links_used.insert({u, v});
        bool updated = false;
        auto& w = windows_[{u, v}];
        for (int a = 1; a <= hop.attempts; ++a) {
            ++w.attempts;
            if (!(hop.delivered && a == hop.attempts)) ++w.failures;
            if (w.attempts == cfg_.per_window_attempts) {
                auto& st = nodes_.at(u);
                const auto prev_it = st.link_estimate.find(v);
                const double prev = prev_it == st.link_estimate.end() ? 1.0 : prev_it->second;
                const double per = static_cast<double>(w.failures) / w.attempts;
                const double next = ewma_update(prev, per, cfg_.alpha);
                if (prev_it == st.link_estimate.end() || next != prev) {
                    out.links_updated.insert({u, v});
                    updated = true;
                }
                st.link_estimate[v] = next;
                w = {};
            }
        }
        if (updated) {
            held_.erase(u);
            recompute();
            out.rank_violations += count_violations();
        }
    }

    NodeId sink() const { return sink_; }
    const std::vector<NodeId>& ids() const { return ids_; }
    std::size_t size() const { return ids_.size(); }

private:
    void recompute() {
        probe_dirty_ = true;
        std::map<NodeId, double> ranks;
        for (const auto& [id, st] : nodes_) ranks[id] = st.rank;
        const std::size_t max_passes = 4 * nodes_.size() + 4;
        for (std::size_t pass = 0; pass < max_passes; ++pass) {
            bool any = false;
            for (auto& [id, st] : nodes_) {
                if (id == sink_ || held_.contains(id)) continue;
                auto upd = recompute_rank_and_parent(st, ranks, cfg_.max_rank_increase);
                if (upd.changed) {
                    if (st.preferred_parent && !upd.state.preferred_parent) held_.insert(id);
                    st = std::move(upd.state);
                    ranks[id] = st.rank;
                    any = true;
                }
            }
            if (!any) break;
        }
    }

    long count_violations() const {
        long v = 0;
        for (const auto& [id, st] : nodes_)
            if (st.preferred_parent && !(st.rank > nodes_.at(*st.preferred_parent).rank)) ++v;
        return v;
    }

    // Optimistic shortest-path tree toward the sink used by detached nodes:
    // unmeasured links cost nothing, ties go to fewer hops, then lower id.
    void build_probe_tree() {
        probe_dirty_ = false;
        probe_parent_.clear();
        using Key = std::tuple<double, int, NodeId>;
        std::map<NodeId, Key> best;
        std::priority_queue<std::pair<Key, NodeId>, std::vector<std::pair<Key, NodeId>>,
                            std::greater<>>
            pq;
        best[sink_] = {0.0, 0, -1};
        pq.push({best[sink_], sink_});
        std::set<NodeId> done;
        while (!pq.empty()) {
            const auto [key, p] = pq.top();
            pq.pop();
            if (!done.insert(p).second) continue;
            for (const auto& [u, st] : nodes_) {
                if (done.contains(u) || !st.potential_parents.contains(p)) continue;
                const auto q = st.link_estimate.find(p);
                const double w = q == st.link_estimate.end() ? 0.0 : link_cost(q->second);
                if (!std::isfinite(w)) continue;
                const Key cand{std::get<0>(key) + w, std::get<1>(key) + 1, p};
                const auto it = best.find(u);
                if (it == best.end() || cand < it->second) {
                    best[u] = cand;
                    probe_parent_[u] = p;
                    pq.push({cand, u});
                }
            }
        }
    }

    const OperateConfig& cfg_;
    NodeId sink_ = 0;
    std::vector<NodeId> ids_;
    std::map<NodeId, RplNodeState> nodes_;
    std::map<std::pair<NodeId, NodeId>, LinkWindow> windows_;
    std::map<NodeId, NodeId> probe_parent_;
    // Detached nodes stay detached until one of their own links is re-estimated.
    std::set<NodeId> held_;
    bool probe_dirty_ = true;
};

}  // namespace

ProtocolWindows simulate_rpl(const topology::NetworkGraph& graph,
                             const fieldsim::GroundTruthChannel& channel,
                             const OperateConfig& cfg) {
    ProtocolWindows out;
    out.protocol = "rpl";
    RplNetwork net(graph, cfg);
    std::vector<NodeId> sources;
    for (NodeId s : graph.sources())
        if (graph.node(s).deployed) sources.push_back(s);
    Operation op(channel, cfg, kTagRpl, sources);
    const std::size_t hop_limit = net.size();

    auto on_dao = [&](double) {
        for (NodeId u : net.ids()) {
            const auto nh = net.next_hop(u);
            if (!nh) continue;
            net.record(u, *nh, op.hop(u, *nh), out);
        }
    };
    auto on_data = [&](NodeId s, double) {
        NodeId u = s;
        std::int64_t elapsed = 0;
        for (std::size_t hops = 0; u != net.sink(); ++hops) {
            const auto nh = hops < hop_limit ? net.next_hop(u) : std::nullopt;
            if (!nh) {
                op.record_delivery(s, false);
                return;
            }
            const auto h = op.hop(u, *nh);
            net.record(u, *nh, h, out);
            if (!h.delivered) {
                op.record_delivery(s, false);
                return;
            }
            elapsed += h.elapsed_us;
            u = *nh;
        }
        op.record_delivery(s, op.in_time(elapsed));
    };
    op.run(on_dao, on_data, [](double) {});
    out.p_del_hat = op.windows();
    return out;
}

ProtocolWindows simulate_static(const topology::Design& design,
                                const fieldsim::GroundTruthChannel& channel,
                                const OperateConfig& cfg) {
    ProtocolWindows out;
    out.protocol = "static";
    std::vector<NodeId> sources;
    std::map<NodeId, StaticRouteState> state;
    for (const auto& [src, routes] : design.routes) {
        if (routes.empty()) throw Error("simulate_static: source without routes");
        sources.push_back(src);
        state[src].routes = routes;
        state[src].last_traceroute_s = 0.0;
    }
    Operation op(channel, cfg, kTagStatic, sources);

    auto walk = [&](const topology::Path& path, std::int64_t* elapsed) {
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            const auto h = op.hop(path[i], path[i + 1]);
            out.links_used.insert({path[i], path[i + 1]});
            if (!h.delivered) return false;
            if (elapsed) *elapsed += h.elapsed_us;
        }
        return true;
    };
    auto on_tick = [&](double t) {
        for (auto& [src, st] : state)
            st = static_route_step(
                st, t, [&](const topology::Path& p) { return walk(p, nullptr); },
                cfg.traceroute_period_s);
    };
    auto on_data = [&](NodeId s, double) {
        const auto& st = state.at(s);
        if (st.delivery_failed) {
            op.record_delivery(s, false);
            return;
        }
        std::int64_t elapsed = 0;
        const bool ok = walk(st.routes[st.active_index], &elapsed);
        op.record_delivery(s, ok && op.in_time(elapsed));
    };
    op.run([](double) {}, on_data, on_tick);
    out.p_del_hat = op.windows();
    return out;
}

topology::NetworkGraph ground_truth_graph(const topology::NetworkGraph& layout,
                                          const fieldsim::GroundTruthChannel& channel,
                                          const std::set<NodeId>& nodes, double rssi_min_dbm,
                                          double p_out_target) {
    std::vector<topology::GraphNode> gn;
    for (NodeId id : nodes) {
        auto n = layout.node(id);
        n.deployed = true;
        gn.push_back(n);
    }
    topology::NetworkGraph g(gn);
    for (auto a = nodes.begin(); a != nodes.end(); ++a)
        for (auto b = std::next(a); b != nodes.end(); ++b) {
            const double p = channel.analytic_outage(*a, *b, rssi_min_dbm);
            topology::Edge e;
            e.a = *a;
            e.b = *b;
            e.p_out_hat = p;
            e.provenance = p <= p_out_target ? topology::Provenance::learnt_good
                                             : topology::Provenance::learnt_bad;
            g.set_edge(e);
        }
    return g;
}

bool qos_path_exists(const topology::NetworkGraph& truth, NodeId source, int h_max,
                     const qosmap::QoSSpec& qos, double q_max) {
    const qosmap::InTimeTable table(q_max, qos.d_max_ms);
    const NodeId sink = truth.sink();
    std::optional<topology::Path> found;
    topology::Path path{source};
    std::vector<double> outages;
    std::set<NodeId> on_path{source};
    std::function<void()> dfs = [&]() {
        if (found) return;
        const NodeId u = path.back();
        if (u == sink) {
            if (qosmap::predict_path_pdel(outages, table) >= qos.p_del) found = path;
            return;
        }
        if (static_cast<int>(path.size()) - 1 >= h_max) return;
        for (const auto& n : truth.nodes()) {
            const NodeId v = n.id;
            if (on_path.contains(v) || !truth.traversable(u, v)) continue;
            const auto* e = truth.edge(u, v);
            path.push_back(v);
            on_path.insert(v);
            outages.push_back(e->p_out_hat.value_or(0.0));
            dfs();
            outages.pop_back();
            on_path.erase(v);
            path.pop_back();
        }
    };
    dfs();
    if (!found) return false;

    // Independent check with only this source in play.
    std::vector<topology::GraphNode> gn = truth.nodes();
    for (auto& n : gn)
        if (n.role == Role::source && n.id != source) n.role = Role::potential_relay;
    topology::NetworkGraph g(gn);
    for (const auto& [key, e] : truth.edges()) g.set_edge(e);
    topology::Design d;
    d.h_max = h_max;
    d.routes[source] = {*found};
    for (std::size_t i = 1; i + 1 < found->size(); ++i)
        if (g.node((*found)[i]).role == Role::potential_relay) d.relays_used.insert((*found)[i]);
    return topology::validate_design(g, d, 1).empty();
}

void write_windows_csv(std::ostream& out, const std::vector<ProtocolWindows>& runs) {
    out << "window_index,source_id,p_del_hat,protocol\n";
    for (const auto& r : runs)
        for (const auto& [src, v] : r.p_del_hat)
            for (std::size_t i = 0; i < v.size(); ++i)
                out << i << ',' << src << ',' << v[i] << ',' << r.protocol << '\n';
}

void to_json(nlohmann::json& j, const ProtocolWindows& w) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [src, v] : w.p_del_hat) per[std::to_string(src)] = v;
    j = {{"protocol", w.protocol},
         {"p_del_hat", per},
         {"mean_p_del_hat", w.mean()},
         {"rank_violations", w.rank_violations}};
}

}  // namespace relaynet::routing
