#include "relaynet/topology.hpp"

#include <algorithm>
#include <deque>
#include <functional>

#include <nlohmann/json.hpp>

namespace relaynet::topology {

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::modeled: return "modeled";
        case Provenance::learnt_good: return "learnt_good";
        case Provenance::learnt_bad: return "learnt_bad";
    }
    return "?";
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "modeled") return Provenance::modeled;
    if (s == "learnt_good") return Provenance::learnt_good;
    if (s == "learnt_bad") return Provenance::learnt_bad;
    throw Error("unknown edge provenance '" + s + "'");
}

// ---- NetworkGraph ---------------------------------------------------------

NetworkGraph::NetworkGraph(std::vector<GraphNode> nodes) : nodes_(std::move(nodes)) {
    std::sort(nodes_.begin(), nodes_.end(),
              [](const GraphNode& a, const GraphNode& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (!index_.emplace(nodes_[i].id, i).second)
            throw Error("graph: duplicate node id " + std::to_string(nodes_[i].id));
}

const GraphNode& NetworkGraph::node(NodeId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("graph: unknown node " + std::to_string(id));
    return nodes_[it->second];
}

GraphNode& NetworkGraph::node(NodeId id) {
    return const_cast<GraphNode&>(std::as_const(*this).node(id));
}

NodeId NetworkGraph::sink() const {
    for (const auto& n : nodes_)
        if (n.role == Role::sink) return n.id;
    throw Error("graph: no sink");
}

std::vector<NodeId> NetworkGraph::sources() const {
    std::vector<NodeId> out;
    for (const auto& n : nodes_)
        if (n.role == Role::source) out.push_back(n.id);
    return out;
}

std::vector<NodeId> NetworkGraph::potential_relays() const {
    std::vector<NodeId> out;
    for (const auto& n : nodes_)
        if (n.role == Role::potential_relay) out.push_back(n.id);
    return out;
}

std::set<NodeId> NetworkGraph::deployed() const {
    std::set<NodeId> out;
    for (const auto& n : nodes_)
        if (n.deployed) out.insert(n.id);
    return out;
}

void NetworkGraph::set_edge(const Edge& e) {
    if (e.a == e.b) throw Error("graph: self loop");
    if (!has_node(e.a) || !has_node(e.b)) throw Error("graph: edge endpoint not in graph");
    const auto key = PairKey::of(e.a, e.b);
    Edge stored = e;
    stored.a = key.a;
    stored.b = key.b;
    auto it = edges_.find(key);
    if (it != edges_.end() && it->second.provenance != Provenance::modeled &&
        stored.provenance == Provenance::modeled)
        return;
    edges_[key] = stored;
}

void NetworkGraph::remove_edge(NodeId a, NodeId b) { edges_.erase(PairKey::of(a, b)); }

const Edge* NetworkGraph::edge(NodeId a, NodeId b) const {
    auto it = edges_.find(PairKey::of(a, b));
    return it == edges_.end() ? nullptr : &it->second;
}

bool NetworkGraph::traversable(NodeId a, NodeId b) const {
    const Edge* e = edge(a, b);
    return e != nullptr && e->traversable();
}

void NetworkGraph::validate() const {
    int sinks = 0;
    for (const auto& n : nodes_) sinks += n.role == Role::sink;
    if (sinks != 1) throw Error("graph: exactly one sink required");
    for (const auto& [k, e] : edges_) {
        if (!has_node(e.a) || !has_node(e.b) || e.a >= e.b) throw Error("graph: malformed edge");
        if (e.p_out_hat && !(*e.p_out_hat >= 0.0 && *e.p_out_hat <= 1.0))
            throw Error("graph: edge outage outside [0,1]");
    }
}

// ---- graph construction ---------------------------------------------------

NetworkGraph build_model_graph(const DeploymentScenario& scenario,
                               const linkmodel::LinkModel& model) {
    std::vector<GraphNode> nodes;
    for (const auto& n : scenario.nodes) nodes.push_back({n.id, n.pos, n.role, false});
    NetworkGraph g(std::move(nodes));
    const auto& ns = g.nodes();
    for (std::size_t i = 0; i < ns.size(); ++i)
        for (std::size_t j = i + 1; j < ns.size(); ++j)
            if (distance(ns[i].pos, ns[j].pos) <= model.r_max_m)
                g.set_edge({ns[i].id, ns[j].id, Provenance::modeled, std::nullopt});
    return g;
}

NetworkGraph hybrid_graph(const NetworkGraph& g) {
    NetworkGraph h(g.nodes());
    for (const auto& [key, e] : g.edges()) {
        if (!e.traversable()) continue;
        const bool both_deployed = g.node(e.a).deployed && g.node(e.b).deployed;
        if (both_deployed && e.provenance == Provenance::modeled) continue;
        h.set_edge(e);
    }
    return h;
}

NetworkGraph learnt_graph(const NetworkGraph& g) {
    std::vector<GraphNode> nodes;
    for (const auto& n : g.nodes())
        if (n.deployed) nodes.push_back(n);
    NetworkGraph l(std::move(nodes));
    for (const auto& [key, e] : g.edges())
        if (e.provenance == Provenance::learnt_good && l.has_node(e.a) && l.has_node(e.b))
            l.set_edge(e);
    return l;
}

// ---- min-cost flow on the hop-layered expansion ---------------------------

namespace {

class FlowNetwork {
public:
    struct Arc {
        int to;
        int rev;
        int cap;
        int orig_cap;
        long cost;
    };

    explicit FlowNetwork(int n) : adj_(static_cast<std::size_t>(n)) {}

    void add_arc(int u, int v, int cap, long cost) {
        adj_[u].push_back({v, static_cast<int>(adj_[v].size()), cap, cap, cost});
        adj_[v].push_back({u, static_cast<int>(adj_[u].size()) - 1, 0, 0, -cost});
    }

    /// Successive shortest paths; returns (flow, cost).
    std::pair<int, long> min_cost_flow(int s, int t, int want) {
        const int n = static_cast<int>(adj_.size());
        int flow = 0;
        long cost = 0;
        std::vector<long> dist(n);
        std::vector<int> prev_node(n), prev_arc(n);
        std::vector<char> in_queue(n);
        while (flow < want) {
            std::fill(dist.begin(), dist.end(), std::numeric_limits<long>::max());
            std::fill(in_queue.begin(), in_queue.end(), 0);
            dist[s] = 0;
            std::deque<int> queue{s};
            in_queue[s] = 1;
            while (!queue.empty()) {
                const int u = queue.front();
                queue.pop_front();
                in_queue[u] = 0;
                for (int i = 0; i < static_cast<int>(adj_[u].size()); ++i) {
                    const Arc& a = adj_[u][i];
                    if (a.cap <= 0) continue;
                    const long nd = dist[u] + a.cost;
                    if (nd < dist[a.to]) {
                        dist[a.to] = nd;
                        prev_node[a.to] = u;
                        prev_arc[a.to] = i;
                        if (!in_queue[a.to]) {
                            in_queue[a.to] = 1;
                            queue.push_back(a.to);
                        }
                    }
                }
            }
            if (dist[t] == std::numeric_limits<long>::max()) break;
            for (int v = t; v != s; v = prev_node[v]) {
                Arc& a = adj_[prev_node[v]][prev_arc[v]];
                a.cap -= 1;
                adj_[v][a.rev].cap += 1;
            }
            ++flow;
            cost += dist[t];
        }
        return {flow, cost};
    }

    std::vector<Arc>& arcs(int u) { return adj_[u]; }

private:
    std::vector<std::vector<Arc>> adj_;
};

struct Problem {
    NodeId source = 0;
    NodeId sink = 0;
    int k = 1;
    int h_max = 1;
    std::vector<NodeId> inter;           // usable intermediates, sorted
    std::map<NodeId, int> inter_index;   // id -> position in `inter`
    std::vector<int> inter_cost;
    std::map<NodeId, std::vector<NodeId>> nbrs;  // traversable, non-forbidden
    long relay_weight = 1;
};

struct Relaxed {
    std::vector<Path> paths;  // may revisit nodes across layers
    long cost = 0;
};

// Layer restriction per physical node: -1 forbids it entirely, l >= 1
// admits it only at hop layer l.
using Restrictions = std::map<NodeId, int>;

std::optional<Relaxed> solve_relaxed(const Problem& p, const Restrictions& restr) {
    const int layers = p.h_max - 1;  // intermediate layers 1..h_max-1
    const int n_inter = static_cast<int>(p.inter.size());
    const int src = 0;
    const int snk = 1;
    auto in_id = [&](int i, int l) { return 2 + 2 * (i * layers + (l - 1)); };
    auto out_id = [&](int i, int l) { return in_id(i, l) + 1; };
    FlowNetwork net(2 + 2 * std::max(0, n_inter * layers));

    auto allowed = [&](NodeId v, int l) {
        auto it = restr.find(v);
        return it == restr.end() || it->second == l;
    };

    for (int i = 0; i < n_inter; ++i)
        for (int l = 1; l <= layers; ++l)
            if (allowed(p.inter[i], l))
                net.add_arc(in_id(i, l), out_id(i, l), 1, p.inter_cost[i] * p.relay_weight);

    auto connect_from = [&](int from, NodeId u, int layer) {
        auto it = p.nbrs.find(u);
        if (it == p.nbrs.end()) return;
        for (NodeId v : it->second) {
            if (v == p.sink) {
                net.add_arc(from, snk, 1, 1);
                continue;
            }
            auto iv = p.inter_index.find(v);
            if (iv == p.inter_index.end() || layer + 1 > layers) continue;
            if (!allowed(v, layer + 1)) continue;
            net.add_arc(from, in_id(iv->second, layer + 1), 1, 1);
        }
    };
    connect_from(src, p.source, 0);
    for (int i = 0; i < n_inter; ++i)
        for (int l = 1; l <= layers; ++l)
            if (allowed(p.inter[i], l)) connect_from(out_id(i, l), p.inter[i], l);

    const auto [flow, cost] = net.min_cost_flow(src, snk, p.k);
    if (flow < p.k) return std::nullopt;

    // Map flow-network ids back to physical nodes and decompose.
    auto physical = [&](int id) -> NodeId {
        const int off = (id - 2) / 2;
        return p.inter[off / layers];
    };
    Relaxed r;
    r.cost = cost;
    for (int path = 0; path < p.k; ++path) {
        Path nodes{p.source};
        int u = src;
        while (u != snk) {
            bool moved = false;
            for (auto& a : net.arcs(u)) {
                if (a.orig_cap > 0 && a.cap < a.orig_cap) {
                    a.cap += 1;  // consume one unit of flow
                    u = a.to;
                    moved = true;
                    break;
                }
            }
            if (!moved) throw Error("flow decomposition failed");
            if (u == snk)
                nodes.push_back(p.sink);
            else if ((u - 2) % 2 == 0)
                nodes.push_back(physical(u));
        }
        r.paths.push_back(std::move(nodes));
    }
    return r;
}

/// Removes loops from a walk, keeping the first visit of each node.
Path shortcut(const Path& walk) {
    Path out;
    for (NodeId v : walk) {
        auto it = std::find(out.begin(), out.end(), v);
        if (it != out.end())
            out.erase(it + 1, out.end());
        else
            out.push_back(v);
    }
    return out;
}

long true_cost(const Problem& p, const std::vector<Path>& paths) {
    long c = 0;
    for (const auto& path : paths) {
        c += static_cast<long>(path.size()) - 1;
        for (std::size_t i = 1; i + 1 < path.size(); ++i)
            c += p.inter_cost[p.inter_index.at(path[i])] * p.relay_weight;
    }
    return c;
}

/// First node shared by two different paths, with the layers it occupies.
std::optional<std::pair<NodeId, std::set<int>>> find_conflict(const std::vector<Path>& paths) {
    std::map<NodeId, std::vector<std::pair<int, int>>> seen;  // node -> (path, layer)
    for (int pi = 0; pi < static_cast<int>(paths.size()); ++pi)
        for (int l = 1; l + 1 < static_cast<int>(paths[pi].size()); ++l)
            seen[paths[pi][l]].emplace_back(pi, l);
    for (const auto& [v, uses] : seen) {
        std::set<int> owners;
        std::set<int> layers;
        for (auto [pi, l] : uses) {
            owners.insert(pi);
            layers.insert(l);
        }
        if (owners.size() > 1) return std::make_pair(v, layers);
    }
    return std::nullopt;
}

constexpr int kBranchBudget = 600;

}  // namespace

std::optional<std::vector<Path>> hop_bounded_disjoint_paths(
    const NetworkGraph& g, NodeId source, int k, int h_max, const RelayCost& relay_cost,
    const std::set<NodeId>& forbidden, SolverStats* stats) {
    if (k < 1) throw Error("hop_bounded_disjoint_paths: k must be >= 1");
    if (h_max < 1) throw Error("hop_bounded_disjoint_paths: h_max must be >= 1");

    Problem p;
    p.source = source;
    p.sink = g.sink();
    p.k = k;
    p.h_max = h_max;
    if (forbidden.contains(source)) return std::nullopt;

    for (const auto& n : g.nodes()) {
        if (n.id == source || n.id == p.sink || forbidden.contains(n.id)) continue;
        if (n.role == Role::source) {
            p.inter.push_back(n.id);
            p.inter_cost.push_back(0);
        } else if (auto it = relay_cost.find(n.id); it != relay_cost.end()) {
            p.inter.push_back(n.id);
            p.inter_cost.push_back(it->second);
        }
    }
    for (std::size_t i = 0; i < p.inter.size(); ++i) p.inter_index[p.inter[i]] = static_cast<int>(i);
    auto usable = [&](NodeId v) { return v == source || v == p.sink || p.inter_index.contains(v); };
    for (const auto& [key, e] : g.edges()) {
        if (!e.traversable() || !usable(e.a) || !usable(e.b)) continue;
        if (e.a != p.sink) p.nbrs[e.a].push_back(e.b);
        if (e.b != p.sink) p.nbrs[e.b].push_back(e.a);
    }
    for (auto& [v, list] : p.nbrs) std::sort(list.begin(), list.end());
    p.relay_weight = static_cast<long>(k) * h_max + 1;

    SolverStats local;
    SolverStats& st = stats ? *stats : local;

    std::optional<std::vector<Path>> best;
    long best_cost = std::numeric_limits<long>::max();

    // Depth-first branch and bound over per-node layer restrictions.
    std::function<void(const Restrictions&, const Relaxed&)> explore =
        [&](const Restrictions& restr, const Relaxed& relaxed) {
            std::vector<Path> paths;
            for (const auto& w : relaxed.paths) paths.push_back(shortcut(w));
            auto conflict = find_conflict(paths);
            if (!conflict) {
                const long c = true_cost(p, paths);
                if (c < best_cost) {
                    best_cost = c;
                    best = std::move(paths);
                }
                return;
            }
            const NodeId v = conflict->first;
            std::vector<std::pair<Restrictions, Relaxed>> children;
            for (int l = 0; l < h_max; ++l) {  // l == 0 encodes "forbidden"
                if (st.flow_solves >= kBranchBudget) {
                    st.exhausted = true;
                    break;
                }
                Restrictions child = restr;
                child[v] = l == 0 ? -1 : l;
                ++st.flow_solves;
                auto r = solve_relaxed(p, child);
                if (r && r->cost < best_cost) children.emplace_back(std::move(child), std::move(*r));
            }
            std::stable_sort(children.begin(), children.end(),
                             [](const auto& a, const auto& b) { return a.second.cost < b.second.cost; });
            for (const auto& [child, r] : children)
                if (r.cost < best_cost) explore(child, r);
        };

    ++st.flow_solves;
    auto root = solve_relaxed(p, {});
    if (!root) return std::nullopt;
    explore({}, *root);
    return best;
}

// ---- design extraction ----------------------------------------------------

namespace {

std::set<NodeId> relays_on(const NetworkGraph& g, const std::map<NodeId, std::vector<Path>>& routes) {
    std::set<NodeId> out;
    for (const auto& [s, paths] : routes)
        for (const auto& path : paths)
            for (std::size_t i = 1; i + 1 < path.size(); ++i)
                if (g.node(path[i]).role == Role::potential_relay) out.insert(path[i]);
    return out;
}

std::optional<std::map<NodeId, std::vector<Path>>> solve_all(const NetworkGraph& g,
                                                              const std::vector<NodeId>& sources,
                                                              int k, int h_max,
                                                              const RelayCost& cost, Exec exec) {
    const auto n = static_cast<long>(sources.size());
    std::vector<std::optional<std::vector<Path>>> results(sources.size());
    if (exec == Exec::serial) {
        for (long i = 0; i < n; ++i)
            results[i] = hop_bounded_disjoint_paths(g, sources[i], k, h_max, cost);
    } else {
#pragma omp parallel for schedule(dynamic, 1)
        for (long i = 0; i < n; ++i)
            results[i] = hop_bounded_disjoint_paths(g, sources[i], k, h_max, cost);
    }
    std::map<NodeId, std::vector<Path>> routes;
    for (long i = 0; i < n; ++i) {
        if (!results[i]) return std::nullopt;
        routes[sources[i]] = std::move(*results[i]);
    }
    return routes;
}

}  // namespace

std::map<NodeId, int> traversal_counts(const Design& d, const NetworkGraph& g) {
    std::map<NodeId, int> counts;
    for (NodeId r : d.relays_used) counts[r] = 0;
    for (const auto& [s, paths] : d.routes)
        for (const auto& path : paths)
            for (std::size_t i = 1; i + 1 < path.size(); ++i)
                if (g.node(path[i]).role == Role::potential_relay) ++counts[path[i]];
    return counts;
}

std::optional<Design> extract_design(const NetworkGraph& g, int h_max, int k,
                                     const DesignOptions& opts) {
    const NodeId sink = g.sink();
    std::vector<NodeId> sources = g.sources();
    const Point sink_pos = g.node(sink).pos;
    std::stable_sort(sources.begin(), sources.end(), [&](NodeId a, NodeId b) {
        const double da = distance(g.node(a).pos, sink_pos);
        const double db = distance(g.node(b).pos, sink_pos);
        return da != db ? da > db : a < b;
    });

    std::set<NodeId> candidates;
    if (opts.candidate_relays) {
        for (NodeId r : *opts.candidate_relays)
            if (g.has_node(r) && g.node(r).role == Role::potential_relay) candidates.insert(r);
    } else {
        for (NodeId r : g.potential_relays()) candidates.insert(r);
    }
    std::set<NodeId> free;
    for (NodeId r : opts.free_relays)
        if (g.has_node(r) && g.node(r).role == Role::potential_relay) {
            free.insert(r);
            candidates.insert(r);
        }

    // Phase 1: greedy initial feasible solution.
    std::set<NodeId> selected;
    std::map<NodeId, std::vector<Path>> routes;
    for (NodeId s : sources) {
        RelayCost cost;
        for (NodeId r : candidates) cost[r] = (free.contains(r) || selected.contains(r)) ? 0 : 1;
        auto paths = hop_bounded_disjoint_paths(g, s, k, h_max, cost);
        if (!paths) return std::nullopt;
        routes[s] = *paths;
        for (NodeId r : relays_on(g, {{s, *paths}}))
            if (!free.contains(r)) selected.insert(r);
    }

    // Phase 2: sequential pruning, least-traversed relays first.
    for (bool removed_any = true; removed_any;) {
        removed_any = false;
        Design current{selected, routes, h_max};
        const auto counts = traversal_counts(current, g);
        std::vector<NodeId> order(selected.begin(), selected.end());
        std::stable_sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
            const int ca = counts.contains(a) ? counts.at(a) : 0;
            const int cb = counts.contains(b) ? counts.at(b) : 0;
            return ca != cb ? ca < cb : a < b;
        });
        for (NodeId r : order) {
            if (!selected.contains(r)) continue;
            RelayCost cost;
            for (NodeId x : selected)
                if (x != r) cost[x] = 0;
            for (NodeId x : free) cost[x] = 0;
            auto trial = solve_all(g, sources, k, h_max, cost, opts.exec);
            if (!trial) continue;
            routes = std::move(*trial);
            selected.clear();
            for (NodeId x : relays_on(g, routes))
                if (!free.contains(x)) selected.insert(x);
            removed_any = true;
        }
    }

    Design d;
    d.routes = std::move(routes);
    d.relays_used = relays_on(g, d.routes);
    d.h_max = h_max;
    return d;
}

std::optional<Design> evaluate_learnt(const NetworkGraph& g, int h_max, int k, Exec exec) {
    const NetworkGraph lg = learnt_graph(g);
    if (!lg.has_node(g.sink())) return std::nullopt;
    for (NodeId s : g.sources())
        if (!lg.has_node(s)) return std::nullopt;
    DesignOptions opts;
    opts.exec = exec;
    return extract_design(lg, h_max, k, opts);
}

std::optional<Augmentation> augment(const NetworkGraph& g, int h_max, int k, Exec exec) {
    const NetworkGraph hg = hybrid_graph(g);
    DesignOptions opts;
    opts.exec = exec;
    for (NodeId r : g.potential_relays())
        if (g.node(r).deployed) opts.free_relays.insert(r);
    auto d = extract_design(hg, h_max, k, opts);
    if (!d) return std::nullopt;
    Augmentation a;
    for (NodeId r : d->relays_used)
        if (!g.node(r).deployed) a.additional_relays.insert(r);
    a.design = std::move(*d);
    return a;
}

// ---- validation -----------------------------------------------------------

std::vector<std::string> validate_design(const NetworkGraph& g, const Design& d, int k) {
    std::vector<std::string> errs;
    auto err = [&](std::string m) { errs.push_back(std::move(m)); };
    const NodeId sink = g.sink();
    std::set<NodeId> seen_relays;
    for (NodeId s : g.sources()) {
        auto it = d.routes.find(s);
        if (it == d.routes.end()) {
            err("source " + std::to_string(s) + " has no routes");
            continue;
        }
        const auto& paths = it->second;
        if (static_cast<int>(paths.size()) < k)
            err("source " + std::to_string(s) + " has fewer than k routes");
        std::set<NodeId> used_inter;
        for (const auto& path : paths) {
            const std::string tag = "source " + std::to_string(s) + ": ";
            if (path.size() < 2 || path.front() != s || path.back() != sink) {
                err(tag + "route does not run source -> sink");
                continue;
            }
            if (static_cast<int>(path.size()) - 1 > d.h_max) err(tag + "route exceeds h_max");
            std::set<NodeId> in_path(path.begin(), path.end());
            if (in_path.size() != path.size()) err(tag + "route revisits a node");
            for (std::size_t i = 0; i + 1 < path.size(); ++i)
                if (!g.traversable(path[i], path[i + 1]))
                    err(tag + "untraversable hop " + std::to_string(path[i]) + "-" +
                        std::to_string(path[i + 1]));
            for (std::size_t i = 1; i + 1 < path.size(); ++i) {
                const NodeId v = path[i];
                if (!g.has_node(v)) {
                    err(tag + "unknown node");
                    continue;
                }
                if (!used_inter.insert(v).second) err(tag + "routes share node " + std::to_string(v));
                const Role role = g.node(v).role;
                if (role == Role::sink) err(tag + "sink used as intermediate");
                if (role == Role::potential_relay) {
                    seen_relays.insert(v);
                    if (!d.relays_used.contains(v))
                        err(tag + "relay " + std::to_string(v) + " missing from relays_used");
                }
            }
        }
    }
    for (NodeId r : d.relays_used)
        if (!seen_relays.contains(r)) err("relay " + std::to_string(r) + " unused by every route");
    return errs;
}

// ---- JSON -----------------------------------------------------------------

void to_json(nlohmann::json& j, const NetworkGraph& g) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : g.nodes())
        nodes.push_back({{"id", n.id}, {"x_m", n.pos.x}, {"y_m", n.pos.y},
                         {"role", to_string(n.role)}, {"deployed", n.deployed}});
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [k, e] : g.edges()) {
        nlohmann::json je = {{"a", e.a}, {"b", e.b}, {"provenance", to_string(e.provenance)}};
        if (e.p_out_hat) je["p_out_hat"] = *e.p_out_hat;
        edges.push_back(std::move(je));
    }
    j = {{"nodes", nodes}, {"edges", edges}};
}

void from_json(const nlohmann::json& j, NetworkGraph& g) {
    std::vector<GraphNode> nodes;
    for (const auto& n : j.at("nodes"))
        nodes.push_back({n.at("id").get<NodeId>(),
                         {n.at("x_m").get<double>(), n.at("y_m").get<double>()},
                         role_from_string(n.at("role").get<std::string>()),
                         n.value("deployed", false)});
    g = NetworkGraph(std::move(nodes));
    for (const auto& e : j.at("edges")) {
        Edge edge{e.at("a").get<NodeId>(), e.at("b").get<NodeId>(),
                  provenance_from_string(e.at("provenance").get<std::string>()), std::nullopt};
        if (e.contains("p_out_hat")) edge.p_out_hat = e.at("p_out_hat").get<double>();
        g.set_edge(edge);
    }
    g.validate();
}

void to_json(nlohmann::json& j, const Design& d) {
    nlohmann::json routes = nlohmann::json::object();
    for (const auto& [s, paths] : d.routes) routes[std::to_string(s)] = paths;
    j = {{"relays_used", d.relays_used}, {"routes", routes}, {"h_max", d.h_max}};
}

void from_json(const nlohmann::json& j, Design& d) {
    d = {};
    d.relays_used = j.at("relays_used").get<std::set<NodeId>>();
    d.h_max = j.at("h_max").get<int>();
    for (const auto& [s, paths] : j.at("routes").items())
        d.routes[std::stoi(s)] = paths.get<std::vector<Path>>();
}

}  // namespace relaynet::topology
