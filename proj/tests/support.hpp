#pragma once

// Small fixtures and brute-force oracles shared by the unit tests and the
// acceptance runner. Nothing here calls the solver it checks.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "relaynet/scenario.hpp"
#include "relaynet/topology.hpp"

namespace relaynet::testing {

inline linkmodel::LinkModel model_rmax(double r_max) {
    linkmodel::LinkModel m;
    m.r_max_m = r_max;
    m.p_out_target = 0.05;
    return m;
}

// sink (0,0); relays 5,10,15 at (5,0),(10,0),(15,0); source 20 at (20,0).
inline DeploymentScenario line5() {
    DeploymentScenario s;
    s.nodes = {{0, {0, 0}, Role::sink},
               {5, {5, 0}, Role::potential_relay},
               {10, {10, 0}, Role::potential_relay},
               {15, {15, 0}, Role::potential_relay},
               {20, {20, 0}, Role::source}};
    s.link_model = model_rmax(8.0);
    return s;
}

// sink 0 (0,0); source 9 (12,0); relays A=1 (6,4), B=2 (6,-4), C=3 (6,0).
inline DeploymentScenario diamond() {
    DeploymentScenario s;
    s.nodes = {{0, {0, 0}, Role::sink},
               {9, {12, 0}, Role::source},
               {1, {6, 4}, Role::potential_relay},
               {2, {6, -4}, Role::potential_relay},
               {3, {6, 0}, Role::potential_relay}};
    s.link_model = model_rmax(8.0);
    return s;
}

using Adjacency = std::map<NodeId, std::set<NodeId>>;

inline Adjacency adjacency(const topology::NetworkGraph& g, const std::set<NodeId>& allowed) {
    Adjacency adj;
    for (NodeId id : allowed) adj[id];
    for (const auto& [key, e] : g.edges())
        if (e.traversable() && allowed.contains(e.a) && allowed.contains(e.b)) {
            adj[e.a].insert(e.b);
            adj[e.b].insert(e.a);
        }
    return adj;
}

// Every simple path source -> sink with at most h_max hops.
inline std::vector<topology::Path> all_paths(const Adjacency& adj, NodeId source, NodeId sink,
                                             int h_max) {
    std::vector<topology::Path> out;
    topology::Path cur{source};
    std::set<NodeId> on{source};
    std::function<void(NodeId)> dfs = [&](NodeId u) {
        if (u == sink) {
            out.push_back(cur);
            return;
        }
        if (static_cast<int>(cur.size()) - 1 >= h_max) return;
        for (NodeId v : adj.at(u)) {
            if (on.contains(v)) continue;
            cur.push_back(v);
            on.insert(v);
            dfs(v);
            on.erase(v);
            cur.pop_back();
        }
    };
    if (adj.contains(source)) dfs(source);
    return out;
}

inline bool internally_disjoint(const topology::Path& a, const topology::Path& b) {
    for (std::size_t i = 1; i + 1 < a.size(); ++i)
        if (std::find(b.begin() + 1, b.end() - 1, a[i]) != b.end() - 1) return false;
    return true;
}

// True when some choice of k internally node-disjoint paths exists.
inline bool has_k_disjoint(const std::vector<topology::Path>& paths, int k) {
    if (k <= 0) return true;
    if (k == 1) return !paths.empty();
    std::vector<std::size_t> chosen;
    std::function<bool(std::size_t)> pick = [&](std::size_t from) {
        if (static_cast<int>(chosen.size()) == k) return true;
        for (std::size_t i = from; i < paths.size(); ++i) {
            bool ok = true;
            for (std::size_t c : chosen)
                if (!internally_disjoint(paths[c], paths[i])) {
                    ok = false;
                    break;
                }
            // Two single-hop paths are the same edge.
            if (ok && paths[i].size() == 2)
                for (std::size_t c : chosen)
                    if (paths[c].size() == 2) ok = false;
            if (!ok) continue;
            chosen.push_back(i);
            if (pick(i + 1)) return true;
            chosen.pop_back();
        }
        return false;
    };
    return pick(0);
}

// Minimum number of potential relays such that every source has k
// hop-bounded internally disjoint paths through sources, sink and the
// chosen relays. nullopt when even all relays do not suffice.
inline std::optional<int> brute_force_min_relays(const topology::NetworkGraph& g, int h_max, int k,
                                                 const std::set<NodeId>& free_nodes = {}) {
    std::vector<NodeId> relays;
    for (NodeId r : g.potential_relays())
        if (!free_nodes.contains(r)) relays.push_back(r);
    std::set<NodeId> base(free_nodes.begin(), free_nodes.end());
    base.insert(g.sink());
    for (NodeId s : g.sources()) base.insert(s);
    const int n = static_cast<int>(relays.size());
    for (int size = 0; size <= n; ++size) {
        std::vector<bool> mask(n, false);
        std::fill(mask.begin(), mask.begin() + size, true);
        do {
            std::set<NodeId> allowed = base;
            for (int i = 0; i < n; ++i)
                if (mask[i]) allowed.insert(relays[i]);
            const auto adj = adjacency(g, allowed);
            bool ok = true;
            for (NodeId s : g.sources())
                if (!has_k_disjoint(all_paths(adj, s, g.sink(), h_max), k)) {
                    ok = false;
                    break;
                }
            if (ok) return size;
        } while (std::prev_permutation(mask.begin(), mask.end()));
    }
    return std::nullopt;
}

// Random geometric instance: sink at the origin side, 1-3 sources at the far
// side, up to 12 relays scattered between.
inline DeploymentScenario random_instance(std::mt19937_64& rng, int n_relays, int n_sources, int k) {
    std::uniform_real_distribution<double> ux(2.0, 22.0);
    std::uniform_real_distribution<double> uy(0.0, 16.0);
    std::uniform_real_distribution<double> us(18.0, 24.0);
    DeploymentScenario s;
    s.nodes.push_back({0, {0.0, 8.0}, Role::sink});
    for (int i = 0; i < n_sources; ++i) s.nodes.push_back({100 + i, {us(rng), uy(rng)}, Role::source});
    for (int i = 0; i < n_relays; ++i) s.nodes.push_back({1 + i, {ux(rng), uy(rng)}, Role::potential_relay});
    s.link_model = model_rmax(9.0);
    s.qos.k = k;
    return s;
}

}  // namespace relaynet::testing
