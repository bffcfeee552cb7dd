#include "relaynet/fixtures.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace relaynet::fixtures {

namespace {

constexpr std::uint64_t kFixtureSeed = 20160601;

linkmodel::LinkModel indoor_model(double p_out) {
    linkmodel::LinkModel m;
    m.r_max_m = 8.0;
    m.rssi_min_dbm = -88.0;
    m.q_max = 0.05;
    m.p_out_target = p_out;
    m.p_bad_target = 0.2;
    return m;
}

// Inverse standard normal CDF by bisection; only needed at setup time.
double normal_quantile(double p) {
    double lo = -10.0;
    double hi = 10.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (normal_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

fieldsim::ChannelParams model_consistent_channel(double r_max_m, double p_out_target,
                                                 std::uint64_t seed) {
    fieldsim::ChannelParams p;
    p.name = "model-consistent";
    p.path_loss_exp = 3.0;
    p.shadow_sigma_db = 0.0;
    p.fast_sigma_db = 2.0;
    p.drift_sigma_db = 0.0;
    p.seed = seed;
    const double rssi_min = -88.0;
    const double needed = rssi_min + p.fast_sigma_db * normal_quantile(1.0 - p_out_target);
    const double boundary = 1.1 * r_max_m;
    p.pl0_db = p.tx_power_dbm - needed - 10.0 * p.path_loss_exp * std::log10(boundary);
    return p;
}

designer::RobustnessFixture robustness_fixture() {
    designer::RobustnessFixture f;
    std::mt19937_64 rng(derive_seed(kFixtureSeed, 1));
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    NodeId id = 1;
    for (int c = 0; c < 6; ++c)
        for (int r = 0; r < 4; ++r) {
            const double x = 5.0 * c + jitter(rng);
            const double y = 5.0 * r + jitter(rng);
            f.base.nodes.push_back({id++, {x, y}, Role::potential_relay});
        }
    f.base.nodes.push_back({100, {2.5, 7.5}, Role::sink});
    f.base.qos.d_max_ms = 200.0;
    f.base.qos.p_del = 0.73;
    f.base.qos.k = 1;
    f.base.link_model = indoor_model(0.05);

    std::vector<NodeId> ids(24);
    std::iota(ids.begin(), ids.end(), 1);
    for (int s = 0; s < 10; ++s) {
        std::mt19937_64 pick(derive_seed(kFixtureSeed, 2, static_cast<std::uint64_t>(s)));
        std::vector<NodeId> pool = ids;
        std::shuffle(pool.begin(), pool.end(), pick);
        std::vector<NodeId> set(pool.begin(), pool.begin() + 4);
        std::sort(set.begin(), set.end());
        f.source_sets.push_back(set);
    }
    return f;
}

ConvergenceInstance convergence_instance(std::uint64_t seed, double bad_fraction) {
    ConvergenceInstance inst;
    auto& sc = inst.scenario;
    std::mt19937_64 rng(derive_seed(kFixtureSeed, 3, seed));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    NodeId id = 1;
    sc.nodes.push_back({id++, {0.0, 15.0}, Role::sink});
    for (int i = 0; i < 3; ++i)
        sc.nodes.push_back({id++, {22.0 + 8.0 * u(rng), 30.0 * u(rng)}, Role::source});
    for (int i = 0; i < 80; ++i)
        sc.nodes.push_back({id++, {30.0 * u(rng), 30.0 * u(rng)}, Role::potential_relay});
    sc.qos.d_max_ms = 200.0;
    sc.qos.p_del = 0.73;
    sc.qos.k = 1;
    sc.link_model = indoor_model(0.05);
    inst.channel = model_consistent_channel(sc.link_model->r_max_m, sc.link_model->p_out_target,
                                            derive_seed(kFixtureSeed, 4, seed));

    std::vector<PairKey> modeled;
    for (std::size_t i = 0; i < sc.nodes.size(); ++i)
        for (std::size_t j = i + 1; j < sc.nodes.size(); ++j)
            if (distance(sc.nodes[i].pos, sc.nodes[j].pos) <= sc.link_model->r_max_m)
                modeled.push_back(PairKey::of(sc.nodes[i].id, sc.nodes[j].id));
    std::shuffle(modeled.begin(), modeled.end(), rng);
    const auto n_bad = static_cast<std::size_t>(std::llround(bad_fraction * modeled.size()));
    inst.forced_bad.assign(modeled.begin(), modeled.begin() + n_bad);
    std::sort(inst.forced_bad.begin(), inst.forced_bad.end());
    return inst;
}

fieldsim::GroundTruthChannel make_channel(const ConvergenceInstance& inst) {
    std::map<NodeId, Point> pos;
    for (const auto& n : inst.scenario.nodes) pos[n.id] = n.pos;
    fieldsim::GroundTruthChannel ch(pos, inst.channel);
    for (const auto& p : inst.forced_bad) ch.force_shadowing(p.a, p.b, -40.0);
    return ch;
}

MacLineFixture mac_line_fixture(int hops, int n_sources) {
    if (hops < 1 || n_sources < 1) throw Error("mac_line_fixture: need hops, sources >= 1");
    MacLineFixture f;
    for (int i = 0; i < hops; ++i) f.positions[i] = {5.0 * i, 0.0};
    for (int s = 0; s < n_sources; ++s) {
        const NodeId id = 100 + s;
        f.positions[id] = {5.0 * hops, 1.0 * s - 0.5 * (n_sources - 1)};
        topology::Path p{id};
        for (int i = hops - 1; i >= 0; --i) p.push_back(i);
        f.design.routes[id] = {p};
        for (int i = 1; i < hops; ++i) f.design.relays_used.insert(i);
    }
    f.design.h_max = hops;
    f.channel.name = "outage-free";
    f.channel.pl0_db = 40.0;
    f.channel.path_loss_exp = 2.0;
    f.channel.shadow_sigma_db = 0.0;
    f.channel.fast_sigma_db = 1.0;
    return f;
}

DeploymentScenario line_scenario(int n_relays, double spacing_m, double r_max_m) {
    DeploymentScenario s;
    s.nodes.push_back({0, {0.0, 0.0}, Role::sink});
    for (int i = 1; i <= n_relays; ++i)
        s.nodes.push_back({i, {spacing_m * i, 0.0}, Role::potential_relay});
    s.nodes.push_back({n_relays + 1, {spacing_m * (n_relays + 1), 0.0}, Role::source});
    linkmodel::LinkModel m = indoor_model(0.04);
    m.r_max_m = r_max_m;
    s.link_model = m;
    s.qos.p_del = 0.73;
    return s;
}

RplFixture rpl_k2_fixture(std::uint64_t seed) {
    RplFixture f;
    auto& sc = f.scenario;
    NodeId id = 1;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            Role role = Role::potential_relay;
            if (r == 0 && c == 0) role = Role::sink;
            if (c == 2 && (r == 0 || r == 2)) role = Role::source;
            sc.nodes.push_back({id++, {6.0 * c, 6.0 * r}, role});
        }
    sc.qos.d_max_ms = 200.0;
    sc.qos.p_del = 0.73;
    sc.qos.k = 2;
    sc.link_model = indoor_model(0.05);
    f.channel = model_consistent_channel(8.0, 0.05, derive_seed(kFixtureSeed, 5, seed));
    f.channel.drift_rho = 0.9;
    f.channel.drift_sigma_db = 4.0;
    return f;
}

RplFixture rpl_sever_fixture(std::uint64_t seed) {
    RplFixture f;
    auto& sc = f.scenario;
    sc.nodes = {{1, {0.0, 0.0}, Role::sink},
                {2, {6.0, 0.0}, Role::potential_relay},
                {3, {12.0, 0.0}, Role::source},
                {5, {10.0, 6.0}, Role::source}};
    sc.qos.d_max_ms = 200.0;
    sc.qos.p_del = 0.73;
    sc.qos.k = 1;
    sc.link_model = indoor_model(0.05);
    f.channel = model_consistent_channel(8.0, 0.05, derive_seed(kFixtureSeed, 6, seed));
    f.initial_shadowing = {{PairKey::of(3, 5), -40.0}};
    f.affected_source = 3;
    f.sever_at_s = 6 * 3600.0;
    f.events = {{f.sever_at_s, 2, 3, -60.0}, {f.sever_at_s, 3, 5, 0.0}};
    return f;
}

RplComparison run_rpl_comparison(const RplFixture& f, routing::OperateConfig cfg) {
    std::map<NodeId, Point> pos;
    for (const auto& n : f.scenario.nodes) pos[n.id] = n.pos;
    fieldsim::GroundTruthChannel channel(pos, f.channel);
    for (const auto& [pair, s] : f.initial_shadowing) channel.force_shadowing(pair.a, pair.b, s);

    auto session = designer::make_session(f.scenario, std::nullopt, Exec::serial);
    designer::ChannelField field(channel, 200, Exec::serial);
    if (!designer::initial_design(session) ||
        !designer::iterate_until_feasible(session, std::ref(field)))
        throw Error("rpl fixture: no feasible design");

    RplComparison out;
    out.design = *session.current_design;
    out.graph = session.graph;
    cfg.qos = session.qos;
    cfg.rssi_min_dbm = session.link_model.rssi_min_dbm;
    cfg.q_max = session.link_model.q_max;
    cfg.events.insert(cfg.events.end(), f.events.begin(), f.events.end());
    out.rpl = routing::simulate_rpl(session.graph, channel, cfg);
    out.static_routes = routing::simulate_static(out.design, channel, cfg);

    if (f.affected_source) {
        auto after = channel;
        for (const auto& e : f.events) after.force_shadowing(e.a, e.b, e.shadow_db);
        const auto truth = routing::ground_truth_graph(session.graph, after, session.deployed,
                                                       cfg.rssi_min_dbm,
                                                       session.link_model.p_out_target);
        out.truth_path_after_events =
            routing::qos_path_exists(truth, *f.affected_source, session.h_max, session.qos, cfg.q_max);
    }
    return out;
}

}  // namespace relaynet::fixtures
