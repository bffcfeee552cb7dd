#include "relaynet/designer.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

namespace relaynet::designer {

using topology::Design;
using topology::Edge;
using topology::Provenance;

std::string to_string(Phase p) {
    switch (p) {
        case Phase::designing: return "designing";
        case Phase::operating: return "operating";
        case Phase::repairing: return "repairing";
    }
    return "?";
}

std::string to_string(Action a) {
    switch (a) {
        case Action::initial: return "initial";
        case Action::learn: return "learn";
        case Action::evaluate: return "evaluate";
        case Action::augment: return "augment";
        case Action::user_override: return "user_override";
        case Action::finalize: return "finalize";
        case Action::repair: return "repair";
    }
    return "?";
}

Phase phase_from_string(const std::string& s) {
    for (Phase p : {Phase::designing, Phase::operating, Phase::repairing})
        if (to_string(p) == s) return p;
    throw Error("unknown phase '" + s + "'");
}

Action action_from_string(const std::string& s) {
    for (Action a : {Action::initial, Action::learn, Action::evaluate, Action::augment,
                     Action::user_override, Action::finalize, Action::repair})
        if (to_string(a) == s) return a;
    throw Error("unknown action '" + s + "'");
}

std::set<NodeId> SessionState::deployed_relays() const {
    std::set<NodeId> out;
    for (NodeId id : deployed)
        if (graph.node(id).role == Role::potential_relay) out.insert(id);
    return out;
}

ChannelField::ChannelField(fieldsim::GroundTruthChannel& channel, int n_packets, Exec exec)
    : channel_(&channel), n_packets_(n_packets), exec_(exec) {}

fieldsim::GroundTruthChannel::Campaign ChannelField::operator()(const std::set<NodeId>& deployed) {
    return channel_->hello_campaign(deployed, n_packets_, exec_, ++campaigns_);
}

namespace {

IterationRecord& log_record(SessionState& s, Action a) {
    IterationRecord r;
    r.index = static_cast<int>(s.iteration_log.size());
    r.action = a;
    s.iteration_log.push_back(std::move(r));
    return s.iteration_log.back();
}

void set_deployed(SessionState& s, NodeId id, bool on) {
    s.graph.node(id).deployed = on;
    if (on)
        s.deployed.insert(id);
    else
        s.deployed.erase(id);
}

void require_phase(const SessionState& s, Phase p, const char* op) {
    if (s.phase != p)
        throw Error(std::string(op) + ": requires phase " + to_string(p) + ", session is " +
                    to_string(s.phase));
}

}  // namespace

SessionState make_session(const DeploymentScenario& scenario,
                          const std::optional<linkmodel::LinkModel>& model, Exec exec) {
    scenario.validate();
    SessionState s;
    s.scenario = scenario;
    if (model)
        s.link_model = *model;
    else if (scenario.link_model)
        s.link_model = *scenario.link_model;
    else
        throw Error("session: scenario asks for link-model estimation; supply a link model");
    s.link_model.validate();
    s.qos = scenario.qos;
    s.exec = exec;
    s.h_max = qosmap::hop_bound(s.link_model.q_max, s.qos.d_max_ms, s.link_model.p_out_target,
                                s.qos.p_del, s.qos.in_time_target)
                  .h_max;
    s.graph = topology::build_model_graph(scenario, s.link_model);
    return s;
}

bool initial_design(SessionState& s) {
    require_phase(s, Phase::designing, "initial_design");
    if (!s.deployed_relays().empty() || !s.iteration_log.empty())
        throw Error("initial_design: session already has a deployment");
    topology::DesignOptions opts;
    opts.exec = s.exec;
    auto d = topology::extract_design(s.graph, s.h_max, s.qos.k, opts);
    auto& rec = log_record(s, Action::initial);
    if (!d) {
        rec.feasible = false;
        rec.note = "no design on the model graph";
        s.declared_infeasible = true;
        return false;
    }
    for (NodeId id : s.graph.sources()) set_deployed(s, id, true);
    set_deployed(s, s.graph.sink(), true);
    for (NodeId r : d->relays_used) set_deployed(s, r, true);
    rec.relays_added = d->relays_used;
    rec.feasible = true;
    s.current_design = std::move(*d);
    rec.per_source_pdel_predicted = best_route_pdel(s);
    return true;
}

void learn_links(SessionState& s, const CampaignProvider& field) {
    if (s.deployed.size() < 2) throw Error("learn_links: fewer than two deployed nodes");
    auto campaign = field(s.deployed);
    std::map<NodeId, Point> positions;
    for (NodeId id : s.deployed) positions[id] = s.graph.node(id).pos;
    // Every deployed pair is reported, measured or not.
    for (NodeId a : s.deployed)
        for (NodeId b : s.deployed)
            if (a != b) campaign.sent.try_emplace({a, b}, 0);
    linkmodel::SentCounts sent;
    for (const auto& [pair, n] : campaign.sent)
        if (n > 0 && s.deployed.contains(pair.first) && s.deployed.contains(pair.second))
            sent[pair] = n;
    const auto directed = linkmodel::estimate_all_links(campaign.trace, sent, positions,
                                                        s.link_model.rssi_min_dbm, s.exec);
    std::map<std::pair<NodeId, NodeId>, const linkmodel::LinkStats*> by_pair;
    for (const auto& st : directed) by_pair[{st.tx_id, st.rx_id}] = &st;

    auto& rec = log_record(s, Action::learn);
    int good = 0;
    int bad = 0;
    for (auto ia = s.deployed.begin(); ia != s.deployed.end(); ++ia)
        for (auto ib = std::next(ia); ib != s.deployed.end(); ++ib) {
            const auto f = by_pair.find({*ia, *ib});
            const auto r = by_pair.find({*ib, *ia});
            const double pf = f == by_pair.end() ? 1.0 : f->second->p_out_hat;
            const double pr = r == by_pair.end() ? 1.0 : r->second->p_out_hat;
            Edge e;
            e.a = *ia;
            e.b = *ib;
            e.p_out_hat = std::max(pf, pr);
            const bool is_good = pf <= s.link_model.p_out_target && pr <= s.link_model.p_out_target;
            e.provenance = is_good ? Provenance::learnt_good : Provenance::learnt_bad;
            (is_good ? good : bad)++;
            s.graph.set_edge(e);
        }
    rec.feasible = true;
    rec.note = std::to_string(good) + " good, " + std::to_string(bad) + " bad";
}

bool evaluate(SessionState& s) {
    if (s.phase == Phase::operating) throw Error("evaluate: session is operating");
    const auto lg = topology::learnt_graph(s.graph);
    std::optional<Design> d;
    bool reachable = lg.has_node(s.graph.sink());
    for (NodeId src : s.graph.sources()) reachable = reachable && lg.has_node(src);
    if (reachable) {
        topology::DesignOptions opts;
        opts.exec = s.exec;
        if (s.phase == Phase::repairing) opts.free_relays = s.deployed_relays();
        d = topology::extract_design(lg, s.h_max, s.qos.k, opts);
    }
    auto& rec = log_record(s, Action::evaluate);
    rec.feasible = d.has_value();
    if (!d) return false;
    s.current_design = std::move(*d);
    rec.per_source_pdel_predicted = best_route_pdel(s);
    if (s.phase == Phase::repairing) s.phase = Phase::operating;
    return true;
}

bool augment(SessionState& s) {
    if (s.phase == Phase::operating) throw Error("augment: session is operating");
    auto a = topology::augment(s.graph, s.h_max, s.qos.k, s.exec);
    auto& rec = log_record(s, Action::augment);
    if (!a || a->additional_relays.empty()) {
        rec.feasible = false;
        rec.note = "no placement of additional relays restores QoS";
        s.declared_infeasible = true;
        return false;
    }
    for (NodeId r : a->additional_relays) set_deployed(s, r, true);
    rec.relays_added = a->additional_relays;
    rec.feasible = true;
    s.current_design = std::move(a->design);
    return true;
}

void finalize(SessionState& s) {
    require_phase(s, Phase::designing, "finalize");
    if (!s.current_design) throw Error("finalize: no feasible design");
    auto& rec = log_record(s, Action::finalize);
    for (NodeId r : s.deployed_relays())
        if (!s.current_design->relays_used.contains(r)) rec.relays_removed.insert(r);
    for (NodeId r : rec.relays_removed) set_deployed(s, r, false);
    rec.feasible = true;
    rec.per_source_pdel_predicted = best_route_pdel(s);
    s.declared_infeasible = false;
    s.phase = Phase::operating;
}

void user_override(SessionState& s, const std::set<NodeId>& add, const std::set<NodeId>& remove) {
    if (s.phase == Phase::operating) throw Error("user_override: session is operating");
    for (NodeId id : add)
        if (!s.graph.has_node(id) || s.graph.node(id).role != Role::potential_relay)
            throw Error("user_override: " + std::to_string(id) + " is not a potential relay");
    for (NodeId id : remove) {
        if (!s.graph.has_node(id) || s.graph.node(id).role != Role::potential_relay)
            throw Error("user_override: " + std::to_string(id) + " is not a potential relay");
        if (s.current_design && s.current_design->relays_used.contains(id))
            throw Error("user_override: removing relay " + std::to_string(id) +
                        " would orphan a route of the current design");
        if (s.phase == Phase::repairing)
            throw Error("user_override: deployed relays are retained during repair");
    }
    auto& rec = log_record(s, Action::user_override);
    for (NodeId id : add)
        if (!s.deployed.contains(id)) {
            set_deployed(s, id, true);
            rec.relays_added.insert(id);
        }
    for (NodeId id : remove)
        if (s.deployed.contains(id)) {
            set_deployed(s, id, false);
            rec.relays_removed.insert(id);
        }
    rec.feasible = !s.declared_infeasible;
    rec.note = s.declared_infeasible ? "placed during declared infeasibility" : "";
}

std::optional<Design> iterate_until_feasible(SessionState& s, const CampaignProvider& field,
                                             int max_iterations) {
    require_phase(s, Phase::designing, "iterate_until_feasible");
    if (s.deployed.empty()) throw Error("iterate_until_feasible: run the initial design first");
    if (max_iterations <= 0)
        max_iterations = std::max<int>(1, static_cast<int>(s.graph.potential_relays().size()));
    for (int it = 0; it < max_iterations; ++it) {
        learn_links(s, field);
        if (evaluate(s)) {
            finalize(s);
            return s.current_design;
        }
        if (!augment(s)) return std::nullopt;
    }
    return std::nullopt;
}

int iterations_run(const SessionState& s) {
    return static_cast<int>(std::count_if(s.iteration_log.begin(), s.iteration_log.end(),
                                          [](const auto& r) { return r.action == Action::evaluate; }));
}

double predicted_route_pdel(const SessionState& s, const topology::Path& route,
                            const qosmap::InTimeTable& table) {
    std::vector<double> outages;
    for (std::size_t i = 0; i + 1 < route.size(); ++i) {
        const Edge* e = s.graph.edge(route[i], route[i + 1]);
        outages.push_back(e && e->p_out_hat ? *e->p_out_hat : 0.0);
    }
    return qosmap::predict_path_pdel(outages, table);
}

std::map<NodeId, std::vector<double>> route_pdel(const SessionState& s) {
    std::map<NodeId, std::vector<double>> out;
    if (!s.current_design) return out;
    const qosmap::InTimeTable table(s.link_model.q_max, s.qos.d_max_ms);
    for (const auto& [src, routes] : s.current_design->routes)
        for (const auto& r : routes) out[src].push_back(predicted_route_pdel(s, r, table));
    return out;
}

std::map<NodeId, double> best_route_pdel(const SessionState& s) {
    std::map<NodeId, double> out;
    for (const auto& [src, v] : route_pdel(s)) out[src] = *std::max_element(v.begin(), v.end());
    return out;
}

void start_repair(SessionState& s, const std::string& reason) {
    require_phase(s, Phase::operating, "repair");
    s.phase = Phase::repairing;
    auto& rec = log_record(s, Action::repair);
    rec.feasible = false;
    rec.note = reason;
}

bool complete_repair(SessionState& s, const CampaignProvider& field) {
    require_phase(s, Phase::repairing, "repair");
    const int limit = std::max<int>(1, static_cast<int>(s.graph.potential_relays().size()));
    for (int it = 0; it < limit; ++it) {
        learn_links(s, field);
        if (evaluate(s)) return true;
        if (!augment(s)) return false;
    }
    return false;
}

bool repair(SessionState& s, const CampaignProvider& field,
            const std::map<NodeId, double>& windowed_pdel) {
    require_phase(s, Phase::operating, "repair");
    std::ostringstream why;
    for (const auto& [src, p] : windowed_pdel)
        if (p < s.qos.p_del) why << "source " << src << " at " << p << "; ";
    if (why.str().empty()) throw Error("repair: no source is below the delivery target");
    start_repair(s, why.str());
    return complete_repair(s, field);
}

SessionState replay(const DeploymentScenario& scenario,
                    const std::optional<linkmodel::LinkModel>& model,
                    const std::vector<IterationRecord>& log, const CampaignProvider& field,
                    Exec exec) {
    SessionState s = make_session(scenario, model, exec);
    for (const auto& r : log) {
        switch (r.action) {
            case Action::initial: initial_design(s); break;
            case Action::learn: learn_links(s, field); break;
            case Action::evaluate: evaluate(s); break;
            case Action::augment: augment(s); break;
            case Action::user_override: user_override(s, r.relays_added, r.relays_removed); break;
            case Action::finalize: finalize(s); break;
            case Action::repair: start_repair(s, r.note); break;
        }
    }
    return s;
}

// ---- robustness -----------------------------------------------------------

int RobustnessReport::total_redesigns() const {
    int n = 0;
    for (const auto& r : rows) n += r.redesign_count;
    return n;
}

int RobustnessReport::sets_without_augmentation() const {
    return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const auto& r) {
        return !r.infeasible && r.augmentation_cycles.empty();
    }));
}

namespace {

constexpr std::uint64_t kTagRobust = 0x40B;

DeploymentScenario scenario_for_set(const RobustnessFixture& f, const std::vector<NodeId>& sources,
                                    int k) {
    DeploymentScenario s = f.base;
    s.qos.k = k;
    for (auto& n : s.nodes)
        if (n.role != Role::sink)
            n.role = std::find(sources.begin(), sources.end(), n.id) != sources.end()
                         ? Role::source
                         : Role::potential_relay;
    return s;
}

bool violates(const std::vector<double>& per_route, double trigger, int k) {
    if (k >= 2)
        return std::all_of(per_route.begin(), per_route.end(), [&](double p) { return p < trigger; });
    return std::any_of(per_route.begin(), per_route.end(), [&](double p) { return p < trigger; });
}

RobustnessRow run_source_set(const RobustnessFixture& f, int index, const RobustnessOptions& o) {
    RobustnessRow row;
    row.set_index = index;
    row.sources = f.source_sets[index];
    auto scenario = scenario_for_set(f, row.sources, o.k);
    scenario.qos.p_del = o.trigger_pdel;

    std::map<NodeId, Point> positions;
    for (const auto& n : scenario.nodes) positions[n.id] = n.pos;
    fieldsim::ChannelParams cp = o.channel;
    cp.seed = derive_seed(o.seed, kTagRobust, static_cast<std::uint64_t>(index));
    fieldsim::GroundTruthChannel channel(positions, cp);
    ChannelField field(channel, o.hello_packets, Exec::serial);

    SessionState s = make_session(scenario, std::nullopt, Exec::serial);
    if (!initial_design(s) || !iterate_until_feasible(s, std::ref(field))) {
        row.infeasible = true;
        return row;
    }
    row.initial_relays = s.deployed_relays();

    for (int cycle = 2; cycle <= o.n_cycles; ++cycle) {
        channel.advance_cycles(1);
        learn_links(s, std::ref(field));
        bool trigger = false;
        for (const auto& [src, per_route] : route_pdel(s))
            trigger = trigger || violates(per_route, o.trigger_pdel, o.k);
        if (!trigger) continue;
        ++row.redesign_count;
        const auto before = s.deployed_relays();
        start_repair(s, "cycle " + std::to_string(cycle));
        if (!evaluate(s)) {
            const bool ok = augment(s) && complete_repair(s, std::ref(field));
            if (s.deployed_relays() != before) row.augmentation_cycles.push_back(cycle);
            if (!ok) {
                row.infeasible = true;
                break;
            }
        }
    }
    row.final_relays = s.deployed_relays();
    return row;
}

}  // namespace

RobustnessReport robustness_experiment(const RobustnessFixture& fixture,
                                       const RobustnessOptions& opts) {
    if (opts.n_cycles < 1) throw Error("robustness: n_cycles must be >= 1");
    if (opts.k < 1) throw Error("robustness: k must be >= 1");
    RobustnessReport rep;
    rep.k = opts.k;
    rep.n_cycles = opts.n_cycles;
    rep.trigger_pdel = opts.trigger_pdel;
    rep.seed = opts.seed;
    const int n = static_cast<int>(fixture.source_sets.size());
    rep.rows.resize(n);
    std::vector<std::string> errors(n);
    auto body = [&](int i) {
        try {
            rep.rows[i] = run_source_set(fixture, i, opts);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    };
    if (opts.exec == Exec::serial) {
        for (int i = 0; i < n; ++i) body(i);
    } else {
#pragma omp parallel for schedule(dynamic, 1)
        for (int i = 0; i < n; ++i) body(i);
    }
    for (const auto& e : errors)
        if (!e.empty()) throw Error("robustness: " + e);
    return rep;
}

namespace {

std::string join(const std::set<NodeId>& v) {
    std::string out;
    for (NodeId id : v) out += (out.empty() ? "" : ",") + std::to_string(id);
    return out.empty() ? "-" : out;
}

std::string join(const std::vector<int>& v) {
    std::string out;
    for (int x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
    return out.empty() ? "-" : out;
}

}  // namespace

std::string render_table(const RobustnessReport& r) {
    std::ostringstream os;
    os << "k=" << r.k << " cycles=" << r.n_cycles << " trigger=" << r.trigger_pdel
       << " seed=" << r.seed << "\n";
    os << "set | sources | initial relay set | augmentation cycles | final relay set | "
          "no. of topology redesigns\n";
    for (const auto& row : r.rows) {
        std::vector<int> src(row.sources.begin(), row.sources.end());
        os << row.set_index + 1 << " | " << join(src) << " | " << join(row.initial_relays) << " | "
           << (row.infeasible ? "infeasible" : join(row.augmentation_cycles)) << " | "
           << join(row.final_relays) << " | " << row.redesign_count << "\n";
    }
    os << "total redesigns: " << r.total_redesigns()
       << ", sets without augmentation: " << r.sets_without_augmentation() << "/" << r.rows.size()
       << "\n";
    return os.str();
}

// ---- serialization --------------------------------------------------------

void to_json(nlohmann::json& j, const IterationRecord& r) {
    nlohmann::json pdel = nlohmann::json::object();
    for (const auto& [src, p] : r.per_source_pdel_predicted) pdel[std::to_string(src)] = p;
    j = {{"index", r.index},
         {"action", to_string(r.action)},
         {"relays_added", r.relays_added},
         {"relays_removed", r.relays_removed},
         {"feasible", r.feasible},
         {"per_source_pdel_predicted", pdel},
         {"note", r.note}};
}

void from_json(const nlohmann::json& j, IterationRecord& r) {
    r = {};
    r.index = j.at("index").get<int>();
    r.action = action_from_string(j.at("action").get<std::string>());
    r.relays_added = j.value("relays_added", std::set<NodeId>{});
    r.relays_removed = j.value("relays_removed", std::set<NodeId>{});
    r.feasible = j.value("feasible", false);
    if (j.contains("per_source_pdel_predicted"))
        for (const auto& [k, v] : j.at("per_source_pdel_predicted").items())
            r.per_source_pdel_predicted[std::stoi(k)] = v.get<double>();
    r.note = j.value("note", std::string{});
}

nlohmann::json session_to_json(const SessionState& s) {
    nlohmann::json j = {{"scenario", s.scenario},
                        {"link_model", s.link_model},
                        {"qos", s.qos},
                        {"h_max", s.h_max},
                        {"graph", s.graph},
                        {"deployed", s.deployed},
                        {"iteration_log", s.iteration_log},
                        {"phase", to_string(s.phase)},
                        {"declared_infeasible", s.declared_infeasible}};
    j["current_design"] = s.current_design ? nlohmann::json(*s.current_design) : nlohmann::json();
    return j;
}

SessionState session_from_json(const nlohmann::json& j) {
    SessionState s;
    s.scenario = j.at("scenario").get<DeploymentScenario>();
    s.link_model = j.at("link_model").get<linkmodel::LinkModel>();
    s.qos = j.at("qos").get<qosmap::QoSSpec>();
    s.h_max = j.at("h_max").get<int>();
    s.graph = j.at("graph").get<topology::NetworkGraph>();
    s.deployed = j.at("deployed").get<std::set<NodeId>>();
    s.iteration_log = j.at("iteration_log").get<std::vector<IterationRecord>>();
    s.phase = phase_from_string(j.at("phase").get<std::string>());
    s.declared_infeasible = j.value("declared_infeasible", false);
    if (j.contains("current_design") && !j.at("current_design").is_null())
        s.current_design = j.at("current_design").get<Design>();
    return s;
}

void to_json(nlohmann::json& j, const RobustnessReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"set_index", row.set_index},
                        {"sources", row.sources},
                        {"initial_relay_set", row.initial_relays},
                        {"augmentation_cycles", row.augmentation_cycles},
                        {"final_relay_set", row.final_relays},
                        {"redesign_count", row.redesign_count},
                        {"infeasible", row.infeasible}});
    j = {{"k", r.k},
         {"n_cycles", r.n_cycles},
         {"trigger_pdel", r.trigger_pdel},
         {"seed", r.seed},
         {"rows", rows},
         {"total_redesigns", r.total_redesigns()},
         {"sets_without_augmentation", r.sets_without_augmentation()}};
}

}  // namespace relaynet::designer
