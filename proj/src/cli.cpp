#include "relaynet/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "relaynet/designer.hpp"
#include "relaynet/fieldsim.hpp"
#include "relaynet/fixtures.hpp"
#include "relaynet/linkmodel.hpp"
#include "relaynet/macsim.hpp"
#include "relaynet/qosmap.hpp"
#include "relaynet/routing.hpp"
#include "relaynet/scenario.hpp"
#include "relaynet/service.hpp"
#include "relaynet/topology.hpp"

namespace relaynet::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Design outcomes that amount to a declaration of infeasibility.
struct Infeasible : Error {
    using Error::Error;
};

struct Options {
    std::string scenario;
    std::string trace;
    std::string meta;
    std::string design;
    std::string input;
    std::string preset = "indoor";
    std::string out = ".";
    std::string fixture = "k2";
    std::string kind;
    std::string host = "127.0.0.1";
    std::string token;
    std::string snapshots;
    std::uint64_t seed = 1;
    int seeds = 1;
    int k = 0;
    int cycles = 40;
    int packets = 200;
    int port = 8080;
    double hours = 24.0;
    double rate = 0.01;
    double duration_s = 3600.0;
    bool lambda = false;
    std::optional<double> dmax_ms;
    std::optional<double> pdel;
    std::optional<double> qmax;
    std::optional<double> pout;
    std::optional<double> pbad;
};

fs::path out_dir(const Options& o) {
    const char* env = std::getenv("RELAYNET_OUT");
    fs::path dir = env && *env ? fs::path(env) : fs::path(o.out);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write " + p.string());
    f << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& ex) {
        throw Error(path + ": " + ex.what());
    }
}

std::map<NodeId, Point> positions_of(const DeploymentScenario& s) {
    std::map<NodeId, Point> pos;
    for (const auto& n : s.nodes) pos[n.id] = n.pos;
    return pos;
}

fieldsim::ChannelParams channel_for(const Options& o) {
    auto p = fieldsim::load_channel(o.preset);
    p.seed = o.seed;
    return p;
}

// Scenario with command-line QoS and link-model overrides applied. A
// scenario that asks for estimation gets the preset's link model.
DeploymentScenario scenario_for(const Options& o) {
    if (o.scenario.empty()) throw Error("--scenario is required");
    auto s = load_scenario(o.scenario);
    if (o.k > 0) s.qos.k = o.k;
    if (o.dmax_ms) s.qos.d_max_ms = *o.dmax_ms;
    if (o.pdel) s.qos.p_del = *o.pdel;
    if (!s.link_model) {
        const bool is_preset = o.preset == "indoor" || o.preset == "yard";
        if (!is_preset) throw Error("scenario asks for link-model estimation; pass --preset indoor|yard");
        s.link_model = fieldsim::preset_link_model(o.preset);
    }
    if (o.qmax) s.link_model->q_max = *o.qmax;
    if (o.pout) s.link_model->p_out_target = *o.pout;
    if (o.pbad) s.link_model->p_bad_target = *o.pbad;
    s.validate();
    return s;
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

// ---- commands -------------------------------------------------------------

int cmd_linkmodel(const Options& o, std::ostream& out) {
    if (o.trace.empty()) throw Error("--trace is required");
    std::ifstream in(o.trace);
    if (!in) throw Error("cannot open trace " + o.trace);
    const auto trace = linkmodel::read_trace_csv(in);
    linkmodel::validate_trace(trace);

    std::map<NodeId, Point> pos;
    linkmodel::SentCounts sent;
    if (!o.meta.empty()) {
        const auto meta = read_json(o.meta);
        sent = linkmodel::sent_counts_from_json(meta);
        if (meta.contains("positions"))
            for (const auto& [k, v] : meta.at("positions").items())
                pos[std::stoi(k)] = {v.at(0).get<double>(), v.at(1).get<double>()};
    } else {
        sent = linkmodel::infer_sent_counts(trace);
    }
    if (!o.scenario.empty()) pos = positions_of(load_scenario(o.scenario));
    if (pos.empty()) throw Error("node positions needed: pass --scenario or a --meta file with positions");

    linkmodel::LinkModel m;
    if (o.qmax) m.q_max = *o.qmax;
    m.p_out_target = o.pout.value_or(0.04);
    m.p_bad_target = o.pbad.value_or(0.2);
    const auto directed = linkmodel::estimate_all_links(trace, sent, pos, m.rssi_min_dbm);
    const auto links = linkmodel::worst_direction(directed);
    const auto curve = linkmodel::build_pbad_curve(links, m.p_out_target);
    m.r_max_m = linkmodel::select_rmax(curve, m.p_bad_target);
    m.validate();

    const auto dir = out_dir(o);
    write_json(dir / "linkmodel.json", {{"link_model", m},
                                        {"curve", linkmodel::curve_to_json(curve)},
                                        {"p_out", m.p_out_target},
                                        {"links", links.size()}});
    out << "R_max = " << fmt(m.r_max_m, 1) << " m (P_out=" << m.p_out_target
        << ", P_bad=" << m.p_bad_target << ", " << links.size() << " links)\n";
    return kExitOk;
}

int cmd_campaign(const Options& o, std::ostream& out) {
    std::map<NodeId, Point> pos = o.scenario.empty() ? fieldsim::calibration_layout(o.preset, o.seed)
                                                     : positions_of(load_scenario(o.scenario));
    if (o.packets < 1) throw Error("--packets must be >= 1");
    fieldsim::GroundTruthChannel ch(pos, channel_for(o));
    std::set<NodeId> all;
    for (const auto& [id, p] : pos) all.insert(id);
    const auto c = ch.hello_campaign(all, o.packets);
    const auto dir = out_dir(o);
    {
        std::ofstream f(dir / "trace.csv", std::ios::binary);
        linkmodel::write_trace_csv(f, c.trace);
    }
    json meta = linkmodel::sent_counts_to_json(c.sent);
    json jp = json::object();
    for (const auto& [id, p] : pos) jp[std::to_string(id)] = {p.x, p.y};
    meta["positions"] = jp;
    meta["preset"] = o.preset;
    meta["seed"] = o.seed;
    write_json(dir / "meta.json", meta);
    out << c.trace.records.size() << " records from " << pos.size() << " nodes\n";
    return kExitOk;
}

int cmd_design(const Options& o, std::ostream& out) {
    const auto sc = scenario_for(o);
    auto s = designer::make_session(sc);
    const bool ok = designer::initial_design(s);
    const auto dir = out_dir(o);
    write_json(dir / "session.json", designer::session_to_json(s));
    if (!ok) {
        write_json(dir / "design.json", {{"feasible", false}, {"h_max", s.h_max}});
        throw Infeasible("no design meets the hop bound on the model graph");
    }
    write_json(dir / "design.json", *s.current_design);
    out << "h_max = " << s.h_max << ", relays = " << s.current_design->relays_used.size() << "\n";
    return kExitOk;
}

int cmd_iterate(const Options& o, std::ostream& out) {
    const auto sc = scenario_for(o);
    fieldsim::GroundTruthChannel ch(positions_of(sc), channel_for(o));
    auto s = designer::make_session(sc);
    designer::ChannelField field(ch, o.packets);
    std::optional<topology::Design> d;
    if (designer::initial_design(s)) d = designer::iterate_until_feasible(s, std::ref(field));
    const auto dir = out_dir(o);
    write_json(dir / "iteration_log.json", s.iteration_log);
    write_json(dir / "session.json", designer::session_to_json(s));
    if (!d) {
        write_json(dir / "design.json", {{"feasible", false}, {"h_max", s.h_max}});
        throw Infeasible("iterative design declared infeasible");
    }
    write_json(dir / "design.json", *d);
    out << "iterations = " << designer::iterations_run(s) << ", relays = " << d->relays_used.size()
        << ", h_max = " << s.h_max << "\n";
    for (const auto& [src, p] : designer::best_route_pdel(s))
        out << "  source " << src << ": predicted p_del " << fmt(p) << "\n";
    return kExitOk;
}

designer::RobustnessFixture robustness_fixture_for(const Options& o) {
    if (o.scenario.empty()) return fixtures::robustness_fixture();
    const auto j = read_json(o.scenario);
    designer::RobustnessFixture f;
    if (j.contains("source_sets")) {
        f.base = j.at("scenario").get<DeploymentScenario>();
        f.source_sets = j.at("source_sets").get<std::vector<std::vector<NodeId>>>();
    } else {
        throw Error(o.scenario + ": robustness input needs 'scenario' and 'source_sets'");
    }
    if (!f.base.link_model) f.base.link_model = fieldsim::preset_link_model(o.preset);
    return f;
}

int cmd_robustness(const Options& o, std::ostream& out) {
    auto f = robustness_fixture_for(o);
    if (o.dmax_ms) f.base.qos.d_max_ms = *o.dmax_ms;
    if (o.qmax) f.base.link_model->q_max = *o.qmax;
    if (o.pout) f.base.link_model->p_out_target = *o.pout;
    if (o.seeds < 1) throw Error("--seeds must be >= 1");
    designer::RobustnessOptions ro;
    ro.k = o.k > 0 ? o.k : 1;
    ro.n_cycles = o.cycles;
    ro.trigger_pdel = o.pdel.value_or(f.base.qos.p_del);
    ro.hello_packets = o.packets;
    ro.channel = fieldsim::load_channel(o.preset);

    json reports = json::array();
    std::string tables;
    int total = 0;
    int clean = 0;
    int sets = 0;
    for (int i = 0; i < o.seeds; ++i) {
        ro.seed = o.seed + static_cast<std::uint64_t>(i);
        const auto r = designer::robustness_experiment(f, ro);
        reports.push_back(r);
        tables += "seed " + std::to_string(ro.seed) + "\n" + designer::render_table(r) + "\n";
        total += r.total_redesigns();
        clean += r.sets_without_augmentation();
        sets += static_cast<int>(r.rows.size());
    }
    const auto dir = out_dir(o);
    write_json(dir / "robustness.json", {{"k", ro.k},
                                         {"cycles", ro.n_cycles},
                                         {"seeds", o.seeds},
                                         {"total_redesigns", total},
                                         {"sets_without_augmentation", clean},
                                         {"sets", sets},
                                         {"reports", reports}});
    write_text(dir / "table.txt", tables);
    out << tables << "k=" << ro.k << ": " << total << " redesigns, " << clean << "/" << sets
        << " source sets without augmentation\n";
    return kExitOk;
}

int cmd_rpl_compare(const Options& o, std::ostream& out) {
    fixtures::RplFixture f;
    if (o.fixture == "k2")
        f = fixtures::rpl_k2_fixture(o.seed);
    else if (o.fixture == "sever")
        f = fixtures::rpl_sever_fixture(o.seed);
    else
        throw Error("--fixture must be k2 or sever");
    routing::OperateConfig cfg;
    cfg.seed = o.seed;
    cfg.duration_s = o.hours * 3600.0;
    const auto r = fixtures::run_rpl_comparison(f, cfg);
    const auto dir = out_dir(o);
    json j = {{"fixture", o.fixture},
              {"seed", o.seed},
              {"hours", o.hours},
              {"design", r.design},
              {"runs", {r.static_routes, r.rpl}}};
    if (f.affected_source) {
        j["affected_source"] = *f.affected_source;
        j["event_time_s"] = f.sever_at_s;
        j["qos_path_exists_after_event"] = r.truth_path_after_events;
    }
    write_json(dir / "rpl_compare.json", j);
    {
        std::ofstream csv(dir / "windows.csv", std::ios::binary);
        routing::write_windows_csv(csv, {r.static_routes, r.rpl});
    }
    out << "static mean p_del " << fmt(r.static_routes.mean()) << ", rpl mean p_del "
        << fmt(r.rpl.mean()) << "\n";
    return kExitOk;
}

int cmd_macsim(const Options& o, std::ostream& out) {
    if (o.design.empty()) throw Error("--design is required");
    const auto sc = scenario_for(o);
    const auto d = read_json(o.design).get<topology::Design>();
    fieldsim::GroundTruthChannel ch(positions_of(sc), channel_for(o));
    fieldsim::MacSimOptions mo;
    mo.duration_s = o.duration_s;
    mo.seed = o.seed;
    mo.rssi_min_dbm = sc.link_model->rssi_min_dbm;
    mo.q_max = sc.link_model->q_max;
    mo.r_max_m = sc.link_model->r_max_m;
    const auto log = fieldsim::run_mac_sim(d, ch, o.rate, sc.qos, mo);
    const auto dir = out_dir(o);
    write_json(dir / "delivery_log.json", log);
    {
        std::ofstream csv(dir / "delivery.csv", std::ios::binary);
        fieldsim::write_delivery_csv(csv, log);
    }
    for (const auto& [src, sd] : log.per_source)
        out << "source " << src << ": " << sd.delivered_in_time << "/" << sd.generated
            << " in time (" << fmt(sd.p_del_hat()) << ")\n";
    if (o.lambda) {
        const auto lm = fieldsim::lambda_max(d, ch, sc.qos, mo, 1e-3, 100.0);
        write_json(dir / "lambda_max.json", {{"lambda_max", lm ? json(*lm) : json()}});
        out << "lambda_max = " << (lm ? fmt(*lm) : std::string("none")) << " pkt/s\n";
    }
    return kExitOk;
}

int cmd_plot(const Options& o, std::ostream& out) {
    const auto dir = out_dir(o);
    if (o.kind == "pbad_curve") {
        std::ostringstream csv;
        csv << "p_out,bin_m,n_links,p_bad\n";
        if (!o.input.empty()) {
            const auto j = read_json(o.input);
            if (!j.contains("curve") || !j.contains("p_out"))
                throw Error(o.input + ": not a linkmodel artifact");
            for (const auto& b : j.at("curve"))
                csv << j.at("p_out").get<double>() << ',' << b.at("bin_m").get<double>() << ','
                    << b.at("n_links").get<int>() << ',' << b.at("p_bad").get<double>() << '\n';
        } else {
            // Curve family from one campaign over the preset's calibration layout.
            const auto layout = fieldsim::calibration_layout(o.preset, o.seed);
            fieldsim::GroundTruthChannel ch(layout, channel_for(o));
            std::set<NodeId> all;
            for (const auto& [id, p] : layout) all.insert(id);
            const auto c = ch.hello_campaign(all, o.packets);
            const auto directed = linkmodel::estimate_all_links(c.trace, c.sent, layout, -88.0);
            const auto links = linkmodel::worst_direction(directed);
            for (double p_out : {0.004, 0.01, 0.04, 0.1}) {
                const auto curve = linkmodel::build_pbad_curve(links, p_out);
                for (const auto& b : curve.bins)
                    csv << p_out << ',' << b.length_m << ',' << b.n_links << ',' << b.p_bad << '\n';
            }
        }
        write_text(dir / "pbad_curve.csv", csv.str());
        out << "wrote pbad_curve.csv\n";
        return kExitOk;
    }
    if (o.kind == "delivery_windows") {
        if (o.input.empty()) throw Error("--input is required for delivery_windows");
        const auto j = read_json(o.input);
        std::ostringstream csv;
        if (j.contains("window_size") && j.contains("sources")) {
            fieldsim::write_delivery_csv(csv, j.get<fieldsim::DeliveryLog>());
        } else if (j.contains("runs") && j.at("runs").is_array()) {
            csv << "window_index,source_id,p_del_hat,protocol\n";
            for (const auto& run : j.at("runs")) {
                const auto proto = run.at("protocol").get<std::string>();
                for (const auto& [src, series] : run.at("p_del_hat").items())
                    for (std::size_t w = 0; w < series.size(); ++w)
                        csv << w << ',' << src << ',' << series[w].get<double>() << ',' << proto << '\n';
            }
        } else {
            throw Error(o.input + ": not a delivery log or rpl-compare artifact");
        }
        write_text(dir / "delivery_windows.csv", csv.str());
        out << "wrote delivery_windows.csv\n";
        return kExitOk;
    }
    throw Error("--kind must be pbad_curve or delivery_windows");
}

int cmd_serve(const Options& o, std::ostream& out) {
    service::ServiceOptions so;
    so.host = o.host;
    so.port = o.port;
    if (!o.token.empty()) so.token = o.token;
    if (!o.snapshots.empty()) so.snapshot_dir = o.snapshots;
    service::Service svc(so);
    out << "listening on " << so.host << ":" << so.port << std::endl;
    if (!svc.listen()) throw Error("cannot bind " + so.host + ":" + std::to_string(so.port));
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"relaynet: QoS-constrained relay network design"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* c) {
        c->add_option("--out", o.out, "artifact directory (RELAYNET_OUT overrides)");
        c->add_option("--seed", o.seed, "random seed");
        c->add_option("--preset", o.preset, "channel preset (indoor|yard) or ChannelParams JSON");
    };
    auto qos = [&](CLI::App* c) {
        c->add_option("--k", o.k, "disjoint paths per source");
        c->add_option("--dmax-ms", o.dmax_ms, "delay bound in ms");
        c->add_option("--pdel", o.pdel, "delivery probability target");
        c->add_option("--qmax", o.qmax, "per-attempt packet error bound");
        c->add_option("--pout", o.pout, "outage target");
        c->add_option("--pbad", o.pbad, "bad-link fraction target");
    };

    auto* lm = app.add_subcommand("linkmodel", "estimate R_max from a hello trace");
    common(lm);
    qos(lm);
    lm->add_option("--trace", o.trace, "trace CSV")->required();
    lm->add_option("--meta", o.meta, "campaign metadata JSON");
    lm->add_option("--scenario", o.scenario, "scenario JSON supplying node positions");

    auto* camp = app.add_subcommand("campaign", "simulate a hello campaign");
    common(camp);
    camp->add_option("--scenario", o.scenario, "scenario JSON (default: calibration layout)");
    camp->add_option("--packets", o.packets, "hello packets per node");

    auto* des = app.add_subcommand("design", "initial design on the model graph");
    common(des);
    qos(des);
    des->add_option("--scenario", o.scenario)->required();

    auto* it = app.add_subcommand("iterate", "field-interactive iterative design");
    common(it);
    qos(it);
    it->add_option("--scenario", o.scenario)->required();
    it->add_option("--packets", o.packets, "hello packets per node per campaign");

    auto* rob = app.add_subcommand("robustness", "long-horizon redesign experiment");
    common(rob);
    qos(rob);
    rob->add_option("--scenario", o.scenario, "fixture JSON with scenario and source_sets");
    rob->add_option("--cycles", o.cycles, "relearning cycles");
    rob->add_option("--seeds", o.seeds, "number of consecutive seeds");
    rob->add_option("--packets", o.packets, "hello packets per relearn");

    auto* rpl = app.add_subcommand("rpl-compare", "static routes vs RPL-like routing");
    common(rpl);
    rpl->add_option("--fixture", o.fixture, "k2 or sever");
    rpl->add_option("--hours", o.hours, "operating time");

    auto* mac = app.add_subcommand("macsim", "CSMA/CA delivery simulation of a design");
    common(mac);
    qos(mac);
    mac->add_option("--scenario", o.scenario)->required();
    mac->add_option("--design", o.design, "design JSON")->required();
    mac->add_option("--rate", o.rate, "packets per second per source");
    mac->add_option("--duration", o.duration_s, "seconds of traffic");
    mac->add_flag("--lambda-max", o.lambda, "also search the largest feasible rate");

    auto* plot = app.add_subcommand("plot", "plot data files");
    common(plot);
    plot->add_option("--kind", o.kind, "pbad_curve or delivery_windows")->required();
    plot->add_option("--input", o.input, "artifact JSON");
    plot->add_option("--packets", o.packets, "hello packets when plotting from a preset");

    auto* serve = app.add_subcommand("serve", "HTTP service for the design console");
    serve->add_option("--host", o.host);
    serve->add_option("--port", o.port);
    serve->add_option("--token", o.token, "static bearer token");
    serve->add_option("--snapshots", o.snapshots, "session snapshot directory");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return kExitInvalid;
    }

    try {
        if (*lm) return cmd_linkmodel(o, out);
        if (*camp) return cmd_campaign(o, out);
        if (*des) return cmd_design(o, out);
        if (*it) return cmd_iterate(o, out);
        if (*rob) return cmd_robustness(o, out);
        if (*rpl) return cmd_rpl_compare(o, out);
        if (*mac) return cmd_macsim(o, out);
        if (*plot) return cmd_plot(o, out);
        if (*serve) return cmd_serve(o, out);
    } catch (const Infeasible& e) {
        err << "infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
    return kExitInvalid;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace relaynet::cli
