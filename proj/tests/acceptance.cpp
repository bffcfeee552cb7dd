// Acceptance runner: one PASS/FAIL line per criterion. `--only N` runs a
// single criterion; the exit status is non-zero if any selected one fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "relaynet/designer.hpp"
#include "relaynet/fixtures.hpp"
#include "relaynet/macsim.hpp"
#include "relaynet/routing.hpp"
#include "support.hpp"

#ifndef RELAYNET_TOOL
#define RELAYNET_TOOL "relaynet"
#endif

using namespace relaynet;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr int kHopBoundH2 = 5;
constexpr int kHopBoundH1 = 6;
constexpr int kHopBoundH1Tol = 1;
constexpr double kHopBoundBudgetS = 1.0;

constexpr double kEwmaExpected = 0.0078125;
constexpr double kEwmaBudgetS = 1e-3;

constexpr int kSteinerInstances = 200;
constexpr int kSteinerMaxRelays = 12;
constexpr double kSteinerOptimalFraction = 0.80;
constexpr int kSteinerSlack = 2;
constexpr double kSteinerBudgetS = 120.0;

constexpr double kIndoorRmax = 8.0, kIndoorTol = 1.0, kIndoorPout = 0.04;
constexpr double kYardRmax = 30.0, kYardTol = 3.0, kYardPout = 0.004;
constexpr double kCalPbad = 0.2;
constexpr int kCalPackets = 1000;
constexpr double kCalBudgetS = 60.0;

constexpr double kMacTol = 0.02;
constexpr double kMacBudgetS = 120.0;

constexpr int kConvSeeds = 100;
constexpr int kConvMaxIterations = 3;
constexpr double kConvFraction = 0.90;
constexpr double kConvBudgetS = 300.0;

constexpr int kRobSeeds = 20;
constexpr double kRobBudgetS = 600.0;

constexpr int kRplSeeds = 20;
constexpr double kRplBudgetS = 300.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---- 1 --------------------------------------------------------------------

Outcome hop_bound() {
    const auto a = qosmap::hop_bound(0.05, 200.0, 0.05, 0.77);
    const auto b = qosmap::hop_bound(0.05, 200.0, 0.05, 0.73);
    const bool h2 = a.h_max_2 && *a.h_max_2 == kHopBoundH2 && a.h_max == kHopBoundH2;
    const bool h73 = b.h_max == kHopBoundH2 + 1;
    const bool h1 = std::abs(a.h_max_1 - kHopBoundH1) <= kHopBoundH1Tol;
    return {h2 && h73 && h1,
            fmt("h_max_2=%d h_max=%d (p_del 0.77), h_max=%d (p_del 0.73), h_max_1=%d (want %d+-%d)",
                a.h_max_2.value_or(-1), a.h_max, b.h_max, a.h_max_1, kHopBoundH1, kHopBoundH1Tol)};
}

// ---- 2 --------------------------------------------------------------------

Outcome ewma() {
    double q = 1.0;
    for (int i = 0; i < 7; ++i) q = routing::ewma_update(q, 0.0);
    return {q == kEwmaExpected && q < 0.01, fmt("estimate after 7 clean windows = %.7f", q)};
}

// ---- 3 --------------------------------------------------------------------

Outcome steiner() {
    std::mt19937_64 rng(derive_seed(0xac, 3));
    int optimal = 0, within = 0, valid = 0, solved = 0, agree = 0;
    for (int i = 0; i < kSteinerInstances; ++i) {
        const int k = 1 + i % 2;
        const int n_relays = 6 + i % (kSteinerMaxRelays - 5);
        const int n_sources = 1 + (i / 2) % 3;
        const auto sc = testing::random_instance(rng, n_relays, n_sources, k);
        const auto g = topology::build_model_graph(sc, *sc.link_model);
        const int h_max = 5;
        const auto best = testing::brute_force_min_relays(g, h_max, k);
        topology::DesignOptions opts;
        opts.exec = Exec::serial;
        const auto d = topology::extract_design(g, h_max, k, opts);
        if (best.has_value() != d.has_value()) continue;
        ++agree;
        if (!d) continue;
        ++solved;
        const int got = static_cast<int>(d->relays_used.size());
        valid += topology::validate_design(g, *d, k).empty();
        optimal += got == *best;
        within += got <= *best + kSteinerSlack && got >= *best;
    }
    const bool pass = agree == kSteinerInstances && valid == solved && within == solved &&
                      optimal >= kSteinerOptimalFraction * solved;
    return {pass, fmt("%d/%d feasibility agrees; of %d feasible: %d optimal (%.1f%%), %d within +%d, "
                      "%d valid",
                      agree, kSteinerInstances, solved, optimal, 100.0 * optimal / std::max(solved, 1),
                      within, kSteinerSlack, valid)};
}

// ---- 4 --------------------------------------------------------------------

Outcome calibration(const std::string& preset, double target, double tol, double p_out) {
    const auto params = fieldsim::preset(preset);
    const auto layout = fieldsim::calibration_layout(preset, params.seed);
    const auto t0 = Clock::now();
    const auto cal = fieldsim::calibrate_rmax(params, layout, -88.0, p_out, kCalPbad, kCalPackets);
    const double dt = seconds_since(t0);
    const bool pass = std::abs(cal.r_max_m - target) <= tol && dt < kCalBudgetS;
    return {pass, fmt("%s R_max=%.1f m (want %.0f+-%.0f) in %.1f s", preset.c_str(), cal.r_max_m, target, tol,
                      dt)};
}

Outcome calibration_both() {
    const auto in = calibration("indoor", kIndoorRmax, kIndoorTol, kIndoorPout);
    const auto yard = calibration("yard", kYardRmax, kYardTol, kYardPout);
    return {in.pass && yard.pass, in.detail + "; " + yard.detail};
}

// ---- 5 --------------------------------------------------------------------

Outcome mac_consistency() {
    double worst = 0.0;
    std::string worst_at;
    for (double q : {0.05, 0.3})
        for (double d_max : {30.0, 60.0, 200.0})
            for (int h = 1; h <= 6; ++h) {
                const auto f = fixtures::mac_line_fixture(h);
                const fieldsim::GroundTruthChannel ch(f.positions, f.channel);
                qosmap::QoSSpec qos;
                qos.d_max_ms = d_max;
                fieldsim::MacSimOptions o;
                o.q_max = q;
                o.duration_s = 400'000.0;
                o.seed = derive_seed(0xac, 5, h);
                const auto log = fieldsim::run_mac_sim(f.design, ch, 0.01, qos, o);
                const std::vector<double> outages(h, 0.0);
                const double diff =
                    std::abs(log.per_source.at(100).p_del_hat() - qosmap::predict_path_pdel(outages, q, d_max));
                if (diff > worst) {
                    worst = diff;
                    worst_at = fmt("q=%.2f d=%.0f h=%d", q, d_max, h);
                }
            }

    // Saturation throughput falls with hop count.
    qosmap::QoSSpec qos;
    qos.p_del = 0.9;
    fieldsim::MacSimOptions o;
    o.duration_s = 120.0;
    std::vector<double> lm;
    bool monotone = true;
    for (int h : {1, 2, 4, 6}) {
        const auto f = fixtures::mac_line_fixture(h, 3);
        const fieldsim::GroundTruthChannel ch(f.positions, f.channel);
        const auto v = fieldsim::lambda_max(f.design, ch, qos, o, 0.1, 200.0, 12);
        lm.push_back(v.value_or(0.0));
        if (lm.size() > 1 && !(lm.back() < lm[lm.size() - 2])) monotone = false;
    }
    return {worst <= kMacTol && monotone,
            fmt("max |sim - predicted| = %.4f at %s (tol %.2f); lambda_max h=1,2,4,6: %.2f %.2f %.2f %.2f",
                worst, worst_at.c_str(), kMacTol, lm[0], lm[1], lm[2], lm[3])};
}

// ---- 6 --------------------------------------------------------------------

Outcome convergence() {
    int converged = 0, finalized_clean = 0, feasible_runs = 0;
    for (int seed = 1; seed <= kConvSeeds; ++seed) {
        const auto inst = fixtures::convergence_instance(seed);
        auto ch = fixtures::make_channel(inst);
        designer::ChannelField field(ch, 200);
        auto s = designer::make_session(inst.scenario);
        if (!designer::initial_design(s)) continue;
        const auto d = designer::iterate_until_feasible(s, field);
        if (!d) continue;
        ++feasible_runs;
        const bool valid = topology::validate_design(topology::learnt_graph(s.graph), *d, s.qos.k).empty();
        if (valid && designer::iterations_run(s) <= kConvMaxIterations) ++converged;
        finalized_clean += s.deployed_relays() == d->relays_used;
    }
    const bool pass = converged >= kConvFraction * kConvSeeds && finalized_clean == feasible_runs;
    return {pass, fmt("%d/%d converge within %d iterations; finalize left no unused relay in %d/%d", converged,
                      kConvSeeds, kConvMaxIterations, finalized_clean, feasible_runs)};
}

// ---- 7 --------------------------------------------------------------------

Outcome robustness() {
    const auto fx = fixtures::robustness_fixture();
    int redesigns[3] = {0, 0, 0};
    int zero_aug[3] = {0, 0, 0};
    int sets = 0;
    for (int seed = 1; seed <= kRobSeeds; ++seed)
        for (int k : {1, 2}) {
            designer::RobustnessOptions o;
            o.k = k;
            o.seed = static_cast<std::uint64_t>(seed);
            const auto r = designer::robustness_experiment(fx, o);
            redesigns[k] += r.total_redesigns();
            zero_aug[k] += r.sets_without_augmentation();
            if (k == 1) sets += static_cast<int>(r.rows.size());
        }
    const bool pass = redesigns[2] < redesigns[1] && zero_aug[2] > zero_aug[1];
    return {pass, fmt("%d seeds: redesigns k=1 %d, k=2 %d; zero-augmentation sets k=1 %d/%d, k=2 %d/%d",
                      kRobSeeds, redesigns[1], redesigns[2], zero_aug[1], sets, zero_aug[2], sets)};
}

// ---- 8 --------------------------------------------------------------------

Outcome rpl() {
    double sum_rpl = 0.0, sum_static = 0.0;
    int seeds_not_worse = 0;
    for (int seed = 1; seed <= kRplSeeds; ++seed) {
        routing::OperateConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(seed);
        const auto c = fixtures::run_rpl_comparison(fixtures::rpl_k2_fixture(cfg.seed), cfg);
        sum_rpl += c.rpl.mean();
        sum_static += c.static_routes.mean();
        seeds_not_worse += c.rpl.mean() >= c.static_routes.mean();
    }
    const double mean_rpl = sum_rpl / kRplSeeds;
    const double mean_static = sum_static / kRplSeeds;
    const bool a = mean_rpl >= mean_static;

    routing::OperateConfig cfg;
    const auto f = fixtures::rpl_sever_fixture(1);
    const auto c = fixtures::run_rpl_comparison(f, cfg);
    const auto& w = c.rpl.p_del_hat.at(*f.affected_source);
    const std::size_t first_after =
        static_cast<std::size_t>(f.sever_at_s / cfg.data_period_s / cfg.delivery_window) + 1;
    bool dropped = w.size() > first_after;
    for (std::size_t i = first_after; i < w.size(); ++i) dropped = dropped && w[i] == 0.0;
    const bool b = dropped && c.truth_path_after_events;

    return {a && b, fmt("(a) mean windowed delivery over %d seeds: rpl %.5f, static %.5f (rpl >= static on %d); "
                        "(b) source %d: %zu windows after the cut all zero=%s, QoS path exists=%s",
                        kRplSeeds, mean_rpl, mean_static, seeds_not_worse, *f.affected_source,
                        w.size() - std::min(w.size(), first_after), dropped ? "yes" : "no",
                        c.truth_path_after_events ? "yes" : "no")};
}

// ---- 9 --------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int tool(const std::string& args) {
    const std::string cmd = std::string("\"") + RELAYNET_TOOL + "\" " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "relaynet_acceptance_det";
    fs::remove_all(root);
    fs::create_directories(root);
    ::unsetenv("RELAYNET_OUT");
    {
        std::ofstream(root / "line.json") << nlohmann::json(fixtures::line_scenario(6, 6.0, 8.0)).dump(2);
        std::ofstream(root / "conv.json") << nlohmann::json(fixtures::convergence_instance(7).scenario).dump(2);
    }
    const std::string r = root.string();
    // Inputs for the commands that consume artifacts.
    tool("campaign --preset indoor --packets 300 --seed 4 --out " + r + "/in");
    tool("design --scenario " + r + "/line.json --out " + r + "/in");

    const std::vector<std::pair<std::string, std::string>> experiments = {
        {"campaign", "campaign --preset yard --packets 200 --seed 5"},
        {"linkmodel", "linkmodel --trace " + r + "/in/trace.csv --meta " + r + "/in/meta.json --pout 0.04"},
        {"design", "design --scenario " + r + "/conv.json"},
        {"iterate", "iterate --scenario " + r + "/conv.json --packets 150 --seed 3"},
        {"robustness", "robustness --k 2 --cycles 8 --seeds 2 --packets 100 --seed 6"},
        {"rpl-compare", "rpl-compare --fixture k2 --hours 6 --seed 2"},
        {"macsim", "macsim --scenario " + r + "/line.json --design " + r + "/in/design.json --rate 2 "
                   "--duration 600 --seed 8 --lambda-max"},
        {"plot", "plot --kind pbad_curve --packets 200 --seed 3"},
    };
    int identical = 0;
    std::string diffs;
    for (const auto& [name, args] : experiments) {
        bool same = true;
        int rc[2];
        for (int run = 0; run < 2; ++run)
            rc[run] = tool(args + " --out " + r + "/" + name + "_" + std::to_string(run));
        same = rc[0] == rc[1] && rc[0] == 0;
        std::size_t files = 0;
        for (const auto& e : fs::directory_iterator(root / (name + "_0"))) {
            ++files;
            const auto other = root / (name + "_1") / e.path().filename();
            if (!fs::exists(other) || slurp(e.path()) != slurp(other)) same = false;
        }
        same = same && files > 0;
        identical += same;
        if (!same) diffs += " " + name;
    }
    fs::remove_all(root);
    return {identical == static_cast<int>(experiments.size()),
            fmt("%d/%zu CLI experiments byte-identical across reruns%s%s", identical, experiments.size(),
                diffs.empty() ? "" : "; differing:", diffs.c_str())};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("acceptance criteria");
    int only = 0;
    app.add_option("--only", only, "run a single criterion (1-9)");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria = {
        {1, "hop bound", kHopBoundBudgetS, hop_bound},
        {2, "ewma arithmetic", kEwmaBudgetS, ewma},
        {3, "steiner oracle", kSteinerBudgetS, steiner},
        {4, "calibration anchors", 2 * kCalBudgetS, calibration_both},
        {5, "mac consistency", kMacBudgetS, mac_consistency},
        {6, "iterative convergence", kConvBudgetS, convergence},
        {7, "robustness direction", kRobBudgetS, robustness},
        {8, "rpl fixtures", kRplBudgetS, rpl},
        {9, "cli determinism", 600.0, determinism},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        const auto t0 = Clock::now();
        const Outcome o = c.run();
        const double dt = seconds_since(t0);
        const bool in_time = dt < c.budget_s;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::cout << (pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << " ("
                  << fmt("%.3g s, budget %.3g s%s", dt, c.budget_s, in_time ? "" : ", over budget") << ")\n";
    }
    return failures == 0 ? 0 : 1;
}
