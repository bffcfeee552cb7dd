// Serial reference vs OpenMP kernels.

#include <benchmark/benchmark.h>

#include "relaynet/designer.hpp"
#include "relaynet/fieldsim.hpp"
#include "relaynet/fixtures.hpp"
#include "relaynet/topology.hpp"

using namespace relaynet;

namespace {

Exec exec_of(const benchmark::State& st) { return st.range(0) == 0 ? Exec::serial : Exec::parallel; }

struct CalibrationInput {
    std::map<NodeId, Point> layout = fieldsim::calibration_layout("indoor", 1);
    fieldsim::GroundTruthChannel channel{layout, fieldsim::preset("indoor")};
    std::set<NodeId> all;
    CalibrationInput() {
        for (const auto& [id, p] : layout) all.insert(id);
    }
};

const CalibrationInput& calibration_input() {
    static const CalibrationInput in;
    return in;
}

void BM_HelloCampaign(benchmark::State& st) {
    const auto& in = calibration_input();
    for (auto _ : st) benchmark::DoNotOptimize(in.channel.hello_campaign(in.all, 200, exec_of(st)));
}

void BM_EstimateAllLinks(benchmark::State& st) {
    const auto& in = calibration_input();
    const auto c = in.channel.hello_campaign(in.all, 200, Exec::parallel);
    for (auto _ : st)
        benchmark::DoNotOptimize(linkmodel::estimate_all_links(c.trace, c.sent, in.layout, -88.0, exec_of(st)));
}

void BM_ExtractDesign(benchmark::State& st) {
    const auto inst = fixtures::convergence_instance(1);
    const auto g = topology::build_model_graph(inst.scenario, *inst.scenario.link_model);
    const auto h = designer::make_session(inst.scenario).h_max;
    topology::DesignOptions opts;
    opts.exec = exec_of(st);
    for (auto _ : st) benchmark::DoNotOptimize(topology::extract_design(g, h, inst.scenario.qos.k, opts));
}

void BM_Robustness(benchmark::State& st) {
    auto fx = fixtures::robustness_fixture();
    designer::RobustnessOptions o;
    o.n_cycles = 10;
    o.hello_packets = 100;
    o.exec = exec_of(st);
    for (auto _ : st) benchmark::DoNotOptimize(designer::robustness_experiment(fx, o));
}

}  // namespace

BENCHMARK(BM_HelloCampaign)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EstimateAllLinks)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExtractDesign)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Robustness)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
