#include <doctest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "relaynet/fixtures.hpp"
#include "relaynet/macsim.hpp"

using namespace relaynet;
using namespace relaynet::fieldsim;

namespace {

GroundTruthChannel channel_of(const fixtures::MacLineFixture& f, std::uint64_t seed = 1) {
    auto p = f.channel;
    p.seed = seed;
    return GroundTruthChannel(f.positions, p);
}

}  // namespace

TEST_CASE("lone hop timing on the backoff grid") {
    const auto f = fixtures::mac_line_fixture(1);
    const auto ch = channel_of(f);
    qosmap::MacParams mac;
    std::mt19937_64 rng(3);
    const int n = 200'000;
    const double q = 0.3;
    double sum = 0.0;
    long delivered = 0;
    for (int i = 0; i < n; ++i) {
        const auto hop = simulate_lone_hop(ch, 100, 0, -88.0, q, mac, rng);
        CHECK(hop.elapsed_us % 320 == 0);
        if (!hop.delivered) continue;
        ++delivered;
        sum += hop.elapsed_us / 1000.0;
    }
    const auto pmf = qosmap::hop_delay_pmf(q);
    CHECK(sum / delivered == doctest::Approx(pmf.mean_ms()).epsilon(0.01));
    CHECK(1.0 - static_cast<double>(delivered) / n == doctest::Approx(pmf.drop_prob).epsilon(0.1));
}

TEST_CASE("light load matches the lone-packet prediction") {
    for (int hops : {1, 3}) {
        const auto f = fixtures::mac_line_fixture(hops);
        const auto ch = channel_of(f, 9);
        qosmap::QoSSpec qos;
        qos.d_max_ms = 12.0 * hops + 10.0;
        MacSimOptions opts;
        opts.q_max = 0.3;
        opts.duration_s = 4000.0;
        opts.seed = 17;
        const auto log = run_mac_sim(f.design, ch, 1.0, qos, opts);
        const auto& s = log.per_source.at(100);
        CHECK(s.generated > 3500);
        const std::vector<double> outages(hops, 0.0);
        const double predicted = qosmap::predict_path_pdel(outages, 0.3, qos.d_max_ms);
        CAPTURE(hops);
        CHECK(std::abs(s.p_del_hat() - predicted) <= 0.03);
    }
}

TEST_CASE("windows are complete and consistent") {
    const auto f = fixtures::mac_line_fixture(2);
    MacSimOptions opts;
    opts.duration_s = 250.0;
    opts.window_size = 50;
    const auto log = run_mac_sim(f.design, channel_of(f), 2.0, {}, opts);
    const auto& s = log.per_source.at(100);
    CHECK(s.windows.size() == static_cast<std::size_t>(s.generated / 50));
    for (std::size_t i = 0; i < s.windows.size(); ++i) {
        const auto& w = s.windows[i];
        CHECK(w.window_index == static_cast<int>(i));
        CHECK(w.packets_sent == 50);
        CHECK(w.p_del_hat == doctest::Approx(w.packets_delivered_in_time / 50.0));
    }
}

TEST_CASE("overload degrades delivery") {
    const auto f = fixtures::mac_line_fixture(3, 3);
    const auto ch = channel_of(f);
    qosmap::QoSSpec qos;
    MacSimOptions opts;
    opts.duration_s = 60.0;
    const auto light = run_mac_sim(f.design, ch, 0.5, qos, opts);
    const auto heavy = run_mac_sim(f.design, ch, 60.0, qos, opts);
    CHECK(light.per_source.at(101).p_del_hat() > 0.95);
    CHECK(heavy.per_source.at(101).p_del_hat() < light.per_source.at(101).p_del_hat());
}

TEST_CASE("lambda_max shrinks with hop count") {
    qosmap::QoSSpec qos;
    qos.p_del = 0.9;
    MacSimOptions opts;
    opts.duration_s = 30.0;
    double prev = 1e9;
    for (int hops : {1, 2, 4}) {
        const auto f = fixtures::mac_line_fixture(hops, 2);
        const auto lm = lambda_max(f.design, channel_of(f), qos, opts, 0.5, 200.0, 10);
        REQUIRE(lm);
        CAPTURE(hops);
        CHECK(*lm < prev);
        prev = *lm;
    }
}

TEST_CASE("deterministic given the seed") {
    const auto f = fixtures::mac_line_fixture(2, 2);
    const auto ch = channel_of(f);
    MacSimOptions opts;
    opts.duration_s = 100.0;
    const auto a = run_mac_sim(f.design, ch, 5.0, {}, opts);
    const auto b = run_mac_sim(f.design, ch, 5.0, {}, opts);
    CHECK(a == b);
    opts.seed = 2;
    CHECK_FALSE(run_mac_sim(f.design, ch, 5.0, {}, opts) == a);
}

TEST_CASE("delivery log JSON and CSV") {
    const auto f = fixtures::mac_line_fixture(1);
    MacSimOptions opts;
    opts.duration_s = 120.0;
    const auto log = run_mac_sim(f.design, channel_of(f), 2.0, {}, opts);
    CHECK(nlohmann::json(log).get<DeliveryLog>() == log);

    std::ostringstream csv;
    write_delivery_csv(csv, log);
    std::istringstream lines(csv.str());
    std::string header;
    std::getline(lines, header);
    CHECK(header == "source_id,window_index,packets_sent,packets_delivered_in_time,p_del_hat");
    std::string row;
    int rows = 0;
    while (std::getline(lines, row)) ++rows;
    CHECK(rows == static_cast<int>(log.per_source.at(100).windows.size()));

    std::ostringstream empty;
    write_delivery_csv(empty, DeliveryLog{});
    CHECK(empty.str() == header + "\n");
}
