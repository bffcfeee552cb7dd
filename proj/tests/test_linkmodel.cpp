#include <doctest.h>

#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "relaynet/fieldsim.hpp"
#include "relaynet/linkmodel.hpp"

using namespace relaynet;
using namespace relaynet::linkmodel;

namespace {

MeasurementTrace constant_trace(NodeId tx, NodeId rx, const std::vector<double>& rssi) {
    MeasurementTrace t;
    for (std::size_t i = 0; i < rssi.size(); ++i)
        t.records.push_back({tx, rx, static_cast<long>(i), rssi[i], 10.0 * i});
    return t;
}

LinkStats with_outage(NodeId a, NodeId b, double len, double p) {
    LinkStats s;
    s.tx_id = a;
    s.rx_id = b;
    s.length_m = len;
    s.p_out_hat = p;
    return s;
}

// One campaign over the indoor calibration layout, reused by property tests.
struct Campaign {
    std::map<NodeId, Point> layout = fieldsim::calibration_layout("indoor", 3);
    fieldsim::GroundTruthChannel::Campaign c;
    Campaign() {
        fieldsim::GroundTruthChannel ch(layout, fieldsim::preset("indoor"));
        std::set<NodeId> all;
        for (const auto& [id, p] : layout) all.insert(id);
        c = ch.hello_campaign(all, 200);
    }
};

const Campaign& shared_campaign() {
    static const Campaign c;
    return c;
}

}  // namespace

TEST_CASE("per-threshold classification is inclusive at RSSI_min") {
    CHECK(per_threshold_classify(-85, -88) == LinkQuality::good);
    CHECK(per_threshold_classify(-88, -88) == LinkQuality::good);
    CHECK(per_threshold_classify(-95, -88) == LinkQuality::bad);
}

TEST_CASE("link outage counts weak and lost packets") {
    SUBCASE("all received strong") {
        const auto t = constant_trace(1, 2, std::vector<double>(5000, -70.0));
        CHECK(estimate_link_outage(t, 1, 2, 5000, -88).p_out_hat == 0.0);
    }
    SUBCASE("950 strong, 30 weak, 20 lost") {
        std::vector<double> v(950, -80.0);
        v.insert(v.end(), 30, -91.0);
        const auto s = estimate_link_outage(constant_trace(1, 2, v), 1, 2, 1000, -88);
        CHECK(s.p_out_hat == doctest::Approx((1000.0 - 950.0) / 1000.0));
        CHECK(s.n_received == 980);
    }
    SUBCASE("nothing received") {
        CHECK(estimate_link_outage(MeasurementTrace{}, 1, 2, 5000, -88).p_out_hat == 1.0);
    }
    SUBCASE("bad inputs") {
        CHECK_THROWS_AS(estimate_link_outage(MeasurementTrace{}, 1, 2, 0, -88), Error);
        CHECK_THROWS_AS(estimate_link_outage(constant_trace(1, 2, {-70, -70}), 1, 2, 1, -88), Error);
    }
}

TEST_CASE("trace validation") {
    MeasurementTrace t;
    t.records = {{1, 1, 0, -70, 0}};
    CHECK_THROWS_AS(validate_trace(t), Error);
    t.records = {{1, 2, 5, -70, 0}, {1, 2, 3, -70, 10}};
    CHECK_THROWS_AS(validate_trace(t), Error);
    t.records = {{1, 2, 3, -70, 10}, {1, 2, 1, -70, 0}};
    CHECK_NOTHROW(validate_trace(t));
}

TEST_CASE("trace csv round trip and malformed input") {
    const auto t = constant_trace(3, 7, {-70.25, -91.5, -88.0});
    std::ostringstream out;
    write_trace_csv(out, t);
    std::istringstream in(out.str());
    CHECK(read_trace_csv(in).records == t.records);

    std::istringstream bad_header("a,b,c\n1,2,3,4,5\n");
    CHECK_THROWS_AS(read_trace_csv(bad_header), Error);
    std::istringstream bad_row("tx_id,rx_id,seq,rssi_dbm,time_ms\n1,2,x,4,5\n");
    CHECK_THROWS_AS(read_trace_csv(bad_row), Error);
}

TEST_CASE("sent counts: metadata and inference") {
    const nlohmann::json meta = {{"pairs", {{{"tx", 1}, {"rx", 2}, {"n_sent", 100}}}}};
    const auto sent = sent_counts_from_json(meta);
    CHECK(sent.at({1, 2}) == 100);
    CHECK(sent_counts_from_json(sent_counts_to_json(sent)) == sent);
    CHECK_THROWS(sent_counts_from_json({{"pairs", {{{"tx", 1}, {"rx", 2}, {"n_sent", 0}}}}}));

    MeasurementTrace t;
    t.records = {{1, 2, 0, -70, 0}, {1, 2, 9, -70, 90}, {2, 3, 4, -70, 40}};
    const auto inf = infer_sent_counts(t);
    CHECK(inf.at({1, 2}) == 10);
    CHECK(inf.at({1, 3}) == 10);
    CHECK(inf.at({2, 3}) == 5);
    CHECK(inf.at({2, 1}) == 5);
}

TEST_CASE("worst direction keeps the larger outage") {
    const std::vector<LinkStats> d = {with_outage(1, 2, 5, 0.01), with_outage(2, 1, 5, 0.10),
                                      with_outage(3, 4, 6, 0.02)};
    const auto w = worst_direction(d);
    REQUIRE(w.size() == 2);
    CHECK(w[0].p_out_hat == 0.10);
    CHECK(w[1].p_out_hat == 0.02);
}

TEST_CASE("p_bad curve by counting") {
    SUBCASE("no outage anywhere") {
        std::vector<LinkStats> s;
        for (int i = 0; i < 30; ++i) s.push_back(with_outage(i, i + 100, 3 + i % 7, 0.0));
        for (const auto& b : build_pbad_curve(s, 0.04).bins) CHECK(b.p_bad == 0.0);
    }
    SUBCASE("two of ten bad in the 8 m bin") {
        std::vector<LinkStats> s;
        for (int i = 0; i < 10; ++i) s.push_back(with_outage(i, i + 100, 8.2, i < 2 ? 0.3 : 0.01));
        const auto c = build_pbad_curve(s, 0.04);
        REQUIRE(c.bins.size() == 1);
        CHECK(c.bins[0].length_m == 8.0);
        CHECK(c.bins[0].n_links == 10);
        CHECK(c.bins[0].p_bad == doctest::Approx(0.2));
        CHECK_FALSE(c.bins[0].low_confidence);
    }
    SUBCASE("sparse bins are flagged") {
        const std::vector<LinkStats> s = {with_outage(1, 2, 4, 0.0)};
        CHECK(build_pbad_curve(s, 0.04).bins[0].low_confidence);
    }
}

TEST_CASE("p_bad curve matches the Gaussian tail of log-normal shadowing") {
    // No fast fading: every sample of a link sits at mean + S, so a link is
    // bad exactly when mean(d) + S < RSSI_min and p_bad(d) = Phi((RSSI_min - mean(d)) / sigma).
    const double sigma = 4.0;
    const double pl0 = 60.0;
    const double n_exp = 3.0;
    const double rssi_min = -88.0;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> shadow(0.0, sigma);
    MeasurementTrace t;
    SentCounts sent;
    std::map<NodeId, Point> pos;
    NodeId id = 0;
    const int per_bin = 2000;
    for (int d = 4; d <= 14; ++d)
        for (int l = 0; l < per_bin; ++l) {
            const NodeId tx = id++;
            const NodeId rx = id++;
            pos[tx] = {0.0, 100.0 * tx};
            pos[rx] = {static_cast<double>(d), 100.0 * tx};
            const double mean = -(pl0 + 10.0 * n_exp * std::log10(d));
            const double rssi = mean + shadow(rng);
            for (int k = 0; k < 4; ++k) t.records.push_back({tx, rx, k, rssi, 10.0 * k});
            sent[{tx, rx}] = 4;
        }
    const auto links = worst_direction(estimate_all_links(t, sent, pos, rssi_min, Exec::serial));
    const auto curve = build_pbad_curve(links, 0.04);
    REQUIRE(curve.bins.size() == 11);
    for (const auto& b : curve.bins) {
        const double mean = -(pl0 + 10.0 * n_exp * std::log10(b.length_m));
        const double analytic = normal_cdf((rssi_min - mean) / sigma);
        CAPTURE(b.length_m);
        CHECK(std::abs(b.p_bad - analytic) <= 0.05);
    }
}

TEST_CASE("R_max selection") {
    PBadCurve c;
    for (int d = 1; d <= 50; ++d) c.bins.push_back({static_cast<double>(d), 10, 0.0, false});
    CHECK(select_rmax(c, 0.2) == 50.0);

    c.bins[9].p_bad = 0.3;   // 10 m
    c.bins[20].p_bad = 0.5;  // beyond the first violation; ignored
    CHECK(select_rmax(c, 0.2) == 9.0);

    c.bins[0].p_bad = 0.9;
    CHECK_THROWS_WITH_AS(select_rmax(c, 0.2), "no feasible range", Error);
}

TEST_CASE("bidirectional classification") {
    CHECK(classify_bidirectional(with_outage(1, 2, 5, 0.01), with_outage(2, 1, 5, 0.02), 0.04) ==
          LinkQuality::good);
    CHECK(classify_bidirectional(with_outage(1, 2, 5, 0.01), with_outage(2, 1, 5, 0.10), 0.04) ==
          LinkQuality::bad);
    CHECK(classify_bidirectional(with_outage(1, 2, 5, 0.04), with_outage(2, 1, 5, 0.04), 0.04) ==
          LinkQuality::good);
}

TEST_CASE("property: outage does not grow when RSSI_min is lowered") {
    const auto& c = shared_campaign();
    const auto hi = estimate_all_links(c.c.trace, c.c.sent, c.layout, -86.0);
    const auto lo = estimate_all_links(c.c.trace, c.c.sent, c.layout, -90.0);
    REQUIRE(hi.size() == lo.size());
    for (std::size_t i = 0; i < hi.size(); ++i) CHECK(lo[i].p_out_hat <= hi[i].p_out_hat);
}

TEST_CASE("property: p_bad equals a recount over the bin's links") {
    const auto& c = shared_campaign();
    const auto links = worst_direction(estimate_all_links(c.c.trace, c.c.sent, c.layout, -88.0));
    const auto curve = build_pbad_curve(links, 0.04);
    for (const auto& b : curve.bins) {
        int n = 0;
        int bad = 0;
        for (const auto& l : links)
            if (std::lround(l.length_m) == std::lround(b.length_m)) {
                ++n;
                bad += l.p_out_hat > 0.04;
            }
        CHECK(b.n_links == n);
        CHECK(b.p_bad == doctest::Approx(static_cast<double>(bad) / n));
        CHECK(b.p_bad >= 0.0);
        CHECK(b.p_bad <= 1.0);
    }
}

TEST_CASE("property: R_max is monotone in both targets") {
    const auto& c = shared_campaign();
    const auto links = worst_direction(estimate_all_links(c.c.trace, c.c.sent, c.layout, -88.0));
    double prev = 0.0;
    for (double p_out : {0.005, 0.01, 0.02, 0.04, 0.08, 0.16}) {
        double r = 0.0;
        try {
            r = select_rmax(build_pbad_curve(links, p_out), 0.2);
        } catch (const Error&) {
        }
        CHECK(r >= prev);
        prev = r;
    }
    prev = 0.0;
    const auto curve = build_pbad_curve(links, 0.04);
    for (double p_bad : {0.05, 0.1, 0.2, 0.3, 0.5}) {
        double r = 0.0;
        try {
            r = select_rmax(curve, p_bad);
        } catch (const Error&) {
        }
        CHECK(r >= prev);
        prev = r;
    }
}

TEST_CASE("serial and parallel link estimation agree exactly") {
    const auto& c = shared_campaign();
    const auto a = estimate_all_links(c.c.trace, c.c.sent, c.layout, -88.0, Exec::serial);
    const auto b = estimate_all_links(c.c.trace, c.c.sent, c.layout, -88.0, Exec::parallel);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].tx_id == b[i].tx_id);
        CHECK(a[i].p_out_hat == b[i].p_out_hat);
        CHECK(a[i].rssi_samples == b[i].rssi_samples);
    }
}

TEST_CASE("link model json and validation") {
    LinkModel m;
    m.r_max_m = 30;
    m.p_out_target = 0.004;
    nlohmann::json j = m;
    const auto back = j.get<LinkModel>();
    CHECK(back.r_max_m == 30);
    CHECK(back.p_out_target == 0.004);
    m.q_max = 0.0;
    CHECK_THROWS_AS(m.validate(), Error);
}
