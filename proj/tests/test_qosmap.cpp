#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "relaynet/qosmap.hpp"

using namespace relaynet;
using namespace relaynet::qosmap;

namespace {

// 802.15.4 attempt costs on the 0.32 ms grid: CCA + turnaround + 133-byte
// frame + turnaround + ACK = 5.12 ms; CCA + turnaround + frame + ACK wait = 5.44 ms.
constexpr int kOkUnits = 16;
constexpr int kFailUnits = 17;

// Monte-Carlo of the attempt process: per attempt j, backoff uniform over
// 2^min(3 + j - 1, 5) units, then success (1 - q) or failure. Returns the
// delay in units, or -1 when all four attempts fail.
int sample_hop_units(double q, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int t = 0;
    for (int j = 1; j <= 4; ++j) {
        const int window = 1 << std::min(3 + j - 1, 5);
        t += std::uniform_int_distribution<int>(0, window - 1)(rng);
        if (u(rng) >= q) return t + kOkUnits;
        t += kFailUnits;
    }
    return -1;
}

}  // namespace

TEST_CASE("standard MAC timings on the backoff grid") {
    MacParams mac;
    CHECK(mac.success_overhead_units() == kOkUnits);
    CHECK(mac.failure_overhead_units() == kFailUnits);
    mac.mac_max_be = 2;
    CHECK_THROWS_AS(mac.validate(), Error);
}

TEST_CASE("lossless hop: uniform backoff plus fixed overhead") {
    const auto pmf = hop_delay_pmf(0.0);
    CHECK(pmf.drop_prob == 0.0);
    REQUIRE(pmf.mass.size() >= kOkUnits + 8);
    for (std::size_t i = 0; i < pmf.mass.size(); ++i) {
        const bool in = i >= kOkUnits && i < kOkUnits + 8;
        CHECK(pmf.mass[i] == doctest::Approx(in ? 1.0 / 8 : 0.0));
    }
    CHECK(pmf.mean_ms() == doctest::Approx((kOkUnits + 3.5) * 0.32));
}

TEST_CASE("drop probability is q^4") {
    CHECK(hop_delay_pmf(0.05).drop_prob == doctest::Approx(6.25e-6).epsilon(1e-12));
    CHECK_THROWS_AS(hop_delay_pmf(1.0), Error);
    CHECK_THROWS_AS(hop_delay_pmf(-0.1), Error);
}

TEST_CASE("hop PMF matches a Monte-Carlo attempt process at q = 0.5") {
    const double q = 0.5;
    const auto pmf = hop_delay_pmf(q);
    std::mt19937_64 rng(2024);
    const int n = 1'000'000;
    std::vector<long> hist(pmf.mass.size() + 1, 0);
    double sum = 0.0;
    double sum2 = 0.0;
    long delivered = 0;
    for (int i = 0; i < n; ++i) {
        const int t = sample_hop_units(q, rng);
        if (t < 0) continue;
        REQUIRE(t < static_cast<int>(hist.size()));
        ++hist[t];
        ++delivered;
        sum += t * 0.32;
        sum2 += (t * 0.32) * (t * 0.32);
    }
    const double mean = sum / delivered;
    const double se = std::sqrt((sum2 / delivered - mean * mean) / delivered);
    CHECK(std::abs(pmf.mean_ms() - mean) <= 3.0 * se);
    CHECK(static_cast<double>(n - delivered) / n == doctest::Approx(pmf.drop_prob).epsilon(0.02));

    long cum = 0;
    for (std::size_t i = 0; i < pmf.mass.size(); ++i) {
        cum += hist[i];
        const double emp = static_cast<double>(cum) / delivered;
        const double model = pmf.cdf(i * 0.32);
        const double cdf_se = std::sqrt(std::max(model * (1 - model), 1e-12) / delivered);
        CAPTURE(i);
        CHECK(std::abs(emp - model) <= 4.0 * cdf_se + 1e-12);
    }
}

TEST_CASE("hop convolution") {
    SUBCASE("h = 1 is the identity") {
        const auto p = hop_delay_pmf(0.2);
        CHECK(convolve_hops(p, 1).mass == p.mass);
    }
    SUBCASE("point mass doubles") {
        HopDelayPMF p;
        p.grid_ms = 0.5;
        p.mass.assign(11, 0.0);
        p.mass[10] = 1.0;  // 5 ms
        const auto two = convolve_hops(p, 2);
        CHECK(two.cdf(9.99) == doctest::Approx(0.0));
        CHECK(two.cdf(10.0) == doctest::Approx(1.0));
    }
    SUBCASE("three hops at q = 0.05 match the sum of sampled hop delays") {
        const auto p3 = convolve_hops(hop_delay_pmf(0.05), 3);
        std::mt19937_64 rng(77);
        const int n = 400'000;
        std::vector<int> sums;
        sums.reserve(n);
        while (static_cast<int>(sums.size()) < n) {
            int t = 0;
            bool ok = true;
            for (int h = 0; h < 3 && ok; ++h) {
                const int d = sample_hop_units(0.05, rng);
                ok = d >= 0;
                t += d;
            }
            if (ok) sums.push_back(t);
        }
        std::sort(sums.begin(), sums.end());
        for (double d_ms : {18.0, 20.0, 22.0, 25.0, 30.0, 40.0}) {
            const double emp =
                static_cast<double>(std::upper_bound(sums.begin(), sums.end(),
                                                     static_cast<int>(std::floor(d_ms / 0.32 + 1e-9))) -
                                    sums.begin()) /
                n;
            const double model = p3.cdf(d_ms);
            const double se = std::sqrt(std::max(model * (1 - model), 1e-12) / n);
            CAPTURE(d_ms);
            CHECK(std::abs(emp - model) <= 3.0 * se + 1e-9);
        }
    }
}

TEST_CASE("hop bound examples") {
    const auto a = hop_bound(0.05, 200, 0.05, 0.77);
    REQUIRE(a.h_max_2.has_value());
    CHECK(*a.h_max_2 == 5);
    CHECK(a.h_max == 5);
    CHECK(hop_bound(0.05, 200, 0.05, 0.73).h_max == 6);

    const auto unbounded = hop_bound(0.05, 200, 0.0, 0.73);
    CHECK_FALSE(unbounded.h_max_2.has_value());
    CHECK(unbounded.h_max == unbounded.h_max_1);

    CHECK_THROWS_WITH_AS(hop_bound(0.05, 200, 0.5, 0.99), "infeasible QoS", Error);
    CHECK_THROWS_AS(hop_bound(0.05, 0.0, 0.05, 0.77), Error);
}

TEST_CASE("path delivery prediction") {
    const double d1 = convolve_hops(hop_delay_pmf(0.05), 1).cdf(200);
    const std::vector<double> one{0.0};
    CHECK(predict_path_pdel(one, 0.05, 200) == doctest::Approx((1 - 6.25e-6) * d1));
    CHECK(predict_path_pdel(one, 0.05, 200) >= 0.9999);

    const std::vector<double> dead{0.0, 1.0, 0.0};
    CHECK(predict_path_pdel(dead, 0.05, 200) == 0.0);

    // Five hops at 5% outage: closed form with an independently sampled
    // in-time probability.
    std::mt19937_64 rng(5);
    const int n = 200'000;
    int in_time = 0;
    for (int i = 0; i < n; ++i) {
        int t = 0;
        bool ok = true;
        for (int h = 0; h < 5 && ok; ++h) {
            const int d = sample_hop_units(0.05, rng);
            ok = d >= 0;
            t += d;
        }
        if (ok && t * 0.32 <= 200.0) ++in_time;
    }
    const double d5 = static_cast<double>(in_time) / n;
    const std::vector<double> five(5, 0.05);
    const double oracle = std::pow(0.95, 5) * d5;  // d5 already includes the drop factor
    const double got = predict_path_pdel(five, 0.05, 200);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-3));
    CHECK((got >= 0.77) == (oracle >= 0.77));
}

TEST_CASE("property: PMF normalization and mean growth with q") {
    double prev = 0.0;
    for (double q : {0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8}) {
        const auto p = hop_delay_pmf(q);
        CHECK(std::abs(p.total_mass() - 1.0) <= 1e-12);
        CHECK(p.mean_ms() > prev);
        prev = p.mean_ms();
    }
}

TEST_CASE("property: in-time probability is non-increasing in h") {
    for (double q : {0.05, 0.2}) {
        const InTimeTable t(q, 60.0);
        for (int h = 2; h <= kMaxHopSearch; ++h) CHECK(t.in_time(h) <= t.in_time(h - 1));
        const auto pmf = hop_delay_pmf(q);
        for (int h : {1, 3, 6})
            CHECK(t.in_time(h) == doctest::Approx(convolve_hops(pmf, h).cdf(60.0)));
    }
}

TEST_CASE("property: outage bound monotone in P_out and p_del") {
    int prev = 1 << 30;
    for (double p_out : {0.001, 0.01, 0.02, 0.05, 0.1}) {
        const int h2 = *hop_bound(0.05, 200, p_out, 0.5).h_max_2;
        CHECK(h2 <= prev);
        prev = h2;
    }
    prev = 0;
    for (double p_del : {0.95, 0.9, 0.8, 0.7, 0.5}) {
        const int h2 = *hop_bound(0.05, 200, 0.02, p_del).h_max_2;
        CHECK(h2 >= prev);
        prev = h2;
    }
}

TEST_CASE("property: prediction monotone in outages and order-free") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 0.2);
    const InTimeTable table(0.05, 200);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(1 + trial % 6);
        for (auto& x : v) x = u(rng);
        const double base = predict_path_pdel(v, table);
        auto perm = v;
        std::shuffle(perm.begin(), perm.end(), rng);
        CHECK(predict_path_pdel(perm, table) == doctest::Approx(base).epsilon(1e-14));
        auto worse = v;
        worse[trial % v.size()] += 0.1;
        CHECK(predict_path_pdel(worse, table) <= base);
    }
}

TEST_CASE("qos spec validation") {
    QoSSpec q;
    CHECK_NOTHROW(q.validate());
    q.p_del = 1.5;
    CHECK_THROWS_AS(q.validate(), Error);
    q = {};
    q.k = 0;
    CHECK_THROWS_AS(q.validate(), Error);
}
