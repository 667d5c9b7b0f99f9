#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>

#include "ca/auction.hpp"

using namespace ca;

TEST_CASE("bundle enumeration is ascending bitmasks") {
    auto c2 = AuctionConfig::make(2, 2);
    CHECK(c2.k == 3);
    CHECK(c2.bundles == std::vector<uint32_t>{1, 2, 3});
    CHECK(AuctionConfig::make(2, 3).k == 7);
    CHECK(AuctionConfig::make(2, 5).k == 31);
    CHECK(c2.singleton_index(0) == 0);
    CHECK(c2.singleton_index(1) == 1);
    CHECK_THROWS(AuctionConfig::make(2, 0));
    CHECK_THROWS(AuctionConfig::make(2, 13));
}

TEST_CASE("incidence matrix columns have popcount ones") {
    auto cfg = AuctionConfig::make(2, 3);
    auto inc = incidence_matrix(cfg);
    for (int s = 0; s < cfg.k; ++s) {
        int ones = 0;
        for (int j = 0; j < cfg.items; ++j) ones += inc[j * cfg.k + s] != 0.0;
        CHECK(ones == cfg.bundle_size(s));
        CHECK(ones >= 1);
    }
}

TEST_CASE("setting A is additive with singleton values equal to item values") {
    auto cfg = AuctionConfig::make(3, 3);
    Rng rng(5);
    auto batch = sample_profiles(Setting::A, cfg, 64, rng);
    for (int b = 0; b < batch.batch; ++b)
        for (int i = 0; i < 3; ++i)
            for (int s = 0; s < cfg.k; ++s) {
                double sum = 0.0;
                for (int j = 0; j < 3; ++j)
                    if (cfg.bundle_has_item(s, j)) sum += batch.at(b, i, cfg.singleton_index(j));
                CHECK(batch.at(b, i, s) == doctest::Approx(sum).epsilon(1e-12));
                CHECK(batch.at(b, i, s) >= 0.0);
            }
}

TEST_CASE("setting B values stay in the support box") {
    auto cfg = AuctionConfig::make(2, 3);
    Rng rng(6);
    std::vector<double> lo, hi;
    for (BundleNoise noise : {BundleNoise::MultiOnly, BundleNoise::AllBundles}) {
        support_box(Setting::B, cfg, noise, lo, hi);
        auto batch = sample_profiles(Setting::B, cfg, 256, rng, noise);
        for (int b = 0; b < batch.batch; ++b)
            for (int i = 0; i < 2; ++i)
                for (int s = 0; s < cfg.k; ++s) {
                    const double v = batch.at(b, i, s);
                    CHECK(v >= lo[i * cfg.k + s] - 1e-12);
                    CHECK(v <= hi[i * cfg.k + s] + 1e-12);
                    CHECK(v >= cfg.bundle_size(s) * 1.0 - 1.0 - 1e-12);
                }
    }
}

TEST_CASE("setting C requires two bidders") {
    auto cfg = AuctionConfig::make(3, 2);
    Rng rng(7);
    CHECK_THROWS(sample_profiles(Setting::C, cfg, 4, rng));
}

TEST_CASE("sampling is reproducible under a fixed seed") {
    auto cfg = AuctionConfig::make(2, 3);
    Rng a(42), b(42);
    auto x = sample_profiles(Setting::B, cfg, 32, a);
    auto y = sample_profiles(Setting::B, cfg, 32, b);
    CHECK(x.values == y.values);
}

TEST_CASE("utility arithmetic") {
    std::vector<double> v{0.0, 0.0, 1.3};
    std::vector<double> z{0.0, 0.0, 1.0};
    CHECK(utility(v, z, 0.5) == doctest::Approx(0.8));
    std::vector<double> zero(3, 0.0);
    CHECK(utility(v, zero, 0.0) == 0.0);
    CHECK(revenue(std::vector<double>{0.3, 0.5}) == doctest::Approx(0.8));
    CHECK(revenue(std::vector<double>{0.0, 0.0}) == 0.0);
}

TEST_CASE("feasibility checker flags the spec counterexample") {
    auto cfg = AuctionConfig::make(1, 2);
    // z on bundles [01, 10, 11] = [0.5, 0.5, 0.5]: items fine, bidder sum 1.5
    std::vector<double> z{0.5, 0.5, 0.5};
    auto rep = check_feasibility(z, cfg, 1e-9);
    CHECK(!rep.feasible());
    bool bidder_flagged = false;
    for (const auto& v : rep.violations)
        if (v.kind == FeasibilityViolation::BidderOversold) {
            bidder_flagged = true;
            CHECK(v.magnitude == doctest::Approx(0.5));
        }
    CHECK(bidder_flagged);
    std::vector<double> zeros(3, 0.0);
    CHECK(check_feasibility(zeros, cfg, 0.0).feasible());
}

TEST_CASE("feasible allocation enumeration") {
    auto one = enumerate_feasible_allocations(AuctionConfig::make(1, 1));
    CHECK(one.size() == 2);  // nothing; the item

    auto cfg = AuctionConfig::make(2, 2);
    auto allocs = enumerate_feasible_allocations(cfg);
    // exhaustive count: empty (1) + one bidder served (2*3) + the two
    // disjoint singleton splits (2) = 9
    CHECK(allocs.size() == 9);
    CHECK(allocs[0].bundle_of == std::vector<uint32_t>{0, 0});

    std::set<std::vector<uint32_t>> unique_check;
    for (const auto& a : allocs) {
        CHECK(unique_check.insert(a.bundle_of).second);  // no duplicates
        // exact feasibility at tol 0
        std::vector<double> z(static_cast<size_t>(cfg.bidders) * cfg.k, 0.0);
        for (int i = 0; i < cfg.bidders; ++i)
            if (a.bundle_of[i]) z[i * cfg.k + cfg.bundle_index(a.bundle_of[i])] = 1.0;
        CHECK(check_feasibility(z, cfg, 0.0).feasible());
    }

    // n=2, m=5: at most 33x33 combinations
    auto big = enumerate_feasible_allocations(AuctionConfig::make(2, 5));
    CHECK(big.size() <= 33 * 33);
    CHECK(big.size() == 243);  // ordered disjoint pairs = 3^5

    CHECK_THROWS(enumerate_feasible_allocations(AuctionConfig::make(2, 7)));
}

TEST_CASE("valuation cache round trip and checksum stability") {
    auto cfg = AuctionConfig::make(2, 2);
    Rng rng(9);
    auto batch = sample_profiles(Setting::B, cfg, 100, rng);
    const std::string path = "test_cache.bin";
    write_valuation_cache(path, batch);
    auto loaded = read_valuation_cache(path);
    CHECK(loaded.batch == 100);
    CHECK(loaded.values == batch.values);
    const uint64_t c1 = fnv1a(batch.values.data(), batch.values.size() * sizeof(double));
    Rng rng2(9);
    auto batch2 = sample_profiles(Setting::B, cfg, 100, rng2);
    const uint64_t c2 = fnv1a(batch2.values.data(), batch2.values.size() * sizeof(double));
    CHECK(c1 == c2);
    std::remove(path.c_str());
}
