#include <doctest.h>

#include <cmath>

#include "ca/classic.hpp"

using namespace ca;

TEST_CASE("vcg reproduces the worked 2x2 example") {
    auto cfg = AuctionConfig::make(2, 2);
    auto vcg = make_vcg(cfg);
    // additive item values: bidder1 (0.8, 0.5), bidder2 (0.3, 0.9)
    // bundles [01, 10, 11]
    std::vector<double> profile{0.8, 0.5, 1.3, 0.3, 0.9, 1.2};
    std::vector<double> alloc(6), pay(2);
    vcg->outcome(profile.data(), alloc.data(), pay.data());
    // item 1 to bidder 1, item 2 to bidder 2
    CHECK(alloc[0] == 1.0);  // bidder 1, bundle {item0}
    CHECK(alloc[4] == 1.0);  // bidder 2, bundle {item1}
    CHECK(pay[0] == doctest::Approx(0.3));
    CHECK(pay[1] == doctest::Approx(0.5));
    CHECK(pay[0] + pay[1] == doctest::Approx(0.8));
}

TEST_CASE("single bidder pays nothing under vcg") {
    auto cfg = AuctionConfig::make(1, 2);
    auto vcg = make_vcg(cfg);
    std::vector<double> profile{0.4, 0.7, 0.9};
    std::vector<double> alloc(3), pay(1);
    vcg->outcome(profile.data(), alloc.data(), pay.data());
    CHECK(pay[0] == doctest::Approx(0.0));
    CHECK(alloc[2] == 1.0);  // grand bundle maximizes welfare
}

TEST_CASE("ama with unit weights and zero boosts equals vcg exactly") {
    auto cfg = AuctionConfig::make(2, 3);
    auto vcg = make_vcg(cfg);
    const size_t count = vcg->allocations().size();
    AffineMaximizer ama(cfg, AmaParams::vcg(2, count));
    Rng rng(51);
    auto batch = sample_profiles(Setting::B, cfg, 200, rng);
    std::vector<double> a1(2 * 7), a2(2 * 7), p1(2), p2(2);
    for (int b = 0; b < batch.batch; ++b) {
        const int i1 = vcg->outcome(batch.profile(b), a1.data(), p1.data());
        const int i2 = ama.outcome(batch.profile(b), a2.data(), p2.data());
        CHECK(i1 == i2);
        for (int i = 0; i < 2; ++i) CHECK(std::abs(p1[i] - p2[i]) <= 1e-12);
    }
}

TEST_CASE("ama payments and truthful utilities are nonnegative") {
    auto cfg = AuctionConfig::make(2, 2);
    auto allocs = enumerate_feasible_allocations(cfg);
    AmaParams params;
    params.weights = {1.0, 0.75};
    params.boosts.assign(allocs.size(), 0.0);
    params.boosts[0] = 1.1;  // reserve-style boost on the empty allocation
    AffineMaximizer ama(cfg, params);
    Rng rng(52);
    auto batch = sample_profiles(Setting::A, cfg, 500, rng);
    std::vector<double> alloc(6), pay(2);
    for (int b = 0; b < batch.batch; ++b) {
        ama.outcome(batch.profile(b), alloc.data(), pay.data());
        for (int i = 0; i < 2; ++i) {
            CHECK(pay[i] >= -1e-12);
            const double u =
                utility(std::span<const double>(batch.profile(b) + i * 3, 3),
                        std::span<const double>(alloc.data() + i * 3, 3), pay[i]);
            CHECK(u >= -1e-12);
        }
    }
}

TEST_CASE("vvca bidder boosts are excluded from own pivot terms") {
    auto cfg = AuctionConfig::make(2, 2);
    auto allocs = enumerate_feasible_allocations(cfg);
    // a VVCA whose bidder boosts sum to a constant per allocation behaves
    // differently from the same constant as a shared boost
    AmaParams vvca;
    vvca.weights = {1.0, 1.0};
    vvca.boosts.assign(allocs.size(), 0.0);
    vvca.bidder_boosts.assign(2, std::vector<double>(allocs.size(), 0.0));
    for (size_t a = 0; a < allocs.size(); ++a) {
        for (int i = 0; i < 2; ++i)
            if (allocs[a].bundle_of[i] == 3u) vvca.bidder_boosts[i][a] = 0.8;  // own grand bundle
        vvca.boosts[a] = vvca.bidder_boosts[0][a] + vvca.bidder_boosts[1][a];
    }
    AffineMaximizer mech(cfg, vvca, "vvca");
    std::vector<double> profile{0.2, 0.3, 0.9, 0.25, 0.25, 0.6};
    std::vector<double> alloc(6), pay(2);
    const int win = mech.outcome(profile.data(), alloc.data(), pay.data());
    // boosted grand-bundle allocation for bidder 1 wins (0.9 + 0.8 beats all)
    CHECK(allocs[win].bundle_of[0] == 3u);
    // bidder 1's pivot drops its own 0.8 boost: best others-objective is
    // bidder 2 taking the grand bundle (0.6 + 0.8), the chosen allocation
    // leaves bidder 2 with nothing (0), so p_1 = 1.4
    CHECK(pay[0] == doctest::Approx(1.4));
    CHECK(pay[1] == doctest::Approx(0.0));
    // the same boosts as a shared table (plain AMA) price bidder 1 lower,
    // which is exactly the own-boost-exclusion difference of 0.8
    AmaParams shared = vvca;
    shared.bidder_boosts.clear();
    AffineMaximizer ama(cfg, shared, "ama");
    std::vector<double> alloc2(6), pay2(2);
    ama.outcome(profile.data(), alloc2.data(), pay2.data());
    CHECK(pay[0] - pay2[0] == doctest::Approx(0.8));
}

TEST_CASE("monte carlo vcg revenue hits the analytic setting-A value") {
    auto cfg = AuctionConfig::make(2, 2);
    auto vcg = make_vcg(cfg);
    Rng rng(53);
    const double rev = vcg->monte_carlo_revenue(Setting::A, 200000, rng);
    CHECK(rev == doctest::Approx(2.0 / 3.0).epsilon(0.01));
}

TEST_CASE("degenerate one-point grid returns vcg") {
    auto cfg = AuctionConfig::make(2, 2);
    GridSearchSpec spec;
    spec.weight_values = {1.0};
    spec.boost_min = 0.0;
    spec.boost_max = 0.0;
    spec.boost_step = 1.0;
    Rng rng(54);
    auto res = grid_search_ama(Setting::A, cfg, spec, 100, 50000, rng);
    auto vcg = make_vcg(cfg);
    Rng rng2(55);
    const double vcg_rev = vcg->monte_carlo_revenue(Setting::A, 50000, rng2);
    CHECK(res.eval_revenue == doctest::Approx(vcg_rev).epsilon(0.02));
    CHECK(res.points_evaluated == 1);
}

TEST_CASE("grid guard rejects oversized grids") {
    auto cfg = AuctionConfig::make(2, 2);
    GridSearchSpec spec;
    spec.boost_all_classes = true;
    spec.boost_step = 0.001;
    spec.max_points = 1000;
    Rng rng(56);
    CHECK_THROWS(grid_search_ama(Setting::A, cfg, spec, 10, 100, rng));
}

TEST_CASE("grid search approaches the reported 2x2 setting-A revenue") {
    auto cfg = AuctionConfig::make(2, 2);
    GridSearchSpec spec;
    Rng rng(57);
    auto res = grid_search_ama(Setting::A, cfg, spec, 1000, 200000, rng);
    // reported grid-search AMA revenue is about 0.860; the class-boost grid
    // lands nearby, well above VCG's 0.667
    CHECK(res.eval_revenue > 0.84);
    CHECK(res.eval_revenue < 0.89);
}

TEST_CASE("local search dominates vcg on its training set and is reproducible") {
    auto cfg = AuctionConfig::make(2, 2);
    LocalSearchSpec spec;
    spec.restarts = 3;
    spec.max_sweeps = 25;
    Rng rng_a(58), rng_b(58);
    auto res_a = local_search_ama(Setting::A, cfg, spec, 100, 20000, rng_a);
    auto res_b = local_search_ama(Setting::A, cfg, spec, 100, 20000, rng_b);
    CHECK(res_a.params.weights == res_b.params.weights);
    CHECK(res_a.params.boosts == res_b.params.boosts);
    CHECK(res_a.eval_revenue == res_b.eval_revenue);

    // train dominance: the search draws its training set first from the
    // caller's rng, so the same seed reconstructs it exactly; restart 0
    // starts at the VCG point and hill climbing never accepts a worse value
    Rng rng_c(58);
    ValuationBatch train = sample_profiles(Setting::A, cfg, 100, rng_c);
    auto vcg = make_vcg(cfg);
    std::vector<double> alloc(6), pay(2);
    double vcg_train = 0.0;
    for (int b = 0; b < train.batch; ++b) {
        vcg->outcome(train.profile(b), alloc.data(), pay.data());
        vcg_train += pay[0] + pay[1];
    }
    vcg_train /= train.batch;
    CHECK(res_a.train_revenue >= vcg_train - 1e-12);
    CHECK(res_a.eval_revenue > 2.0 / 3.0 - 0.02);
}
