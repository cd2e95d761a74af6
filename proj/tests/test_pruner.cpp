#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "obskit/errors.hpp"
#include "obskit/pruner.hpp"

using namespace obskit;

namespace {

WeightStore one_layer(std::vector<double> w) {
    const std::size_t d = w.size();
    return WeightStore(std::move(w), {{"w", 0, d}});
}

/// Estimator proportional to the identity that is allowed to prune: one zero
/// gradient consumed.
FisherInverseEstimator informed_identity(std::size_t d, std::size_t B, double lambda,
                                         std::size_t m) {
    FisherInverseEstimator est(d, B, lambda, m);
    est.update(std::vector<double>(d, 0.0));
    return est;
}

std::vector<std::size_t> magnitude_order(const WeightStore& w) {
    std::vector<std::size_t> idx(w.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(w[a]);
        const double mb = std::abs(w[b]);
        if (ma != mb) return ma < mb;
        return a < b;
    });
    return idx;
}

}  // namespace

TEST_CASE("cubic schedule hits its boundary values exactly") {
    SparsitySchedule sched{0.7, 0.9, 100, 300};
    CHECK(sparsity_at(sched, 0) == 0.7);
    CHECK(sparsity_at(sched, 100) == 0.7);
    CHECK(sparsity_at(sched, 300) == 0.9);
    CHECK(sparsity_at(sched, 10'000) == 0.9);
    CHECK(sparsity_at(sched, 200) == doctest::Approx(0.9 - 0.2 * 0.125).epsilon(1e-15));
}

TEST_CASE("gmp masks the smallest magnitudes per layer") {
    const auto w = one_layer({0.1, -5.0, 0.2, 3.0});
    Mask mask(4, w.segments());
    SparsitySchedule sched{0.5, 0.5, 0, 1};
    const auto next = gmp_step(w, mask, sched, 1);
    CHECK_FALSE(next.kept(0));
    CHECK(next.kept(1));
    CHECK_FALSE(next.kept(2));
    CHECK(next.kept(3));
    CHECK(next.sparsity() == doctest::Approx(0.5));

    // already at target: unchanged
    const auto again = gmp_step(w, next, sched, 1);
    CHECK(again == next);
}

TEST_CASE("gmp treats layers independently") {
    WeightStore w({0.1, 0.2, 0.3, 0.4, 10.0, 20.0, 30.0, 40.0},
                  {{"small", 0, 4}, {"large", 4, 4}});
    Mask mask(8, w.segments());
    SparsitySchedule sched{0.5, 0.5, 0, 1};
    const auto next = gmp_step(w, mask, sched, 1);
    // each layer at 50% even though all of "small" is below all of "large"
    CHECK_FALSE(next.kept(0));
    CHECK_FALSE(next.kept(1));
    CHECK(next.kept(2));
    CHECK(next.kept(3));
    CHECK_FALSE(next.kept(4));
    CHECK_FALSE(next.kept(5));
    CHECK(next.kept(6));
    CHECK(next.kept(7));
}

TEST_CASE("gmp refuses shrinking targets and breaks ties by index") {
    const auto w = one_layer({1.0, 1.0, 1.0, 1.0});
    Mask mask(4, w.segments());
    SparsitySchedule sched{0.5, 0.5, 0, 1};
    auto next = gmp_step(w, mask, sched, 1);
    CHECK_FALSE(next.kept(0));
    CHECK_FALSE(next.kept(1));
    CHECK(next.kept(2));

    // a regression beyond one-weight granularity is a schedule violation
    SparsitySchedule lower{0.1, 0.1, 0, 1};
    CHECK_THROWS_AS(gmp_step(w, next, lower, 1), MonotonicityError);
}

TEST_CASE("identity Fisher second-order step equals global magnitude pruning") {
    std::mt19937_64 rng(61);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 12;
        std::vector<double> wv(d);
        for (auto& x : wv) x = normal(rng);
        auto w = one_layer(wv);
        auto w_copy = w;
        Mask mask(d, w.segments());
        auto est = informed_identity(d, 4, 0.5, 4);
        SparsitySchedule sched{0.5, 0.5, 0, 1};

        const auto result = second_order_step(w, est, mask, sched, 1, GroupSpec{1});
        const auto order = magnitude_order(w_copy);
        const std::size_t expect_pruned = (d + 1) / 2;
        for (std::size_t k = 0; k < d; ++k) {
            const bool should_prune = k < expect_pruned;
            CHECK(result.mask.kept(order[k]) == !should_prune);
        }
        // diagonal Fisher: survivors untouched, pruned exactly zero
        for (std::size_t i = 0; i < d; ++i) {
            if (result.mask.kept(i)) {
                CHECK(w[i] == w_copy[i]);
            } else {
                CHECK(w[i] == 0.0);
            }
        }
        CHECK(est.consumed() == 0);  // reset for the next collection window
    }
}

TEST_CASE("anisotropic Fisher overrides the magnitude ranking") {
    // weight 0 is smallest in magnitude, but two strong gradients through it
    // make its removal expensive
    const std::size_t d = 8, m = 2;
    const double lambda = 1.0;
    FisherInverseEstimator est(d, d, lambda, m);
    std::vector<double> g(d, 0.0);
    g[0] = 100.0;
    est.update(g);
    est.update(std::vector<double>(d, 0.0));

    std::vector<double> wv{0.1, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0};
    auto w = one_layer(wv);
    Mask mask(d, w.segments());
    SparsitySchedule sched{1.0 / 8.0, 1.0 / 8.0, 0, 1};
    const auto result = second_order_step(w, est, mask, sched, 1, GroupSpec{1});
    CHECK(result.mask.kept(0));        // magnitude would have pruned this one
    CHECK_FALSE(result.mask.kept(1));  // cheapest under the informed Fisher
}

TEST_CASE("second-order step refuses an uninformed estimator and honors no-ops") {
    auto w = one_layer({1.0, 2.0});
    Mask mask(2, w.segments());
    FisherInverseEstimator est(2, 2, 1.0, 2);
    SparsitySchedule sched{0.5, 0.5, 0, 1};
    CHECK_THROWS_AS(second_order_step(w, est, mask, sched, 1, GroupSpec{1}),
                    UninformedFisherError);

    auto informed = informed_identity(2, 2, 1.0, 2);
    SparsitySchedule zero{0.0, 0.0, 0, 1};
    const auto result = second_order_step(w, informed, mask, zero, 1, GroupSpec{1});
    CHECK(result.groups_pruned == 0);
    CHECK(result.mask == mask);
    CHECK(result.delta == std::vector<double>{0.0, 0.0});
    CHECK(result.predicted_loss_increase == 0.0);
}

TEST_CASE("apply_mask is the Hadamard product and idempotent") {
    const auto w = one_layer({1.0, 2.0, 3.0});
    Mask ones(3, w.segments());
    CHECK(apply_mask(w, ones).values()[1] == 2.0);

    Mask mixed(3, w.segments());
    mixed.prune(1);
    const auto masked = apply_mask(w, mixed);
    CHECK(masked[0] == 1.0);
    CHECK(masked[1] == 0.0);
    CHECK(masked[2] == 3.0);
    const auto twice = apply_mask(masked, mixed);
    for (std::size_t i = 0; i < 3; ++i) CHECK(twice[i] == masked[i]);

    Mask zeros(3, w.segments());
    for (std::size_t i = 0; i < 3; ++i) zeros.prune(i);
    const auto all = apply_mask(w, zeros);
    CHECK(all.values()[0] == 0.0);
    CHECK(all.values()[2] == 0.0);

    Mask wrong(2, {{"w", 0, 2}});
    CHECK_THROWS_AS(apply_mask(w, wrong), DimensionError);
}

TEST_CASE("masks stay cumulative along a gradual schedule") {
    std::mt19937_64 rng(67);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t d = 40;
    std::vector<double> wv(d);
    for (auto& x : wv) x = normal(rng);
    const auto w = one_layer(wv);
    Mask mask(d, w.segments());
    SparsitySchedule sched{0.2, 0.8, 0, 10};
    double last_sparsity = 0.0;
    for (std::size_t t = 0; t <= 10; ++t) {
        const auto next = gmp_step(w, mask, sched, t);
        CHECK(mask.subset_of(next));  // zeros never revert
        CHECK(next.sparsity() >= last_sparsity);
        CHECK(std::abs(next.sparsity() - sparsity_at(sched, t)) <= 1.0 / d + 1e-12);
        last_sparsity = next.sparsity();
        mask = next;
    }
    CHECK(mask.sparsity() == doctest::Approx(0.8));
}

TEST_CASE("prune log csv round-trips") {
    std::vector<PruneLogRow> rows{{10, 0.5, 0.5, 0.125, 1.5, 1.625},
                                  {20, 0.75, 0.75, 0.5, 1.6, 2.0}};
    std::stringstream buf;
    write_prune_log_csv(buf, rows);
    const auto back = read_prune_log_csv(buf);
    REQUIRE(back.size() == 2);
    CHECK(back[0].step == 10);
    CHECK(back[0].predicted_loss_increase == 0.125);
    CHECK(back[1].measured_loss_after == 2.0);
}
