#include "doctest.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "obskit/errors.hpp"
#include "obskit/fisher.hpp"
#include "obskit/oracles.hpp"

using namespace obskit;

namespace {

std::vector<std::vector<double>> random_gradients(std::mt19937_64& rng, std::size_t count,
                                                  std::size_t d, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<std::vector<double>> grads(count, std::vector<double>(d));
    for (auto& g : grads) {
        for (auto& x : g) x = normal(rng);
    }
    return grads;
}

double max_abs_diff_vs_oracle(const FisherInverseEstimator& est,
                              const std::vector<std::vector<double>>& grads, double lambda,
                              std::size_t m) {
    const auto oracle = oracle::dense_inverse_blocks(grads, lambda, m, est.block_width());
    double worst = 0.0;
    for (std::size_t b = 0; b < oracle.size(); ++b) {
        const auto blk = est.block(b);
        for (std::size_t i = 0; i < blk.size(); ++i) {
            worst = std::max(worst, std::abs(blk[i] - oracle[b][i]));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("fresh estimator is identity over dampening") {
    FisherInverseEstimator est(2, 2, 0.5, 1);
    CHECK(est.block_count() == 1);
    const auto blk = est.block(0);
    CHECK(blk[0] == doctest::Approx(2.0));
    CHECK(blk[1] == 0.0);
    CHECK(blk[2] == 0.0);
    CHECK(blk[3] == doctest::Approx(2.0));
    CHECK(est.consumed() == 0);
}

TEST_CASE("block count and storage arithmetic stay out of allocation") {
    CHECK(FisherInverseEstimator::block_count_for(85'000'000, 50) == 1'700'000);
    CHECK(FisherInverseEstimator::storage_bytes_for(85'000'000, 50, 8) ==
          std::uint64_t{1'700'000} * 50 * 50 * 8);
    CHECK(FisherInverseEstimator::block_count_for(5, 2) == 3);
    CHECK(FisherInverseEstimator::block_count_for(4, 2) == 2);
}

TEST_CASE("trailing block pads the remainder with identity rows") {
    FisherInverseEstimator est(5, 2, 1.0, 4);
    CHECK(est.block_count() == 3);
    std::vector<double> g(5, 0.0);
    g[4] = 2.0;
    est.update(g);
    const auto blk = est.block(2);
    // updated real coordinate, untouched phantom row
    CHECK(blk[0] == doctest::Approx(1.0 - 4.0 / (4.0 + 4.0)));
    CHECK(blk[1] == 0.0);
    CHECK(blk[2] == 0.0);
    CHECK(blk[3] == 1.0);
    CHECK(est.inverse_diagonal().size() == 5);
}

TEST_CASE("constructor rejects bad arguments") {
    CHECK_THROWS_AS(FisherInverseEstimator(0, 2, 1.0, 1), DimensionError);
    CHECK_THROWS_AS(FisherInverseEstimator(2, 0, 1.0, 1), DimensionError);
    CHECK_THROWS_AS(FisherInverseEstimator(2, 2, 0.0, 1), DampeningError);
    CHECK_THROWS_AS(FisherInverseEstimator(2, 2, -1.0, 1), DampeningError);
    CHECK_THROWS_AS(FisherInverseEstimator(2, 2, 1.0, 0), DimensionError);
}

TEST_CASE("single update matches the direct inversion of diag(2, 1)") {
    FisherInverseEstimator est(2, 2, 1.0, 1);
    est.update(std::vector<double>{1.0, 0.0});
    const auto blk = est.block(0);
    CHECK(blk[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(blk[1] == doctest::Approx(0.0));
    CHECK(blk[2] == doctest::Approx(0.0));
    CHECK(blk[3] == doctest::Approx(1.0).epsilon(1e-12));

    const auto diag = est.inverse_diagonal();
    CHECK(diag[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(diag[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero gradient only advances the consumed counter") {
    FisherInverseEstimator est(4, 2, 0.25, 3);
    const auto before = std::vector<double>(est.block(0).begin(), est.block(0).end());
    est.update(std::vector<double>(4, 0.0));
    CHECK(est.consumed() == 1);
    const auto after = est.block(0);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);
}

TEST_CASE("update errors leave the estimator untouched") {
    FisherInverseEstimator est(2, 2, 1.0, 1);
    CHECK_THROWS_AS(est.update(std::vector<double>{1.0}), DimensionError);
    CHECK_THROWS_AS(
        est.update(std::vector<double>{std::numeric_limits<double>::quiet_NaN(), 0.0}),
        NonFiniteError);
    CHECK(est.consumed() == 0);
    CHECK(est.block(0)[0] == 1.0);

    est.update(std::vector<double>{1.0, 1.0});
    CHECK_THROWS_AS(est.update(std::vector<double>{1.0, 1.0}), CapacityError);
    CHECK(est.consumed() == 1);
}

TEST_CASE("three-gradient chain matches the dense oracle") {
    std::mt19937_64 rng(7);
    const double lambda = 0.1;
    const std::size_t m = 3;
    FisherInverseEstimator est(4, 2, lambda, m);
    const auto grads = random_gradients(rng, 3, 4);
    for (const auto& g : grads) est.update(g);
    CHECK(max_abs_diff_vs_oracle(est, grads, lambda, m) <= 1e-9);
}

TEST_CASE("exactness holds for partial chains across dampening range") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 15; ++trial) {
        const std::size_t widths[] = {2, 3, 5, 10};
        const std::size_t B = widths[rng() % 4];
        const std::size_t d = std::uniform_int_distribution<std::size_t>(B, 60)(rng);
        const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, m)(rng);
        const double lambda =
            std::pow(10.0, std::uniform_real_distribution<double>(-3.0, -1.0)(rng));
        FisherInverseEstimator est(d, B, lambda, m);
        const auto grads = random_gradients(rng, k, d);
        for (const auto& g : grads) est.update(g);

        const auto oracle = oracle::dense_inverse_blocks(grads, lambda, m, B);
        double worst_rel = 0.0;
        for (std::size_t b = 0; b < oracle.size(); ++b) {
            const auto blk = est.block(b);
            for (std::size_t i = 0; i < blk.size(); ++i) {
                const double denom = std::max(1.0, std::abs(oracle[b][i]));
                worst_rel = std::max(worst_rel, std::abs(blk[i] - oracle[b][i]) / denom);
            }
        }
        CHECK(worst_rel <= 1e-8);
    }
}

TEST_CASE("final estimate is order-invariant under gradient permutation") {
    std::mt19937_64 rng(13);
    const std::size_t d = 6, B = 3, m = 8;
    const double lambda = 0.5;
    auto grads = random_gradients(rng, m, d);

    FisherInverseEstimator forward_order(d, B, lambda, m);
    for (const auto& g : grads) forward_order.update(g);

    std::shuffle(grads.begin(), grads.end(), rng);
    FisherInverseEstimator shuffled(d, B, lambda, m);
    for (const auto& g : grads) shuffled.update(g);

    for (std::size_t b = 0; b < forward_order.block_count(); ++b) {
        const auto x = forward_order.block(b);
        const auto y = shuffled.block(b);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(std::abs(x[i] - y[i]) <= 1e-8);
        }
    }
}

TEST_CASE("blocks stay symmetric positive definite along the chain") {
    std::mt19937_64 rng(17);
    const std::size_t d = 10, B = 5, m = 24;
    FisherInverseEstimator est(d, B, 1e-4, m);
    for (const auto& g : random_gradients(rng, m, d, 2.0)) {
        est.update(g);
        for (std::size_t b = 0; b < est.block_count(); ++b) {
            const auto blk = est.block(b);
            Eigen::MatrixXd mat(B, B);
            for (std::size_t i = 0; i < B; ++i) {
                for (std::size_t j = 0; j < B; ++j) {
                    mat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                        blk[i * B + j];
                }
            }
            CHECK((mat - mat.transpose()).cwiseAbs().maxCoeff() <=
                  1e-10 * mat.cwiseAbs().maxCoeff());
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mat);
            CHECK(eig.eigenvalues().minCoeff() > 0.0);
        }
    }
}

TEST_CASE("gradient supported on one block changes only that block") {
    FisherInverseEstimator est(6, 2, 1.0, 4);
    std::vector<double> g(6, 0.0);
    g[2] = 1.5;
    g[3] = -0.5;
    est.update(g);
    for (std::size_t b : {std::size_t{0}, std::size_t{2}}) {
        const auto blk = est.block(b);
        CHECK(blk[0] == 1.0);
        CHECK(blk[1] == 0.0);
        CHECK(blk[2] == 0.0);
        CHECK(blk[3] == 1.0);
    }
    CHECK(est.block(1)[0] != 1.0);
}

TEST_CASE("ihvp is the block-diagonal product") {
    FisherInverseEstimator fresh(4, 2, 2.0, 1);
    const auto half = fresh.ihvp(std::vector<double>{2.0, -4.0, 6.0, 8.0});
    CHECK(half == std::vector<double>{1.0, -2.0, 3.0, 4.0});
    const auto zero = fresh.ihvp(std::vector<double>(4, 0.0));
    CHECK(zero == std::vector<double>(4, 0.0));
    CHECK_THROWS_AS(fresh.ihvp(std::vector<double>(3, 0.0)), DimensionError);

    std::mt19937_64 rng(23);
    const std::size_t d = 6, B = 3, m = 5;
    FisherInverseEstimator est(d, B, 0.3, m);
    const auto grads = random_gradients(rng, m, d);
    for (const auto& g : grads) est.update(g);
    std::vector<double> v(d);
    for (auto& x : v) x = std::normal_distribution<double>()(rng);

    const auto got = est.ihvp(v);
    const auto blocks = oracle::dense_inverse_blocks(grads, 0.3, m, B);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t i = 0; i < B; ++i) {
            double expect = 0.0;
            for (std::size_t j = 0; j < B; ++j) expect += blocks[b][i * B + j] * v[b * B + j];
            CHECK(std::abs(got[b * B + i] - expect) <= 1e-12);
        }
    }
}

TEST_CASE("group submatrix extraction and alignment checks") {
    FisherInverseEstimator est(8, 4, 1.0, 2);
    const auto sub = est.group_inverse_submatrix(0, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(sub[i * 4 + j] == (i == j ? 1.0 : 0.0));
        }
    }
    const auto single = est.group_inverse_submatrix(5, 1);
    CHECK(single.size() == 1);
    CHECK(single[0] == 1.0);
    CHECK_THROWS_AS(est.group_inverse_submatrix(2, 4), AlignmentError);
    CHECK_THROWS_AS(est.group_inverse_submatrix(6, 4), DimensionError);
}

TEST_CASE("checkpoint round-trips bit for bit") {
    std::mt19937_64 rng(29);
    FisherInverseEstimator est(7, 3, 1e-3, 6);
    for (const auto& g : random_gradients(rng, 4, 7)) est.update(g);

    std::stringstream buf;
    est.save(buf);
    const auto loaded = FisherInverseEstimator::load(buf);
    CHECK(loaded.dim() == est.dim());
    CHECK(loaded.block_width() == est.block_width());
    CHECK(loaded.dampening() == est.dampening());
    CHECK(loaded.gradient_budget() == est.gradient_budget());
    CHECK(loaded.consumed() == est.consumed());
    for (std::size_t b = 0; b < est.block_count(); ++b) {
        const auto x = est.block(b);
        const auto y = loaded.block(b);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == y[i]);
    }

    // header layout: d, B as u64 then dampening as f64, little-endian
    const std::string raw = buf.str();
    REQUIRE(raw.size() >= 24);
    CHECK(static_cast<unsigned char>(raw[0]) == 7);
    CHECK(static_cast<unsigned char>(raw[8]) == 3);
    double lambda = 0.0;
    std::memcpy(&lambda, raw.data() + 16, 8);
    CHECK(lambda == 1e-3);
}

TEST_CASE("reset returns the estimator to its initial state") {
    std::mt19937_64 rng(31);
    FisherInverseEstimator est(4, 2, 0.5, 3);
    for (const auto& g : random_gradients(rng, 3, 4)) est.update(g);
    est.reset();
    CHECK(est.consumed() == 0);
    const auto blk = est.block(0);
    CHECK(blk[0] == 2.0);
    CHECK(blk[1] == 0.0);
}

TEST_CASE("memory accounting is exact") {
    FisherInverseEstimator est(101, 10, 1.0, 4);
    CHECK(est.block_count() == 11);
    CHECK(est.memory_bytes() == 11 * 10 * 10 * 8);
}

TEST_CASE("threaded block updates reproduce the serial result bit for bit") {
    std::mt19937_64 rng(37);
    const std::size_t d = 64, B = 8, m = 12;
    FisherInverseEstimator serial(d, B, 1e-3, m);
    FisherInverseEstimator threaded(d, B, 1e-3, m);
    serial.set_threads(1);
    threaded.set_threads(4);
    const auto grads = random_gradients(rng, m, d);
    for (const auto& g : grads) {
        serial.update(g);
        threaded.update(g);
    }
    std::vector<double> v(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) v[i] = static_cast<double>(i) - 30.0;
    const auto a = serial.ihvp(v);
    const auto b = threaded.ihvp(v);
    for (std::size_t i = 0; i < d; ++i) CHECK(a[i] == b[i]);
    for (std::size_t bi = 0; bi < serial.block_count(); ++bi) {
        const auto x = serial.block(bi);
        const auto y = threaded.block(bi);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == y[i]);
    }
}

TEST_CASE("default thread count honors the environment variable") {
    setenv("OBSKIT_THREADS", "3", 1);
    CHECK(default_threads() == 3);
    unsetenv("OBSKIT_THREADS");
    CHECK(default_threads() == 1);
}
