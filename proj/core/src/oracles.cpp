#include "obskit/oracles.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>

#include "obskit/errors.hpp"
#include "obskit/fisher.hpp"
#include "obskit/saliency.hpp"
#include "obskit/weight_store.hpp"

namespace obskit::oracle {

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace

std::vector<std::vector<double>> dense_inverse_blocks(
    const std::vector<std::vector<double>>& gradients, double lambda, std::size_t m,
    std::size_t block_width) {
    if (gradients.empty()) throw DimensionError("dense oracle: no gradients supplied");
    const std::size_t d = gradients.front().size();
    if (d == 0 || d > 512) throw DimensionError("dense oracle: d must lie in [1, 512]");
    if (!(lambda > 0.0)) throw DampeningError("dense oracle: dampening must be positive");
    const std::size_t B = block_width;
    const std::size_t n_blocks = (d + B - 1) / B;

    std::vector<std::vector<double>> out(n_blocks);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const std::size_t base = b * B;
        const std::size_t valid = std::min(B, d - base);
        Matrix a = Matrix::Identity(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(B)) *
                   lambda;
        for (const auto& g : gradients) {
            if (g.size() != d) throw DimensionError("dense oracle: ragged gradient lengths");
            Vector gb = Vector::Zero(static_cast<Eigen::Index>(B));
            for (std::size_t i = 0; i < valid; ++i) gb[static_cast<Eigen::Index>(i)] = g[base + i];
            a.noalias() += (gb * gb.transpose()) / static_cast<double>(m);
        }
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() != Eigen::Success) {
            throw Error("dense oracle: block " + std::to_string(b) + " failed to factorize");
        }
        Matrix inv = llt.solve(Matrix::Identity(a.rows(), a.cols()));
        out[b].resize(B * B);
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t j = 0; j < B; ++j) {
                out[b][i * B + j] = inv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
        }
    }
    return out;
}

std::vector<double> dense_fisher(const std::vector<std::vector<double>>& gradients, double lambda,
                                 std::size_t m, std::size_t d) {
    Matrix a =
        Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)) * lambda;
    for (const auto& g : gradients) {
        Eigen::Map<const Vector> gv(g.data(), static_cast<Eigen::Index>(d));
        a.noalias() += (gv * gv.transpose()) / static_cast<double>(m);
    }
    std::vector<double> out(d * d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out[i * d + j] = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    return out;
}

double exact_group_cost(const std::vector<double>& w, const std::vector<double>& fisher_dense,
                        std::size_t d, std::size_t group, std::size_t group_size) {
    Eigen::Map<const Matrix> f(fisher_dense.data(), static_cast<Eigen::Index>(d),
                               static_cast<Eigen::Index>(d));
    const std::size_t q0 = group * group_size;
    std::vector<std::size_t> free_idx;
    free_idx.reserve(d - group_size);
    for (std::size_t i = 0; i < d; ++i) {
        if (i < q0 || i >= q0 + group_size) free_idx.push_back(i);
    }

    Vector delta = Vector::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < group_size; ++k) {
        delta[static_cast<Eigen::Index>(q0 + k)] = -w[q0 + k];
    }
    if (!free_idx.empty()) {
        const auto nf = static_cast<Eigen::Index>(free_idx.size());
        Matrix frr(nf, nf);
        Vector rhs = Vector::Zero(nf);
        for (Eigen::Index i = 0; i < nf; ++i) {
            const auto fi = static_cast<Eigen::Index>(free_idx[static_cast<std::size_t>(i)]);
            for (Eigen::Index j = 0; j < nf; ++j) {
                const auto fj = static_cast<Eigen::Index>(free_idx[static_cast<std::size_t>(j)]);
                frr(i, j) = f(fi, fj);
            }
            for (std::size_t k = 0; k < group_size; ++k) {
                rhs[i] += f(fi, static_cast<Eigen::Index>(q0 + k)) * w[q0 + k];
            }
        }
        const Vector dr = frr.llt().solve(rhs);
        for (Eigen::Index i = 0; i < nf; ++i) {
            delta[static_cast<Eigen::Index>(free_idx[static_cast<std::size_t>(i)])] = dr[i];
        }
    }
    return 0.5 * delta.dot(f * delta);
}

std::size_t best_group(const std::vector<double>& w, const std::vector<double>& fisher_dense,
                       std::size_t d, std::size_t group_size) {
    if (group_size == 0 || d % group_size != 0) {
        throw DimensionError("best_group oracle: group size must divide d");
    }
    const std::size_t n_groups = d / group_size;
    std::size_t best = 0;
    double best_cost = exact_group_cost(w, fisher_dense, d, 0, group_size);
    for (std::size_t g = 1; g < n_groups; ++g) {
        const double cost = exact_group_cost(w, fisher_dense, d, g, group_size);
        if (cost < best_cost) {
            best = g;
            best_cost = cost;
        }
    }
    return best;
}

EquivalenceResult check_fisher_equivalence(std::size_t cases, std::uint64_t seed,
                                           double tolerance) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t widths[] = {2, 10, 50};

    EquivalenceResult result;
    result.cases = cases;
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t B = widths[rng() % 3];
        const std::size_t m =
            std::uniform_int_distribution<std::size_t>(std::min<std::size_t>(2 * B, 128), 128)(rng);
        const std::size_t d = std::uniform_int_distribution<std::size_t>(B, 512)(rng);
        const double lambda =
            std::pow(10.0, std::uniform_real_distribution<double>(-7.0, -1.0)(rng));

        std::vector<std::vector<double>> grads(m, std::vector<double>(d));
        for (auto& g : grads) {
            for (auto& x : g) x = normal(rng);
        }

        FisherInverseEstimator est(d, B, lambda, m);
        for (const auto& g : grads) est.update(g);
        const auto blocks = dense_inverse_blocks(grads, lambda, m, B);

        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const auto chain = est.block(b);
            for (std::size_t i = 0; i < chain.size(); ++i) {
                result.max_abs_error =
                    std::max(result.max_abs_error, std::abs(chain[i] - blocks[b][i]));
            }
        }
    }
    result.pass = result.max_abs_error <= tolerance;
    return result;
}

AgreementResult check_selection_agreement(std::size_t cases, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t sizes[] = {1, 2, 4};

    AgreementResult result;
    result.cases = cases;
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t q = sizes[rng() % 3];
        const std::size_t n_groups =
            std::uniform_int_distribution<std::size_t>(2, 16 / q)(rng);
        const std::size_t d = q * n_groups;
        const double lambda =
            std::pow(10.0, std::uniform_real_distribution<double>(-3.0, 0.0)(rng));
        const std::size_t m = std::uniform_int_distribution<std::size_t>(d, 2 * d + 4)(rng);

        std::vector<std::vector<double>> grads(m, std::vector<double>(d));
        for (auto& g : grads) {
            for (auto& x : g) x = normal(rng);
        }
        std::vector<double> weights(d);
        for (auto& x : weights) x = normal(rng);

        FisherInverseEstimator est(d, d, lambda, m);
        for (const auto& g : grads) est.update(g);
        WeightStore store(weights, {{"w", 0, d}});
        Mask mask(d, store.segments());
        const auto report = score_all_groups(store, est, GroupSpec{q}, mask);
        std::size_t saliency_pick = 0;
        for (std::size_t g = 1; g < report.scores.size(); ++g) {
            if (report.scores[g] < report.scores[saliency_pick]) saliency_pick = g;
        }

        const auto fisher = dense_fisher(grads, lambda, m, d);
        const std::size_t oracle_pick = best_group(weights, fisher, d, q);
        if (saliency_pick == oracle_pick) ++result.matches;
    }
    result.pass = result.matches == result.cases;
    return result;
}

}  // namespace obskit::oracle
