#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace obskit::oracle {

/// Direct evaluation of the inverse dampened empirical Fisher, block by
/// block: forms lambda*I + (1/m) * sum of gradient outer products densely
/// and inverts through a Cholesky factorization. Desk-bound to d <= 512.
/// Returns n_blocks row-major B x B matrices, padding included.
std::vector<std::vector<double>> dense_inverse_blocks(
    const std::vector<std::vector<double>>& gradients, double lambda, std::size_t m,
    std::size_t block_width);

/// Dense d x d dampened empirical Fisher (no block approximation).
std::vector<double> dense_fisher(const std::vector<std::vector<double>>& gradients, double lambda,
                                 std::size_t m, std::size_t d);

/// Exact removal cost of one contiguous group under a full Fisher matrix:
/// pins delta_w to -w on the group, solves the free coordinates exactly and
/// returns 0.5 * delta_w^T F delta_w.
double exact_group_cost(const std::vector<double>& w, const std::vector<double>& fisher_dense,
                        std::size_t d, std::size_t group, std::size_t group_size);

/// Exhaustive constrained-quadratic search over every candidate group; ties
/// broken by lowest group index. Requires group_size to divide d.
std::size_t best_group(const std::vector<double>& w, const std::vector<double>& fisher_dense,
                       std::size_t d, std::size_t group_size);

struct EquivalenceResult {
    std::size_t cases = 0;
    double max_abs_error = 0.0;
    bool pass = false;
};

/// Random-configuration agreement check between the rank-1 update chain and
/// the dense inversion route: d <= 512, B in {2, 10, 50}, full gradient
/// chains with m in [2B, 128], dampening in [1e-7, 1e-1].
EquivalenceResult check_fisher_equivalence(std::size_t cases, std::uint64_t seed,
                                           double tolerance);

struct AgreementResult {
    std::size_t cases = 0;
    std::size_t matches = 0;
    bool pass = false;
};

/// Random-instance agreement between the saliency argmin and the exhaustive
/// search, at d <= 16 with a single full-width Fisher block.
AgreementResult check_selection_agreement(std::size_t cases, std::uint64_t seed);

}  // namespace obskit::oracle
