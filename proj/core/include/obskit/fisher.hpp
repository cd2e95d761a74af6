#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "obskit/parallel.hpp"

namespace obskit {

/// Block-diagonal approximation of the inverse dampened empirical Fisher
/// matrix, maintained one gradient at a time.
///
/// The estimator tracks N_B = ceil(d / B) independent dense B x B blocks.
/// Block b starts as (1/lambda) * I and is downdated for each gradient g:
///
///   u   = F_b g_b
///   F_b = F_b - (u u^T) / (m + g_b^T u)
///
/// which is the exact rank-1 inverse update of lambda*I + (1/m) * sum of
/// gradient outer products, restricted to block b. The declared gradient
/// count m appears in every denominator regardless of how many gradients
/// have been consumed so far. Blocks are re-symmetrized after each update
/// to bound drift over long update chains.
///
/// When B does not divide d, the trailing block is padded with phantom
/// coordinates whose gradients are always zero; their rows stay identity
/// and they are excluded from every query.
class FisherInverseEstimator {
public:
    FisherInverseEstimator(std::size_t d, std::size_t block_width, double dampening,
                           std::size_t gradient_budget);

    /// Number of blocks (padding included) without constructing anything.
    static std::uint64_t block_count_for(std::uint64_t d, std::uint64_t block_width);

    /// Exact storage cost of the block tensor: n_blocks * B^2 * bytes_per_entry.
    static std::uint64_t storage_bytes_for(std::uint64_t d, std::uint64_t block_width,
                                           std::uint64_t bytes_per_entry = 8);

    /// Applies one gradient (length d, pre-padding). Throws CapacityError once
    /// the declared budget m is exhausted and NonFiniteError for NaN/inf input;
    /// in both cases the estimator is left unchanged.
    void update(std::span<const double> gradient);

    /// Back to (1/lambda) * I with consumed = 0, keeping dimensions and budget.
    void reset();

    /// [F^-1]_jj for j in [0, d); phantom coordinates excluded.
    std::vector<double> inverse_diagonal() const;

    /// Row-major |Q| x |Q| sub-matrix of the block covering the contiguous
    /// group [offset, offset + group_size). Throws AlignmentError if the group
    /// straddles two blocks.
    std::vector<double> group_inverse_submatrix(std::size_t offset, std::size_t group_size) const;

    /// Block-diagonal product F^-1 v for v of length d.
    std::vector<double> ihvp(std::span<const double> v) const;

    std::size_t dim() const { return d_; }
    std::size_t block_width() const { return block_width_; }
    std::size_t block_count() const { return n_blocks_; }
    double dampening() const { return dampening_; }
    std::size_t gradient_budget() const { return budget_; }
    std::size_t consumed() const { return consumed_; }
    bool informed() const { return consumed_ > 0; }

    std::size_t memory_bytes() const;

    /// Row-major B x B view of one block.
    std::span<const double> block(std::size_t b) const;

    unsigned threads() const { return threads_; }
    void set_threads(unsigned t) { threads_ = t == 0 ? 1 : t; }

    /// Binary checkpoint: d, B as u64, lambda as f64, m, consumed as u64,
    /// then row-major block matrices as f64, everything little-endian.
    void save(std::ostream& out) const;
    void save_file(const std::string& path) const;
    static FisherInverseEstimator load(std::istream& in);
    static FisherInverseEstimator load_file(const std::string& path);

private:
    std::size_t d_ = 0;
    std::size_t block_width_ = 0;
    std::size_t n_blocks_ = 0;
    double dampening_ = 0.0;
    std::size_t budget_ = 0;
    std::size_t consumed_ = 0;
    unsigned threads_ = default_threads();
    std::vector<double> blocks_;  // n_blocks * B * B, row-major per block

    void fill_identity();
};

}  // namespace obskit
