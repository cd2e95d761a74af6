#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "obskit/fisher.hpp"
#include "obskit/weight_store.hpp"

namespace obskit {

/// Shape of the groups being pruned together: contiguous runs of `size`
/// weights starting at flat indices that are multiples of `size` (1 for
/// unstructured pruning, 4 for 4-block pruning).
struct GroupSpec {
    std::size_t size = 1;
};

/// Sentinel score for groups that already contain pruned coordinates, so
/// they can never be re-selected.
inline constexpr double kAlreadyPruned = std::numeric_limits<double>::infinity();

/// Scores and selection outcome of one pruning step. Scores have loss units
/// and are nonnegative for every scoreable group.
struct SaliencyReport {
    std::size_t group_size = 1;
    std::vector<double> scores;
    std::vector<std::size_t> pruned_groups;
    double predicted_loss_increase = 0.0;
};

/// Checks the grouping invariants: size >= 1, size divides the Fisher block
/// width, and every layer segment length is a multiple of size (so no group
/// straddles a Fisher-block or layer boundary). Throws AlignmentError.
void validate_grouping(const std::vector<Segment>& segments, GroupSpec spec,
                       std::size_t fisher_block_width);

/// Saliency of one group: 0.5 * w_Q^T (E_Q F^-1 E_Q^T)^-1 w_Q, the predicted
/// loss increase of zeroing the group with its optimal compensation. Groups
/// touching the mask get kAlreadyPruned. For size 1 this reduces to
/// w_j^2 / (2 [F^-1]_jj).
double score_group(const WeightStore& w, const FisherInverseEstimator& est, GroupSpec spec,
                   std::size_t group, const Mask& mask);

/// Scores every group; embarrassingly parallel and read-only.
SaliencyReport score_all_groups(const WeightStore& w, const FisherInverseEstimator& est,
                                GroupSpec spec, const Mask& mask,
                                unsigned threads = default_threads());

/// Picks exactly max(0, ceil(s * d / |Q|) - already_pruned) additional groups
/// with the lowest finite scores, ties broken by lowest group index. Throws
/// MonotonicityError when the target is below the current sparsity.
std::vector<std::size_t> select_groups(const SaliencyReport& report, const Mask& mask,
                                       double target_sparsity);

/// Summed optimal weight update -F^-1 E_Q^T (E_Q F^-1 E_Q^T)^-1 E_Q w over the
/// selected groups (cross-group correlations ignored). The result is exactly
/// -w on every selected coordinate, zero on masked coordinates and on every
/// coordinate outside the Fisher blocks containing selected groups.
std::vector<double> optimal_update(const WeightStore& w, const FisherInverseEstimator& est,
                                   GroupSpec spec, std::span<const std::size_t> groups,
                                   const Mask& mask);

/// Sum of the selected groups' saliency scores.
double predicted_loss_increase(const SaliencyReport& report);

/// CSV export: group_id, layer, offset, score, pruned_flag.
void write_saliency_csv(std::ostream& out, const SaliencyReport& report,
                        const std::vector<Segment>& segments);

}  // namespace obskit
