#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "obskit/fisher.hpp"
#include "obskit/saliency.hpp"
#include "obskit/weight_store.hpp"

namespace obskit {

/// Cubic sparsity ramp between a one-shot initial level and the final target,
/// expressed over optimizer step indices.
struct SparsitySchedule {
    double initial = 0.0;
    double final_target = 0.0;
    std::size_t start_step = 0;
    std::size_t end_step = 0;
};

/// Scheduled sparsity at step t: `initial` up to the start, `final_target`
/// from the end, cubic interpolation in between.
double sparsity_at(const SparsitySchedule& sched, std::size_t t);

/// One gradual-magnitude-pruning step: independently brings every layer
/// segment up to the scheduled sparsity by masking its smallest-magnitude
/// unmasked weights (ties to the lowest index). No weight compensation.
Mask gmp_step(const WeightStore& w, const Mask& mask, const SparsitySchedule& sched,
              std::size_t t);

struct SecondOrderStepResult {
    Mask mask;
    std::vector<double> delta;  // the applied update, length d
    double predicted_loss_increase = 0.0;
    std::size_t groups_pruned = 0;
    SaliencyReport report;
};

/// One second-order global pruning step: scores all unmasked groups, selects
/// the lowest-saliency groups to reach the scheduled sparsity, applies the
/// summed optimal update to `w` in place and re-zeros the mask. The estimator
/// is reset afterwards so the next step collects fresh gradients. Throws
/// UninformedFisherError when the estimator has consumed no gradients.
/// `compensate = false` skips the surviving-weight update (ablation) and only
/// zeros the selected groups.
SecondOrderStepResult second_order_step(WeightStore& w, FisherInverseEstimator& est,
                                        const Mask& mask, const SparsitySchedule& sched,
                                        std::size_t t, GroupSpec group,
                                        unsigned threads = default_threads(),
                                        bool compensate = true);

/// Hadamard product of weights and mask; idempotent.
WeightStore apply_mask(const WeightStore& w, const Mask& mask);

/// One row of the per-step prune log (the loss-versus-step trace of a run).
struct PruneLogRow {
    std::size_t step = 0;
    double scheduled_sparsity = 0.0;
    double achieved_sparsity = 0.0;
    double predicted_loss_increase = 0.0;
    double measured_loss_before = 0.0;
    double measured_loss_after = 0.0;
};

void write_prune_log_csv(std::ostream& out, const std::vector<PruneLogRow>& rows);
std::vector<PruneLogRow> read_prune_log_csv(std::istream& in);

}  // namespace obskit
