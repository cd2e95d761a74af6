#include "obskit/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "obskit/errors.hpp"

namespace obskit {

double sparsity_at(const SparsitySchedule& sched, std::size_t t) {
    if (t <= sched.start_step) return sched.initial;
    if (t >= sched.end_step) return sched.final_target;
    const double span = static_cast<double>(sched.end_step - sched.start_step);
    const double progress = static_cast<double>(t - sched.start_step) / span;
    const double remain = 1.0 - progress;
    return sched.final_target + (sched.initial - sched.final_target) * remain * remain * remain;
}

namespace {

std::size_t target_count(double sparsity, std::size_t length) {
    const double exact = sparsity * static_cast<double>(length);
    return static_cast<std::size_t>(std::max(0.0, std::ceil(exact - 1e-9)));
}

}  // namespace

Mask gmp_step(const WeightStore& w, const Mask& mask, const SparsitySchedule& sched,
              std::size_t t) {
    const double target = sparsity_at(sched, t);
    // ceil rounding overshoots by at most one weight per layer; only a
    // regression beyond that granularity is a schedule violation
    const double allowance =
        static_cast<double>(w.segments().size()) / static_cast<double>(w.size());
    if (target < mask.sparsity() - allowance - 1e-12) {
        throw MonotonicityError("gmp_step: scheduled sparsity " + std::to_string(target) +
                                " below current " + std::to_string(mask.sparsity()));
    }
    Mask next = mask;
    std::vector<std::size_t> order;
    for (const auto& seg : w.segments()) {
        const std::size_t want = target_count(target, seg.length);
        std::size_t have = 0;
        order.clear();
        for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) {
            if (mask.kept(i)) {
                order.push_back(i);
            } else {
                ++have;
            }
        }
        if (want <= have) continue;
        const std::size_t need = std::min(want - have, order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(need),
                          order.end(), [&](std::size_t a, std::size_t b) {
                              const double ma = std::abs(w[a]);
                              const double mb = std::abs(w[b]);
                              if (ma != mb) return ma < mb;
                              return a < b;
                          });
        for (std::size_t k = 0; k < need; ++k) next.prune(order[k]);
    }
    return next;
}

SecondOrderStepResult second_order_step(WeightStore& w, FisherInverseEstimator& est,
                                        const Mask& mask, const SparsitySchedule& sched,
                                        std::size_t t, GroupSpec group, unsigned threads,
                                        bool compensate) {
    if (!est.informed()) {
        throw UninformedFisherError(
            "second_order_step: estimator has consumed no gradients; refusing to prune");
    }
    const double target = sparsity_at(sched, t);
    SaliencyReport report = score_all_groups(w, est, group, mask, threads);
    report.pruned_groups = select_groups(report, mask, target);
    report.predicted_loss_increase = predicted_loss_increase(report);

    SecondOrderStepResult result;
    result.mask = mask;
    result.predicted_loss_increase = report.predicted_loss_increase;
    result.groups_pruned = report.pruned_groups.size();
    if (report.pruned_groups.empty()) {
        result.delta.assign(w.size(), 0.0);
        result.report = std::move(report);
        est.reset();
        return result;
    }

    if (compensate) {
        result.delta = optimal_update(w, est, group, report.pruned_groups, mask);
    } else {
        result.delta.assign(w.size(), 0.0);
        for (std::size_t g : report.pruned_groups) {
            for (std::size_t k = 0; k < group.size; ++k) {
                const std::size_t i = g * group.size + k;
                result.delta[i] = -w[i];
            }
        }
    }
    for (std::size_t g : report.pruned_groups) {
        for (std::size_t k = 0; k < group.size; ++k) result.mask.prune(g * group.size + k);
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += result.delta[i];
    // exact zeros on the enlarged mask
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!result.mask.kept(i)) w[i] = 0.0;
    }
    est.reset();
    result.report = std::move(report);
    return result;
}

WeightStore apply_mask(const WeightStore& w, const Mask& mask) {
    if (w.size() != mask.size()) {
        throw DimensionError("apply_mask: store and mask lengths differ");
    }
    WeightStore out = w;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!mask.kept(i)) out[i] = 0.0;
    }
    return out;
}

void write_prune_log_csv(std::ostream& out, const std::vector<PruneLogRow>& rows) {
    out << "step,scheduled_sparsity,achieved_sparsity,predicted_loss_increase,"
           "measured_loss_before,measured_loss_after\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.step << ',' << r.scheduled_sparsity << ',' << r.achieved_sparsity << ','
            << r.predicted_loss_increase << ',' << r.measured_loss_before << ','
            << r.measured_loss_after << '\n';
    }
}

std::vector<PruneLogRow> read_prune_log_csv(std::istream& in) {
    std::vector<PruneLogRow> rows;
    std::string line;
    if (!std::getline(in, line)) return rows;  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        PruneLogRow r;
        std::getline(ss, field, ',');
        r.step = static_cast<std::size_t>(std::stoull(field));
        std::getline(ss, field, ',');
        r.scheduled_sparsity = std::stod(field);
        std::getline(ss, field, ',');
        r.achieved_sparsity = std::stod(field);
        std::getline(ss, field, ',');
        r.predicted_loss_increase = std::stod(field);
        std::getline(ss, field, ',');
        r.measured_loss_before = std::stod(field);
        std::getline(ss, field, ',');
        r.measured_loss_after = std::stod(field);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace obskit
