#include "obskit/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "obskit/errors.hpp"
#include "obskit/linalg.hpp"

namespace obskit {

namespace {

bool group_touches_mask(const Mask& mask, std::size_t offset, std::size_t size) {
    for (std::size_t i = 0; i < size; ++i) {
        if (!mask.kept(offset + i)) return true;
    }
    return false;
}

}  // namespace

void validate_grouping(const std::vector<Segment>& segments, GroupSpec spec,
                       std::size_t fisher_block_width) {
    if (spec.size == 0) throw DimensionError("grouping: group size must be at least 1");
    if (fisher_block_width % spec.size != 0) {
        throw AlignmentError("grouping: group size " + std::to_string(spec.size) +
                             " does not divide Fisher block width " +
                             std::to_string(fisher_block_width));
    }
    for (const auto& seg : segments) {
        if (seg.length % spec.size != 0) {
            throw AlignmentError("grouping: segment " + seg.name + " of length " +
                                 std::to_string(seg.length) + " is not a multiple of group size " +
                                 std::to_string(spec.size));
        }
    }
}

double score_group(const WeightStore& w, const FisherInverseEstimator& est, GroupSpec spec,
                   std::size_t group, const Mask& mask) {
    const std::size_t size = spec.size;
    const std::size_t offset = group * size;
    if (group_touches_mask(mask, offset, size)) return kAlreadyPruned;

    if (size == 1) {
        const double diag = est.group_inverse_submatrix(offset, 1)[0];
        const double wj = w[offset];
        return wj * wj / (2.0 * diag);
    }
    auto sub = est.group_inverse_submatrix(offset, size);
    std::span<const double> wq(w.values().data() + offset, size);
    std::vector<double> x;
    try {
        x = spd_solve(std::move(sub), size, wq);
    } catch (const Error& e) {
        throw Error("score_group: group " + std::to_string(group) + ": " + e.what());
    }
    double rho = 0.0;
    for (std::size_t i = 0; i < size; ++i) rho += wq[i] * x[i];
    return 0.5 * rho;
}

SaliencyReport score_all_groups(const WeightStore& w, const FisherInverseEstimator& est,
                                GroupSpec spec, const Mask& mask, unsigned threads) {
    validate_grouping(w.segments(), spec, est.block_width());
    if (w.size() != mask.size() || w.size() != est.dim()) {
        throw DimensionError("score_all_groups: store, mask and estimator disagree on d");
    }
    SaliencyReport report;
    report.group_size = spec.size;
    const std::size_t n_groups = w.size() / spec.size;
    report.scores.assign(n_groups, 0.0);
    parallel_for(n_groups, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t g = lo; g < hi; ++g) {
            report.scores[g] = score_group(w, est, spec, g, mask);
        }
    });
    return report;
}

std::vector<std::size_t> select_groups(const SaliencyReport& report, const Mask& mask,
                                       double target_sparsity) {
    if (target_sparsity < 0.0 || target_sparsity > 1.0) {
        throw ValidationError("select_groups: target sparsity must lie in [0, 1]");
    }
    const std::size_t size = report.group_size;
    const std::size_t d = mask.size();
    const double current = mask.sparsity();
    // ceil rounding overshoots by at most one group; only a regression beyond
    // that granularity is a schedule violation
    const double allowance = static_cast<double>(size) / static_cast<double>(d);
    if (target_sparsity < current - allowance - 1e-12) {
        throw MonotonicityError("select_groups: target sparsity " +
                                std::to_string(target_sparsity) + " below current " +
                                std::to_string(current));
    }
    const auto target_groups = static_cast<std::size_t>(
        std::max(0.0, std::ceil(target_sparsity * static_cast<double>(d) /
                                    static_cast<double>(size) -
                                1e-9)));

    std::size_t already = 0;
    const std::size_t n_groups = report.scores.size();
    for (std::size_t g = 0; g < n_groups; ++g) {
        if (group_touches_mask(mask, g * size, size)) ++already;
    }
    if (target_groups <= already) return {};
    std::size_t wanted = target_groups - already;

    std::vector<std::size_t> candidates;
    candidates.reserve(n_groups - already);
    for (std::size_t g = 0; g < n_groups; ++g) {
        if (std::isfinite(report.scores[g])) candidates.push_back(g);
    }
    wanted = std::min(wanted, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(wanted),
                      candidates.end(), [&](std::size_t a, std::size_t b) {
                          if (report.scores[a] != report.scores[b]) {
                              return report.scores[a] < report.scores[b];
                          }
                          return a < b;
                      });
    candidates.resize(wanted);
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

std::vector<double> optimal_update(const WeightStore& w, const FisherInverseEstimator& est,
                                   GroupSpec spec, std::span<const std::size_t> groups,
                                   const Mask& mask) {
    const std::size_t size = spec.size;
    const std::size_t B = est.block_width();
    const std::size_t d = w.size();
    {
        std::vector<std::size_t> sorted(groups.begin(), groups.end());
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ConflictError("optimal_update: overlapping groups in selection");
        }
    }

    std::vector<double> delta(d, 0.0);
    for (std::size_t g : groups) {
        const std::size_t offset = g * size;
        const std::size_t b = offset / B;
        const std::size_t base = b * B;
        const std::size_t valid = std::min(B, d - base);
        const std::size_t local = offset - base;

        auto sub = est.group_inverse_submatrix(offset, size);
        std::span<const double> wq(w.values().data() + offset, size);
        const auto x = spd_solve(std::move(sub), size, wq);

        const auto blk = est.block(b);
        for (std::size_t i = 0; i < valid; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < size; ++k) s += blk[i * B + (local + k)] * x[k];
            delta[base + i] -= s;
        }
    }

    // compensation never lands on pruned coordinates
    for (std::size_t i = 0; i < d; ++i) {
        if (!mask.kept(i)) delta[i] = 0.0;
    }
    // selected coordinates go exactly to zero
    for (std::size_t g : groups) {
        const std::size_t offset = g * size;
        for (std::size_t k = 0; k < size; ++k) delta[offset + k] = -w[offset + k];
    }
    return delta;
}

double predicted_loss_increase(const SaliencyReport& report) {
    double total = 0.0;
    for (std::size_t g : report.pruned_groups) total += report.scores[g];
    return total;
}

void write_saliency_csv(std::ostream& out, const SaliencyReport& report,
                        const std::vector<Segment>& segments) {
    out << "group_id,layer,offset,score,pruned_flag\n";
    std::vector<std::uint8_t> pruned(report.scores.size(), 0);
    for (std::size_t g : report.pruned_groups) pruned[g] = 1;
    std::size_t seg = 0;
    for (std::size_t g = 0; g < report.scores.size(); ++g) {
        const std::size_t offset = g * report.group_size;
        while (seg + 1 < segments.size() && offset >= segments[seg].offset + segments[seg].length) {
            ++seg;
        }
        out << g << ',' << (segments.empty() ? "" : segments[seg].name) << ',' << offset << ','
            << report.scores[g] << ',' << int(pruned[g]) << '\n';
    }
}

}  // namespace obskit
