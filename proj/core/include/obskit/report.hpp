#pragma once

#include <string>

namespace obskit {

struct RenderedReport {
    std::string text;
    std::size_t warnings = 0;
};

/// Plain-text summary of a run directory: final metrics, sparsity-vs-loss
/// table and predicted-vs-measured loss increases per prune step. Missing or
/// partial logs produce warnings instead of failures.
RenderedReport render_report(const std::string& run_dir);

/// Side-by-side final metrics of two runs.
RenderedReport render_compare(const std::string& dir_a, const std::string& dir_b);

}  // namespace obskit
