#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "obskit/recipe.hpp"

namespace obskit {

/// Final metrics and accounting of one recipe execution.
struct RunReport {
    std::string recipe_name;
    std::uint64_t seed = 0;
    std::string status = "completed";  // or "aborted: <phase>: <reason>"
    std::size_t prunable_weights = 0;
    double final_sparsity = 0.0;
    double target_sparsity = 0.0;
    double final_train_loss = 0.0;
    double final_train_accuracy = 0.0;
    double final_holdout_loss = 0.0;
    double final_holdout_accuracy = 0.0;
    double baseline_holdout_loss = 0.0;
    double baseline_holdout_accuracy = 0.0;
    bool has_baseline = false;
    std::size_t prune_events = 0;
    std::size_t underfilled_prune_events = 0;
    std::uint64_t estimator_memory_bytes = 0;
    std::size_t data_recycles = 0;
    std::map<std::string, double> phase_seconds;

    std::string to_json() const;
    static RunReport from_json(const std::string& text);
};

struct RunOptions {
    std::uint64_t seed = 0;
    std::string out_dir;
    unsigned threads = 0;  // 0 = default_threads()
    bool quiet = true;
};

/// Executes a recipe end to end: (teacher) -> (layer drop + distilled retrain)
/// -> warmup / gradual prune / finetune -> (fake-quant finetune), writing
/// report.json, prune_log.csv, timeline.csv, saliency_last.csv (second-order
/// runs) and checkpoint.bin under out_dir. Partial logs survive an abort.
RunReport run(const Recipe& recipe, const RunOptions& options);

}  // namespace obskit
