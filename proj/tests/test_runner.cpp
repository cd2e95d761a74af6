#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "obskit/errors.hpp"
#include "obskit/fisher.hpp"
#include "obskit/report.hpp"
#include "obskit/runner.hpp"

using namespace obskit;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    std::stringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "obskit_tests" / name;
    fs::remove_all(dir);
    return dir;
}

Recipe dense_recipe() {
    return parse_recipe(R"({
      "name": "test-dense",
      "epochs": 4, "batch_size": 16, "steps_per_epoch": 10,
      "lr": { "initial": 0.1, "final": 0.01, "schedule": "linear_decay" },
      "kd": { "hardness": 0.0, "temperature": 2.0 },
      "model": { "input": 6, "hidden": [12, 12], "classes": 3, "activation": "relu" },
      "data": { "kind": "gaussian_mixture", "seed": 5, "n_samples": 160, "n_features": 6,
                "n_classes": 3, "cluster_spread": 0.5, "holdout_samples": 64 },
      "phases": ["finetune"]
    })");
}

Recipe gmp_recipe() {
    return parse_recipe(R"({
      "name": "test-gmp",
      "epochs": 6, "batch_size": 16, "steps_per_epoch": 10,
      "lr": { "initial": 0.1, "final": 0.01, "schedule": "linear_decay" },
      "kd": { "hardness": 0.0, "temperature": 2.0 },
      "prune": { "method": "gmp_uniform", "group_size": 1, "start_epoch": 1, "end_epoch": 5,
                 "frequency_per_epoch": 2, "initial_sparsity": 0.2, "target_sparsity": 0.5 },
      "model": { "input": 6, "hidden": [12, 12], "classes": 3, "activation": "relu" },
      "data": { "kind": "gaussian_mixture", "seed": 5, "n_samples": 160, "n_features": 6,
                "n_classes": 3, "cluster_spread": 0.5, "holdout_samples": 64 },
      "phases": ["prune", "finetune"]
    })");
}

Recipe oberts_recipe() {
    return parse_recipe(R"({
      "name": "test-oberts",
      "epochs": 6, "batch_size": 16, "steps_per_epoch": 10,
      "lr": { "initial": 0.1, "final": 0.01, "schedule": "linear_decay" },
      "kd": { "hardness": 0.0, "temperature": 2.0 },
      "prune": { "method": "oberts_global", "group_size": 1, "start_epoch": 1, "end_epoch": 5,
                 "every_epochs": 2, "initial_sparsity": 0.2, "target_sparsity": 0.5,
                 "compensate": true },
      "fisher": { "block_width": 10, "gradient_count": 8, "dampening": 1e-4 },
      "model": { "input": 6, "hidden": [12, 12], "classes": 3, "activation": "relu" },
      "data": { "kind": "gaussian_mixture", "seed": 5, "n_samples": 160, "n_features": 6,
                "n_classes": 3, "cluster_spread": 0.5, "holdout_samples": 64 },
      "phases": ["prune", "finetune"]
    })");
}

Recipe compound_recipe() {
    return parse_recipe(R"({
      "name": "test-compound",
      "epochs": 5, "batch_size": 16, "steps_per_epoch": 10,
      "lr": { "initial": 0.08, "final": 0.008, "schedule": "linear_decay" },
      "kd": { "hardness": 1.0, "temperature": 2.0 },
      "prune": { "method": "oberts_global", "group_size": 4, "start_epoch": 1, "end_epoch": 4,
                 "every_epochs": 1, "initial_sparsity": 0.2, "target_sparsity": 0.5,
                 "compensate": true },
      "fisher": { "block_width": 8, "gradient_count": 8, "dampening": 1e-4 },
      "model": { "input": 8, "hidden": [16, 16, 16, 16], "classes": 3, "activation": "relu" },
      "data": { "kind": "gaussian_mixture", "seed": 6, "n_samples": 160, "n_features": 8,
                "n_classes": 3, "cluster_spread": 0.5, "holdout_samples": 64 },
      "phases": ["layer_drop", "prune", "finetune", "quantize"],
      "layer_drop": { "keep": 2, "retrain_epochs": 1, "lr": 0.08 },
      "quantize": { "bits": 8, "epochs": 2, "observer_epochs": 1, "lr": 0.01 },
      "teacher": { "epochs": 2, "lr": 0.08 }
    })");
}

}  // namespace

TEST_CASE("dense recipe never invokes the pruner") {
    const auto dir = fresh_dir("dense");
    RunOptions opt;
    opt.seed = 1;
    opt.out_dir = dir.string();
    const auto report = run(dense_recipe(), opt);
    CHECK(report.status == "completed");
    CHECK(report.final_sparsity == 0.0);
    CHECK(report.prune_events == 0);
    CHECK(report.estimator_memory_bytes == 0);
    CHECK(fs::exists(dir / "report.json"));
    CHECK(fs::exists(dir / "checkpoint.bin"));
    CHECK(fs::exists(dir / "timeline.csv"));
    CHECK(fs::exists(dir / "prune_log.csv"));

    const auto parsed = RunReport::from_json(slurp(dir / "report.json"));
    CHECK(parsed.recipe_name == "test-dense");
    CHECK(parsed.final_sparsity == 0.0);
}

TEST_CASE("gmp run reaches its target uniformly per layer") {
    const auto dir = fresh_dir("gmp");
    RunOptions opt;
    opt.seed = 2;
    opt.out_dir = dir.string();
    const auto recipe = gmp_recipe();
    const auto report = run(recipe, opt);
    CHECK(report.status == "completed");
    // events: epochs 1, 1.5, ..., 5 inclusive
    CHECK(report.prune_events == 9);
    const auto tl = compile_timeline(recipe, recipe.steps_per_epoch);
    CHECK(report.prune_events == tl.prune_steps.size());

    // 0.5 of every layer within one weight per layer
    CHECK(report.final_sparsity >= 0.5);
    CHECK(report.final_sparsity <= 0.5 + 3.0 / static_cast<double>(report.prunable_weights));

    std::ifstream log(dir / "prune_log.csv");
    const auto rows = read_prune_log_csv(log);
    REQUIRE(rows.size() == 9);
    double prev = 0.0;
    for (const auto& r : rows) {
        CHECK(r.achieved_sparsity >= prev - 1e-12);
        CHECK(std::abs(r.achieved_sparsity - r.scheduled_sparsity) <=
              3.0 / static_cast<double>(report.prunable_weights) + 1e-9);
        prev = r.achieved_sparsity;
    }
}

TEST_CASE("second-order run reports exact estimator memory and saliency export") {
    const auto dir = fresh_dir("oberts");
    RunOptions opt;
    opt.seed = 3;
    opt.out_dir = dir.string();
    const auto recipe = oberts_recipe();
    const auto report = run(recipe, opt);
    CHECK(report.status == "completed");
    CHECK(report.final_sparsity >= 0.5);

    const auto blocks = FisherInverseEstimator::block_count_for(report.prunable_weights, 10);
    CHECK(report.estimator_memory_bytes == blocks * 10 * 10 * 8);
    CHECK(report.underfilled_prune_events == 0);
    CHECK(fs::exists(dir / "saliency_last.csv"));
    CHECK(fs::exists(dir / "mask.bin"));

    // the persisted estimator state reloads with the declared shape
    const auto est = FisherInverseEstimator::load_file((dir / "estimator.bin").string());
    CHECK(est.dim() == report.prunable_weights);
    CHECK(est.block_width() == 10);
    CHECK(est.consumed() == est.gradient_budget());

    // predicted loss increases are recorded for second-order steps
    std::ifstream log(dir / "prune_log.csv");
    const auto rows = read_prune_log_csv(log);
    REQUIRE(!rows.empty());
    bool any_positive = false;
    for (const auto& r : rows) any_positive = any_positive || r.predicted_loss_increase > 0.0;
    CHECK(any_positive);
}

TEST_CASE("identical recipe and seed reproduce the run exactly") {
    const auto dir_a = fresh_dir("repro_a");
    const auto dir_b = fresh_dir("repro_b");
    RunOptions opt;
    opt.seed = 11;
    opt.out_dir = dir_a.string();
    const auto ra = run(oberts_recipe(), opt);
    opt.out_dir = dir_b.string();
    const auto rb = run(oberts_recipe(), opt);

    CHECK(slurp(dir_a / "prune_log.csv") == slurp(dir_b / "prune_log.csv"));
    CHECK(slurp(dir_a / "timeline.csv") == slurp(dir_b / "timeline.csv"));
    CHECK(ra.final_holdout_loss == rb.final_holdout_loss);
    CHECK(ra.final_train_accuracy == rb.final_train_accuracy);
    CHECK(ra.final_sparsity == rb.final_sparsity);
    CHECK(slurp(dir_a / "checkpoint.bin") == slurp(dir_b / "checkpoint.bin"));
}

TEST_CASE("compound pipeline drops layers, prunes blocks, quantizes, and stays masked") {
    const auto dir = fresh_dir("compound");
    RunOptions opt;
    opt.seed = 4;
    opt.out_dir = dir.string();
    const auto report = run(compound_recipe(), opt);
    CHECK(report.status == "completed");
    CHECK(report.has_baseline);
    // dropped model: 2 hidden layers of the original 4
    CHECK(report.prunable_weights == 8 * 16 + 16 * 16);
    CHECK(report.final_sparsity >= 0.5);

    const auto model = ToyModel::load_file((dir / "checkpoint.bin").string());
    CHECK(model.depth() == 3);
    const auto flat = model.flatten_prunable();
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < flat.size(); ++i) zeros += flat[i] == 0.0 ? 1 : 0;
    CHECK(zeros >= static_cast<std::size_t>(0.5 * static_cast<double>(flat.size())));
}

TEST_CASE("aborted runs leave partial logs and an aborted status") {
    auto recipe = dense_recipe();
    recipe.model.activation = Activation::None;  // linear net diverges under huge steps
    recipe.lr.initial = 5e4;
    recipe.lr.final_value = 5e4;
    const auto dir = fresh_dir("abort");
    RunOptions opt;
    opt.seed = 7;
    opt.out_dir = dir.string();
    CHECK_THROWS_AS(run(recipe, opt), Error);
    REQUIRE(fs::exists(dir / "report.json"));
    const auto report = RunReport::from_json(slurp(dir / "report.json"));
    CHECK(report.status.rfind("aborted: main", 0) == 0);
    CHECK(fs::exists(dir / "prune_log.csv"));

    // rendering an aborted run reports warnings instead of failing
    const auto rendered = render_report(dir.string());
    CHECK(rendered.warnings >= 1);
    CHECK(rendered.text.find("aborted") != std::string::npos);
}

TEST_CASE("report rendering summarizes runs and flags missing logs") {
    const auto dir = fresh_dir("render");
    RunOptions opt;
    opt.seed = 8;
    opt.out_dir = dir.string();
    run(gmp_recipe(), opt);

    const auto rendered = render_report(dir.string());
    CHECK(rendered.warnings == 0);
    CHECK(rendered.text.find("test-gmp") != std::string::npos);
    CHECK(rendered.text.find("prune trace") != std::string::npos);

    const auto missing = render_report((dir / "nope").string());
    CHECK(missing.warnings >= 1);

    const auto dir_b = fresh_dir("render_b");
    opt.out_dir = dir_b.string();
    run(dense_recipe(), opt);
    const auto compare = render_compare(dir.string(), dir_b.string());
    CHECK(compare.warnings == 0);
    CHECK(compare.text.find("final_sparsity") != std::string::npos);
    CHECK(compare.text.find("test-dense") != std::string::npos);
}

TEST_CASE("second-order runs refuse models whose segments break the grouping") {
    auto recipe = oberts_recipe();
    recipe.prune->group_size = 4;
    recipe.fisher.block_width = 8;
    // hidden [12, 12]: first segment 6*12 = 72, divisible by 4; ok. Force a bad
    // segment with hidden [13, 12]: 6*13 = 78, not a multiple of 4.
    recipe.model.hidden = {13, 12};
    const auto dir = fresh_dir("misaligned");
    RunOptions opt;
    opt.seed = 9;
    opt.out_dir = dir.string();
    CHECK_THROWS_AS(run(recipe, opt), Error);
    const auto report = RunReport::from_json(slurp(dir / "report.json"));
    CHECK(report.status.find("aborted") != std::string::npos);
}
