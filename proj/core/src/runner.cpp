#include "obskit/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "obskit/errors.hpp"
#include "obskit/pruner.hpp"
#include "obskit/train.hpp"

namespace obskit {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string());
        f << content;
        if (!f) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::vector<double> linear_lrs(double from, double to, std::size_t steps) {
    std::vector<double> lrs(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const double frac = steps <= 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        lrs[i] = from + (to - from) * frac;
    }
    return lrs;
}

Dataset probe_subset(const Dataset& holdout, std::size_t cap = 256) {
    const std::size_t n = std::min(cap, holdout.x.rows);
    Dataset probe;
    probe.x = Mat(n, holdout.x.cols);
    probe.y.assign(holdout.y.begin(), holdout.y.begin() + static_cast<std::ptrdiff_t>(n));
    std::copy(holdout.x.data.begin(),
              holdout.x.data.begin() + static_cast<std::ptrdiff_t>(n * holdout.x.cols),
              probe.x.data.begin());
    return probe;
}

class PhaseClock {
public:
    explicit PhaseClock(std::map<std::string, double>& sink) : sink_(sink) {}

    template <typename Fn>
    void timed(const std::string& phase, Fn&& fn) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const auto stop = std::chrono::steady_clock::now();
        sink_[phase] = std::chrono::duration<double>(stop - start).count();
    }

private:
    std::map<std::string, double>& sink_;
};

}  // namespace

std::string RunReport::to_json() const {
    json j;
    j["recipe"] = recipe_name;
    j["seed"] = seed;
    j["status"] = status;
    j["prunable_weights"] = prunable_weights;
    j["final_sparsity"] = final_sparsity;
    j["target_sparsity"] = target_sparsity;
    j["final_train_loss"] = final_train_loss;
    j["final_train_accuracy"] = final_train_accuracy;
    j["final_holdout_loss"] = final_holdout_loss;
    j["final_holdout_accuracy"] = final_holdout_accuracy;
    j["has_baseline"] = has_baseline;
    j["baseline_holdout_loss"] = baseline_holdout_loss;
    j["baseline_holdout_accuracy"] = baseline_holdout_accuracy;
    j["prune_events"] = prune_events;
    j["underfilled_prune_events"] = underfilled_prune_events;
    j["estimator_memory_bytes"] = estimator_memory_bytes;
    j["data_recycles"] = data_recycles;
    j["phase_seconds"] = phase_seconds;
    return j.dump(2) + "\n";
}

RunReport RunReport::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("report: invalid JSON: ") + e.what());
    }
    RunReport r;
    r.recipe_name = j.value("recipe", "");
    r.seed = j.value("seed", std::uint64_t{0});
    r.status = j.value("status", "");
    r.prunable_weights = j.value("prunable_weights", std::size_t{0});
    r.final_sparsity = j.value("final_sparsity", 0.0);
    r.target_sparsity = j.value("target_sparsity", 0.0);
    r.final_train_loss = j.value("final_train_loss", 0.0);
    r.final_train_accuracy = j.value("final_train_accuracy", 0.0);
    r.final_holdout_loss = j.value("final_holdout_loss", 0.0);
    r.final_holdout_accuracy = j.value("final_holdout_accuracy", 0.0);
    r.has_baseline = j.value("has_baseline", false);
    r.baseline_holdout_loss = j.value("baseline_holdout_loss", 0.0);
    r.baseline_holdout_accuracy = j.value("baseline_holdout_accuracy", 0.0);
    r.prune_events = j.value("prune_events", std::size_t{0});
    r.underfilled_prune_events = j.value("underfilled_prune_events", std::size_t{0});
    r.estimator_memory_bytes = j.value("estimator_memory_bytes", std::uint64_t{0});
    r.data_recycles = j.value("data_recycles", std::size_t{0});
    if (j.contains("phase_seconds")) {
        for (const auto& [k, v] : j.at("phase_seconds").items()) {
            r.phase_seconds[k] = v.get<double>();
        }
    }
    return r;
}

RunReport run(const Recipe& recipe, const RunOptions& options) {
    const unsigned threads = options.threads == 0 ? default_threads() : options.threads;
    const fs::path out(options.out_dir);
    fs::create_directories(out);

    RunReport report;
    report.recipe_name = recipe.name;
    report.seed = options.seed;
    report.target_sparsity = recipe.prune ? recipe.prune->target_sparsity : 0.0;
    PhaseClock clock(report.phase_seconds);

    std::ostringstream runlog;
    std::vector<PruneLogRow> prune_log;
    auto flush_logs = [&] {
        write_file_atomic(out / "run.log", runlog.str());
        std::ostringstream csv;
        write_prune_log_csv(csv, prune_log);
        write_file_atomic(out / "prune_log.csv", csv.str());
        write_file_atomic(out / "report.json", report.to_json());
    };

    const std::size_t spe = recipe.steps_per_epoch;
    std::string phase = "setup";
    try {
        // synthetic task; the run seed reshuffles the generator so different
        // seeds see different draws of the same task family
        DatasetSpec data_spec = recipe.data;
        data_spec.seed = mix_seed(recipe.data.seed, options.seed);
        SyntheticData data;
        clock.timed("setup", [&] { data = make_synthetic(data_spec); });
        const Dataset probe = probe_subset(data.holdout);

        ToyModel teacher;
        bool have_teacher = false;
        if (recipe.teacher) {
            phase = "teacher";
            clock.timed("teacher", [&] {
                std::mt19937_64 rng(mix_seed(options.seed, 2));
                teacher = build_model(recipe.model, rng);
                BatchStream stream(data.train, recipe.batch_size, mix_seed(options.seed, 3));
                SgdState opt(teacher);
                Mask dense_mask(teacher.prunable_size(), teacher.prunable_segments());
                const auto steps = static_cast<std::size_t>(
                    std::llround(recipe.teacher->epochs * static_cast<double>(spe)));
                const auto lrs = linear_lrs(recipe.teacher->lr, 0.1 * recipe.teacher->lr, steps);
                OptimizerConfig cfg{recipe.optimizer.momentum, recipe.optimizer.weight_decay};
                train_steps(teacher, stream, lrs, dense_mask, opt, nullptr, cfg);
                have_teacher = true;
                const auto base = evaluate(teacher, data.holdout);
                report.has_baseline = true;
                report.baseline_holdout_loss = base.loss;
                report.baseline_holdout_accuracy = base.accuracy;
                runlog << "teacher: holdout loss " << base.loss << " accuracy " << base.accuracy
                       << "\n";
            });
        }

        KDConfig kd{recipe.kd.hardness, recipe.kd.temperature, have_teacher ? &teacher : nullptr};
        const KDConfig* kd_ptr = recipe.kd.hardness > 0.0 ? &kd : nullptr;

        // the student trains toward the teacher through distillation; layer
        // dropping instead carves the student out of the trained teacher
        ToyModel model;
        if (recipe.layer_drop) {
            model = teacher;
        } else {
            std::mt19937_64 rng(mix_seed(options.seed, 20));
            model = build_model(recipe.model, rng);
        }

        if (recipe.layer_drop) {
            phase = "layer_drop";
            clock.timed("layer_drop", [&] {
                model = drop_layers(model, recipe.layer_drop->keep);
                runlog << "layer_drop: kept " << recipe.layer_drop->keep << " of "
                       << recipe.model.hidden.size() << " hidden layers\n";
                const auto steps = static_cast<std::size_t>(
                    std::llround(recipe.layer_drop->retrain_epochs * static_cast<double>(spe)));
                if (steps > 0) {
                    BatchStream stream(data.train, recipe.batch_size, mix_seed(options.seed, 6));
                    SgdState opt(model);
                    Mask dense_mask(model.prunable_size(), model.prunable_segments());
                    const auto lrs =
                        linear_lrs(recipe.layer_drop->lr, 0.1 * recipe.layer_drop->lr, steps);
                    OptimizerConfig cfg{recipe.optimizer.momentum, recipe.optimizer.weight_decay};
                    train_steps(model, stream, lrs, dense_mask, opt, kd_ptr, cfg);
                }
            });
        }

        report.prunable_weights = model.prunable_size();
        Mask mask(model.prunable_size(), model.prunable_segments());
        Timeline timeline = compile_timeline(recipe, spe);
        {
            std::ostringstream csv;
            write_timeline_csv(csv, timeline);
            write_file_atomic(out / "timeline.csv", csv.str());
        }

        std::optional<FisherInverseEstimator> est;
        GroupSpec group{1};
        if (recipe.prune && recipe.prune->method == PruneMethod::ObertsGlobal) {
            group.size = recipe.prune->group_size;
            validate_grouping(model.prunable_segments(), group, recipe.fisher.block_width);
            est.emplace(model.prunable_size(), recipe.fisher.block_width,
                        recipe.fisher.dampening, recipe.fisher.gradient_count);
            est->set_threads(threads);
            report.estimator_memory_bytes = est->memory_bytes();
        }

        phase = "main";
        clock.timed("main", [&] {
            BatchStream stream(data.train, recipe.batch_size, mix_seed(options.seed, 4));
            SgdState opt(model);
            OptimizerConfig cfg{recipe.optimizer.momentum, recipe.optimizer.weight_decay};
            for (const auto& rec : timeline.records) {
                if (rec.prune_flag) {
                    PruneLogRow row;
                    row.step = rec.step;
                    row.scheduled_sparsity = rec.scheduled_sparsity;
                    row.measured_loss_before = evaluate(model, probe).loss;
                    if (recipe.prune->method == PruneMethod::GmpUniform) {
                        WeightStore store = model.flatten_prunable();
                        mask = gmp_step(store, mask, timeline.schedule, rec.step);
                        model.unflatten_prunable(apply_mask(store, mask));
                        row.predicted_loss_increase = 0.0;
                    } else {
                        const std::size_t recycles = gradient_stream(
                            model, stream, mask, kd_ptr, recipe.fisher.gradient_count,
                            [&](std::span<const double> g) { est->update(g); });
                        if (recycles > 0) {
                            report.data_recycles += recycles;
                            runlog << "step " << rec.step << ": data recycled " << recycles
                                   << "x while collecting gradients\n";
                        }
                        if (est->consumed() < est->gradient_budget()) {
                            ++report.underfilled_prune_events;
                            runlog << "step " << rec.step << ": pruning from an underfilled "
                                   << "estimator (" << est->consumed() << " of "
                                   << est->gradient_budget() << " gradients)\n";
                        }
                        est->save_file((out / "estimator.bin").string());
                        WeightStore store = model.flatten_prunable();
                        auto result =
                            second_order_step(store, *est, mask, timeline.schedule, rec.step,
                                              group, threads, recipe.prune->compensate);
                        model.unflatten_prunable(store);
                        mask = std::move(result.mask);
                        row.predicted_loss_increase = result.predicted_loss_increase;
                        std::ostringstream csv;
                        write_saliency_csv(csv, result.report, model.prunable_segments());
                        write_file_atomic(out / "saliency_last.csv", csv.str());
                    }
                    row.achieved_sparsity = mask.sparsity();
                    row.measured_loss_after = evaluate(model, probe).loss;
                    prune_log.push_back(row);
                    runlog << "step " << rec.step << ": pruned to " << row.achieved_sparsity
                           << " (scheduled " << row.scheduled_sparsity << ")\n";
                }
                const double lrs[1] = {rec.lr};
                train_steps(model, stream, lrs, mask, opt, kd_ptr, cfg);
            }
            report.prune_events = prune_log.size();
        });
        flush_logs();

        if (recipe.quantize) {
            phase = "quantize";
            clock.timed("quantize", [&] {
                QuantConfig qc{recipe.quantize->bits, recipe.quantize->observer_epochs};
                BatchStream stream(data.train, recipe.batch_size, mix_seed(options.seed, 5));
                OptimizerConfig cfg{recipe.optimizer.momentum, recipe.optimizer.weight_decay};
                const std::size_t total_steps = recipe.quantize->epochs * spe;
                const auto lrs =
                    linear_lrs(recipe.quantize->lr, 0.1 * recipe.quantize->lr, total_steps);
                model = fake_quant_finetune(std::move(model), mask, qc, stream, lrs, spe, kd_ptr,
                                            cfg);
                runlog << "quantize: observers frozen after " << recipe.quantize->observer_epochs
                       << " epochs\n";
            });
        }

        phase = "final";
        clock.timed("final", [&] {
            report.final_sparsity = mask.sparsity();
            const auto train_eval = evaluate(model, data.train);
            const auto holdout_eval = evaluate(model, data.holdout);
            report.final_train_loss = train_eval.loss;
            report.final_train_accuracy = train_eval.accuracy;
            report.final_holdout_loss = holdout_eval.loss;
            report.final_holdout_accuracy = holdout_eval.accuracy;
            model.save_file((out / "checkpoint.bin").string());
            mask.save_file((out / "mask.bin").string());
        });
        report.status = "completed";
        flush_logs();
    } catch (const Error& e) {
        report.status = "aborted: " + phase + ": " + e.what();
        runlog << report.status << "\n";
        flush_logs();
        throw Error(report.status);
    }
    return report;
}

}  // namespace obskit
