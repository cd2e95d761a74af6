#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "obskit/data.hpp"
#include "obskit/model.hpp"
#include "obskit/pruner.hpp"

namespace obskit {

enum class PruneMethod { GmpUniform, ObertsGlobal };
enum class LrSchedule { LinearDecay, LinearDecayWithRewinds };

std::string to_string(PruneMethod m);
std::string to_string(LrSchedule s);

/// Rewind points: either explicit fractional epochs or a periodic pattern.
struct RewindSpec {
    std::vector<double> epochs;
    double start_epoch = 0.0;
    double period_epochs = 0.0;
    bool periodic = false;

    bool operator==(const RewindSpec&) const = default;
};

struct LrSpec {
    double initial = 0.0;
    double final_value = 0.0;
    LrSchedule schedule = LrSchedule::LinearDecay;
    RewindSpec rewinds;

    bool operator==(const LrSpec&) const = default;
};

struct KdSpec {
    double hardness = 0.0;
    double temperature = 1.0;

    bool operator==(const KdSpec&) const = default;
};

struct PruneSpec {
    PruneMethod method = PruneMethod::GmpUniform;
    std::size_t group_size = 1;
    double start_epoch = 0.0;
    double end_epoch = 0.0;
    double frequency_per_epoch = 0.0;  // exactly one of the two is set
    double every_epochs = 0.0;
    double initial_sparsity = 0.0;
    double target_sparsity = 0.0;
    bool compensate = true;

    bool operator==(const PruneSpec&) const = default;
};

struct FisherSpec {
    std::size_t block_width = 50;
    std::size_t gradient_count = 1024;
    double dampening = 1e-7;

    bool operator==(const FisherSpec&) const = default;
};

struct LayerDropSpec {
    std::size_t keep = 0;
    double retrain_epochs = 0.0;
    double lr = 0.0;

    bool operator==(const LayerDropSpec&) const = default;
};

struct QuantizeSpec {
    int bits = 8;
    std::size_t epochs = 10;
    std::size_t observer_epochs = 5;
    double lr = 0.0;

    bool operator==(const QuantizeSpec&) const = default;
};

struct TeacherSpec {
    double epochs = 0.0;
    double lr = 0.0;

    bool operator==(const TeacherSpec&) const = default;
};

struct OptimSpec {
    double momentum = 0.9;
    double weight_decay = 0.0;

    bool operator==(const OptimSpec&) const = default;
};

/// Declarative compression recipe: one training run described end to end
/// (epochs, LR decay/rewinds, prune window and frequency, sparsity targets,
/// distillation and quantization settings, synthetic task).
struct Recipe {
    std::string name;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    std::size_t steps_per_epoch = 0;
    LrSpec lr;
    KdSpec kd;
    std::optional<PruneSpec> prune;
    FisherSpec fisher;
    ModelConfig model;
    DatasetSpec data;
    OptimSpec optimizer;
    std::vector<std::string> phases;  // ordered subset of layer_drop, prune, finetune, quantize
    std::optional<LayerDropSpec> layer_drop;
    std::optional<QuantizeSpec> quantize;
    std::optional<TeacherSpec> teacher;

    bool operator==(const Recipe&) const = default;
};

/// Parses and validates recipe text (JSON, one recipe per file). Unknown keys,
/// range violations, and phase-order violations raise ValidationError with a
/// path-qualified message.
Recipe parse_recipe(const std::string& text);
Recipe load_recipe_file(const std::string& path);

/// Canonical text form; parse(render(r)) == r.
std::string render_recipe(const Recipe& recipe);

/// Learning rate at an optimizer step. Within each rewind segment the LR
/// decays linearly from the initial value toward the final value at the end
/// of the run; each rewind point resets to the initial value.
double lr_at(const Recipe& recipe, std::size_t step, std::size_t steps_per_epoch);

enum class PhaseTag { Warmup, Prune, Finetune };
std::string to_string(PhaseTag tag);

struct TimelineRecord {
    std::size_t step = 0;
    double epoch = 0.0;
    double lr = 0.0;
    bool prune_flag = false;
    double scheduled_sparsity = 0.0;
    PhaseTag phase = PhaseTag::Finetune;
};

/// Per-step expansion of a recipe's main run.
struct Timeline {
    std::vector<TimelineRecord> records;
    std::vector<std::size_t> prune_steps;
    SparsitySchedule schedule;
};

Timeline compile_timeline(const Recipe& recipe, std::size_t steps_per_epoch);

void write_timeline_csv(std::ostream& out, const Timeline& timeline);

}  // namespace obskit
