#include "obskit/recipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "obskit/errors.hpp"

namespace obskit {

using json = nlohmann::ordered_json;

std::string to_string(PruneMethod m) {
    return m == PruneMethod::GmpUniform ? "gmp_uniform" : "oberts_global";
}

std::string to_string(LrSchedule s) {
    return s == LrSchedule::LinearDecay ? "linear_decay" : "linear_decay_with_rewinds";
}

std::string to_string(PhaseTag tag) {
    switch (tag) {
        case PhaseTag::Warmup: return "warmup";
        case PhaseTag::Prune: return "prune";
        case PhaseTag::Finetune: return "finetune";
    }
    return "finetune";
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ValidationError(path + ": " + what);
}

void check_keys(const json& j, const std::string& path, std::set<std::string> allowed) {
    if (!j.is_object()) fail(path, "expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) fail(path, "unknown key '" + key + "'");
    }
}

const json& require(const json& j, const std::string& path, const std::string& key) {
    if (!j.contains(key)) fail(path, "missing required field '" + key + "'");
    return j.at(key);
}

double require_number(const json& j, const std::string& path, const std::string& key) {
    const json& v = require(j, path, key);
    if (!v.is_number()) fail(path + "." + key, "expected a number");
    return v.get<double>();
}

std::size_t require_count(const json& j, const std::string& path, const std::string& key) {
    const json& v = require(j, path, key);
    if (!v.is_number_unsigned()) fail(path + "." + key, "expected a nonnegative integer");
    return v.get<std::size_t>();
}

std::string require_string(const json& j, const std::string& path, const std::string& key) {
    const json& v = require(j, path, key);
    if (!v.is_string()) fail(path + "." + key, "expected a string");
    return v.get<std::string>();
}

LrSpec parse_lr(const json& j, const std::string& path, double epochs) {
    check_keys(j, path, {"initial", "final", "schedule", "rewinds"});
    LrSpec lr;
    lr.initial = require_number(j, path, "initial");
    lr.final_value = require_number(j, path, "final");
    if (!(lr.initial > 0.0) || !(lr.final_value > 0.0)) {
        fail(path, "learning rates must be positive");
    }
    const std::string sched = require_string(j, path, "schedule");
    if (sched == "linear_decay") {
        lr.schedule = LrSchedule::LinearDecay;
        if (j.contains("rewinds")) fail(path + ".rewinds", "not allowed with linear_decay");
    } else if (sched == "linear_decay_with_rewinds") {
        lr.schedule = LrSchedule::LinearDecayWithRewinds;
        const json& rw = require(j, path, "rewinds");
        check_keys(rw, path + ".rewinds", {"epochs", "start_epoch", "period_epochs"});
        if (rw.contains("epochs")) {
            if (rw.contains("start_epoch") || rw.contains("period_epochs")) {
                fail(path + ".rewinds", "give either explicit epochs or a periodic pattern");
            }
            if (!rw.at("epochs").is_array()) fail(path + ".rewinds.epochs", "expected an array");
            for (const auto& e : rw.at("epochs")) {
                if (!e.is_number()) fail(path + ".rewinds.epochs", "expected numbers");
                lr.rewinds.epochs.push_back(e.get<double>());
            }
            std::sort(lr.rewinds.epochs.begin(), lr.rewinds.epochs.end());
            for (double e : lr.rewinds.epochs) {
                if (e <= 0.0 || e >= epochs) {
                    fail(path + ".rewinds.epochs", "rewind points must lie inside (0, epochs)");
                }
            }
        } else {
            lr.rewinds.periodic = true;
            lr.rewinds.start_epoch = require_number(rw, path + ".rewinds", "start_epoch");
            lr.rewinds.period_epochs = require_number(rw, path + ".rewinds", "period_epochs");
            if (lr.rewinds.period_epochs <= 0.0) {
                fail(path + ".rewinds.period_epochs", "must be positive");
            }
            if (lr.rewinds.start_epoch <= 0.0 || lr.rewinds.start_epoch >= epochs) {
                fail(path + ".rewinds.start_epoch", "must lie inside (0, epochs)");
            }
        }
    } else {
        fail(path + ".schedule", "expected linear_decay or linear_decay_with_rewinds");
    }
    return lr;
}

PruneSpec parse_prune(const json& j, const std::string& path, double epochs) {
    check_keys(j, path,
               {"method", "group_size", "start_epoch", "end_epoch", "frequency_per_epoch",
                "every_epochs", "initial_sparsity", "target_sparsity", "compensate"});
    PruneSpec p;
    const std::string method = require_string(j, path, "method");
    if (method == "gmp_uniform") {
        p.method = PruneMethod::GmpUniform;
    } else if (method == "oberts_global") {
        p.method = PruneMethod::ObertsGlobal;
    } else {
        fail(path + ".method", "expected gmp_uniform or oberts_global");
    }
    p.group_size = require_count(j, path, "group_size");
    if (p.group_size != 1 && p.group_size != 4) fail(path + ".group_size", "expected 1 or 4");
    p.start_epoch = require_number(j, path, "start_epoch");
    p.end_epoch = require_number(j, path, "end_epoch");
    if (!(p.start_epoch >= 0.0) || !(p.start_epoch < p.end_epoch) || p.end_epoch > epochs) {
        fail(path, "need 0 <= start_epoch < end_epoch <= epochs");
    }
    const bool has_freq = j.contains("frequency_per_epoch");
    const bool has_every = j.contains("every_epochs");
    if (has_freq == has_every) {
        fail(path, "give exactly one of frequency_per_epoch or every_epochs");
    }
    if (has_freq) {
        p.frequency_per_epoch = require_number(j, path, "frequency_per_epoch");
        if (p.frequency_per_epoch <= 0.0) fail(path + ".frequency_per_epoch", "must be positive");
    } else {
        p.every_epochs = require_number(j, path, "every_epochs");
        if (p.every_epochs <= 0.0) fail(path + ".every_epochs", "must be positive");
    }
    p.initial_sparsity = require_number(j, path, "initial_sparsity");
    p.target_sparsity = require_number(j, path, "target_sparsity");
    if (p.initial_sparsity < 0.0 || p.target_sparsity > 1.0 ||
        p.initial_sparsity > p.target_sparsity) {
        fail(path, "need 0 <= initial_sparsity <= target_sparsity <= 1");
    }
    if (j.contains("compensate")) {
        if (!j.at("compensate").is_boolean()) fail(path + ".compensate", "expected a boolean");
        p.compensate = j.at("compensate").get<bool>();
    }
    return p;
}

ModelConfig parse_model(const json& j, const std::string& path) {
    check_keys(j, path,
               {"input", "hidden", "classes", "activation", "attention_tokens", "init_scale"});
    ModelConfig m;
    m.input = require_count(j, path, "input");
    m.classes = require_count(j, path, "classes");
    const json& hidden = require(j, path, "hidden");
    if (!hidden.is_array() || hidden.empty()) fail(path + ".hidden", "expected a nonempty array");
    for (const auto& h : hidden) {
        if (!h.is_number_unsigned() || h.get<std::size_t>() == 0) {
            fail(path + ".hidden", "expected positive integers");
        }
        m.hidden.push_back(h.get<std::size_t>());
    }
    const std::string act = require_string(j, path, "activation");
    if (act == "none") {
        m.activation = Activation::None;
    } else if (act == "relu") {
        m.activation = Activation::Relu;
    } else if (act == "gelu") {
        m.activation = Activation::Gelu;
    } else {
        fail(path + ".activation", "expected none, relu or gelu");
    }
    if (j.contains("attention_tokens")) {
        m.attention_tokens = require_count(j, path, "attention_tokens");
    }
    if (j.contains("init_scale")) {
        m.init_scale = require_number(j, path, "init_scale");
        if (!(m.init_scale > 0.0)) fail(path + ".init_scale", "must be positive");
    }
    return m;
}

DatasetSpec parse_data(const json& j, const std::string& path) {
    check_keys(j, path,
               {"kind", "seed", "n_samples", "n_features", "n_classes", "cluster_spread",
                "holdout_samples"});
    DatasetSpec d;
    d.kind = require_string(j, path, "kind");
    if (d.kind != "gaussian_mixture" && d.kind != "teacher_labels") {
        fail(path + ".kind", "expected gaussian_mixture or teacher_labels");
    }
    d.seed = require_count(j, path, "seed");
    d.n_samples = require_count(j, path, "n_samples");
    d.n_features = require_count(j, path, "n_features");
    d.n_classes = require_count(j, path, "n_classes");
    d.cluster_spread = require_number(j, path, "cluster_spread");
    d.holdout_samples = require_count(j, path, "holdout_samples");
    if (d.n_samples == 0 || d.holdout_samples == 0) {
        fail(path, "n_samples and holdout_samples must be positive");
    }
    return d;
}

}  // namespace

Recipe parse_recipe(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("recipe: invalid JSON: ") + e.what());
    }
    check_keys(j, "recipe",
               {"name", "epochs", "batch_size", "steps_per_epoch", "lr", "kd", "prune", "fisher",
                "model", "data", "optimizer", "phases", "layer_drop", "quantize", "teacher"});

    Recipe r;
    r.name = require_string(j, "recipe", "name");
    r.epochs = require_count(j, "recipe", "epochs");
    r.batch_size = require_count(j, "recipe", "batch_size");
    r.steps_per_epoch = require_count(j, "recipe", "steps_per_epoch");
    if (r.epochs == 0 || r.batch_size == 0 || r.steps_per_epoch == 0) {
        fail("recipe", "epochs, batch_size and steps_per_epoch must be positive");
    }
    r.lr = parse_lr(require(j, "recipe", "lr"), "recipe.lr", static_cast<double>(r.epochs));

    const json& kd = require(j, "recipe", "kd");
    check_keys(kd, "recipe.kd", {"hardness", "temperature"});
    r.kd.hardness = require_number(kd, "recipe.kd", "hardness");
    r.kd.temperature = require_number(kd, "recipe.kd", "temperature");
    if (r.kd.hardness < 0.0 || r.kd.hardness > 1.0) {
        fail("recipe.kd.hardness", "must lie in [0, 1]");
    }
    if (!(r.kd.temperature > 0.0)) fail("recipe.kd.temperature", "must be positive");

    if (j.contains("prune")) {
        r.prune = parse_prune(j.at("prune"), "recipe.prune", static_cast<double>(r.epochs));
    }
    if (j.contains("fisher")) {
        const json& f = j.at("fisher");
        check_keys(f, "recipe.fisher", {"block_width", "gradient_count", "dampening"});
        r.fisher.block_width = require_count(f, "recipe.fisher", "block_width");
        r.fisher.gradient_count = require_count(f, "recipe.fisher", "gradient_count");
        r.fisher.dampening = require_number(f, "recipe.fisher", "dampening");
        if (r.fisher.block_width == 0 || r.fisher.gradient_count == 0) {
            fail("recipe.fisher", "block_width and gradient_count must be positive");
        }
        if (!(r.fisher.dampening > 0.0)) fail("recipe.fisher.dampening", "must be positive");
    }
    r.model = parse_model(require(j, "recipe", "model"), "recipe.model");
    r.data = parse_data(require(j, "recipe", "data"), "recipe.data");
    if (r.model.input != r.data.n_features) {
        fail("recipe.model.input", "must equal recipe.data.n_features");
    }
    if (r.model.classes != r.data.n_classes) {
        fail("recipe.model.classes", "must equal recipe.data.n_classes");
    }

    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        check_keys(o, "recipe.optimizer", {"momentum", "weight_decay"});
        if (o.contains("momentum")) {
            r.optimizer.momentum = require_number(o, "recipe.optimizer", "momentum");
        }
        if (o.contains("weight_decay")) {
            r.optimizer.weight_decay = require_number(o, "recipe.optimizer", "weight_decay");
        }
        if (r.optimizer.momentum < 0.0 || r.optimizer.momentum >= 1.0) {
            fail("recipe.optimizer.momentum", "must lie in [0, 1)");
        }
    }

    const json& phases = require(j, "recipe", "phases");
    if (!phases.is_array() || phases.empty()) fail("recipe.phases", "expected a nonempty array");
    auto rank = [](const std::string& p) -> int {
        if (p == "layer_drop") return 0;
        if (p == "prune") return 1;
        if (p == "finetune") return 2;
        if (p == "quantize") return 3;
        return -1;
    };
    int last_rank = -1;
    for (const auto& p : phases) {
        if (!p.is_string()) fail("recipe.phases", "expected strings");
        const std::string name = p.get<std::string>();
        const int rk = rank(name);
        if (rk < 0) fail("recipe.phases", "unknown phase '" + name + "'");
        if (rk <= last_rank) {
            fail("recipe.phases", "phases must be ordered layer_drop, prune, finetune, quantize");
        }
        last_rank = rk;
        r.phases.push_back(name);
    }
    auto has_phase = [&](const std::string& p) {
        return std::find(r.phases.begin(), r.phases.end(), p) != r.phases.end();
    };
    if (has_phase("prune") != r.prune.has_value()) {
        fail("recipe.phases", "prune phase and prune section must appear together");
    }

    if (j.contains("layer_drop")) {
        const json& ld = j.at("layer_drop");
        check_keys(ld, "recipe.layer_drop", {"keep", "retrain_epochs", "lr"});
        LayerDropSpec spec;
        spec.keep = require_count(ld, "recipe.layer_drop", "keep");
        spec.retrain_epochs = require_number(ld, "recipe.layer_drop", "retrain_epochs");
        spec.lr = require_number(ld, "recipe.layer_drop", "lr");
        if (spec.keep == 0 || spec.keep > r.model.hidden.size()) {
            fail("recipe.layer_drop.keep", "must lie in [1, hidden layer count]");
        }
        if (!(spec.lr > 0.0) || spec.retrain_epochs < 0.0) {
            fail("recipe.layer_drop", "lr must be positive, retrain_epochs nonnegative");
        }
        r.layer_drop = spec;
    }
    if (has_phase("layer_drop") != r.layer_drop.has_value()) {
        fail("recipe.phases", "layer_drop phase and layer_drop section must appear together");
    }

    if (j.contains("quantize")) {
        const json& q = j.at("quantize");
        check_keys(q, "recipe.quantize", {"bits", "epochs", "observer_epochs", "lr"});
        QuantizeSpec spec;
        spec.bits = static_cast<int>(require_count(q, "recipe.quantize", "bits"));
        spec.epochs = require_count(q, "recipe.quantize", "epochs");
        spec.observer_epochs = require_count(q, "recipe.quantize", "observer_epochs");
        spec.lr = require_number(q, "recipe.quantize", "lr");
        if (spec.bits != 8) fail("recipe.quantize.bits", "only 8 is supported");
        if (spec.observer_epochs > spec.epochs) {
            fail("recipe.quantize.observer_epochs", "must not exceed quantize epochs");
        }
        if (!(spec.lr > 0.0)) fail("recipe.quantize.lr", "must be positive");
        r.quantize = spec;
    }
    if (has_phase("quantize") != r.quantize.has_value()) {
        fail("recipe.phases", "quantize phase and quantize section must appear together");
    }

    if (j.contains("teacher")) {
        const json& t = j.at("teacher");
        check_keys(t, "recipe.teacher", {"epochs", "lr"});
        TeacherSpec spec;
        spec.epochs = require_number(t, "recipe.teacher", "epochs");
        spec.lr = require_number(t, "recipe.teacher", "lr");
        if (!(spec.epochs > 0.0) || !(spec.lr > 0.0)) {
            fail("recipe.teacher", "epochs and lr must be positive");
        }
        r.teacher = spec;
    }
    if (r.kd.hardness > 0.0 && !r.teacher) {
        fail("recipe.teacher", "required when kd.hardness > 0");
    }
    if (r.layer_drop && !r.teacher) {
        fail("recipe.teacher", "required when layer dropping (retraining distills from it)");
    }
    if (r.prune && r.prune->method == PruneMethod::ObertsGlobal &&
        r.fisher.block_width % r.prune->group_size != 0) {
        fail("recipe.fisher.block_width", "must be a multiple of prune.group_size");
    }
    return r;
}

Recipe load_recipe_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("recipe: cannot open " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_recipe(buf.str());
}

std::string render_recipe(const Recipe& r) {
    json j;
    j["name"] = r.name;
    j["epochs"] = r.epochs;
    j["batch_size"] = r.batch_size;
    j["steps_per_epoch"] = r.steps_per_epoch;
    json lr;
    lr["initial"] = r.lr.initial;
    lr["final"] = r.lr.final_value;
    lr["schedule"] = to_string(r.lr.schedule);
    if (r.lr.schedule == LrSchedule::LinearDecayWithRewinds) {
        json rw;
        if (r.lr.rewinds.periodic) {
            rw["start_epoch"] = r.lr.rewinds.start_epoch;
            rw["period_epochs"] = r.lr.rewinds.period_epochs;
        } else {
            rw["epochs"] = r.lr.rewinds.epochs;
        }
        lr["rewinds"] = rw;
    }
    j["lr"] = lr;
    j["kd"] = {{"hardness", r.kd.hardness}, {"temperature", r.kd.temperature}};
    if (r.prune) {
        json p;
        p["method"] = to_string(r.prune->method);
        p["group_size"] = r.prune->group_size;
        p["start_epoch"] = r.prune->start_epoch;
        p["end_epoch"] = r.prune->end_epoch;
        if (r.prune->frequency_per_epoch > 0.0) {
            p["frequency_per_epoch"] = r.prune->frequency_per_epoch;
        } else {
            p["every_epochs"] = r.prune->every_epochs;
        }
        p["initial_sparsity"] = r.prune->initial_sparsity;
        p["target_sparsity"] = r.prune->target_sparsity;
        p["compensate"] = r.prune->compensate;
        j["prune"] = p;
    }
    j["fisher"] = {{"block_width", r.fisher.block_width},
                   {"gradient_count", r.fisher.gradient_count},
                   {"dampening", r.fisher.dampening}};
    json m;
    m["input"] = r.model.input;
    m["hidden"] = r.model.hidden;
    m["classes"] = r.model.classes;
    m["activation"] = r.model.activation == Activation::None
                          ? "none"
                          : (r.model.activation == Activation::Relu ? "relu" : "gelu");
    if (r.model.attention_tokens) m["attention_tokens"] = *r.model.attention_tokens;
    m["init_scale"] = r.model.init_scale;
    j["model"] = m;
    j["data"] = {{"kind", r.data.kind},
                 {"seed", r.data.seed},
                 {"n_samples", r.data.n_samples},
                 {"n_features", r.data.n_features},
                 {"n_classes", r.data.n_classes},
                 {"cluster_spread", r.data.cluster_spread},
                 {"holdout_samples", r.data.holdout_samples}};
    j["optimizer"] = {{"momentum", r.optimizer.momentum},
                      {"weight_decay", r.optimizer.weight_decay}};
    j["phases"] = r.phases;
    if (r.layer_drop) {
        j["layer_drop"] = {{"keep", r.layer_drop->keep},
                           {"retrain_epochs", r.layer_drop->retrain_epochs},
                           {"lr", r.layer_drop->lr}};
    }
    if (r.quantize) {
        j["quantize"] = {{"bits", r.quantize->bits},
                         {"epochs", r.quantize->epochs},
                         {"observer_epochs", r.quantize->observer_epochs},
                         {"lr", r.quantize->lr}};
    }
    if (r.teacher) {
        j["teacher"] = {{"epochs", r.teacher->epochs}, {"lr", r.teacher->lr}};
    }
    return j.dump(2) + "\n";
}

namespace {

std::vector<std::size_t> rewind_steps(const Recipe& r, std::size_t spe) {
    std::vector<std::size_t> points;
    if (r.lr.schedule != LrSchedule::LinearDecayWithRewinds) return points;
    const double total_epochs = static_cast<double>(r.epochs);
    std::vector<double> epochs;
    if (r.lr.rewinds.periodic) {
        for (double e = r.lr.rewinds.start_epoch; e < total_epochs - 1e-9;
             e += r.lr.rewinds.period_epochs) {
            epochs.push_back(e);
        }
    } else {
        epochs = r.lr.rewinds.epochs;
    }
    for (double e : epochs) {
        const auto s = static_cast<std::size_t>(std::llround(e * static_cast<double>(spe)));
        if (s > 0 && s < r.epochs * spe) points.push_back(s);
    }
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    return points;
}

}  // namespace

double lr_at(const Recipe& recipe, std::size_t step, std::size_t steps_per_epoch) {
    const std::size_t total = recipe.epochs * steps_per_epoch;
    if (total == 0) throw ValidationError("lr_at: empty run");
    const std::size_t last = total - 1;
    if (step >= last) return recipe.lr.final_value;

    std::size_t segment_start = 0;
    for (std::size_t p : rewind_steps(recipe, steps_per_epoch)) {
        if (p <= step) segment_start = p;
    }
    if (segment_start >= last) return recipe.lr.final_value;
    const double frac = static_cast<double>(step - segment_start) /
                        static_cast<double>(last - segment_start);
    return recipe.lr.initial + (recipe.lr.final_value - recipe.lr.initial) * frac;
}

Timeline compile_timeline(const Recipe& recipe, std::size_t steps_per_epoch) {
    if (steps_per_epoch == 0) throw ValidationError("timeline: steps_per_epoch must be positive");
    const std::size_t spe = steps_per_epoch;
    const std::size_t total = recipe.epochs * spe;
    const std::size_t last = total - 1;

    Timeline tl;
    std::size_t start_step = 0, end_step = 0;
    if (recipe.prune) {
        const auto& p = *recipe.prune;
        double period;
        if (p.frequency_per_epoch > 0.0) {
            if (p.frequency_per_epoch > static_cast<double>(spe)) {
                throw ValidationError(
                    "timeline: prune frequency_per_epoch exceeds steps_per_epoch");
            }
            period = 1.0 / p.frequency_per_epoch;
        } else {
            period = p.every_epochs;
        }
        for (double e = p.start_epoch; e <= p.end_epoch + 1e-9; e += period) {
            const auto s = std::min<std::size_t>(
                static_cast<std::size_t>(std::llround(e * static_cast<double>(spe))), last);
            if (tl.prune_steps.empty() || tl.prune_steps.back() != s) tl.prune_steps.push_back(s);
        }
        start_step = std::min<std::size_t>(
            static_cast<std::size_t>(std::llround(p.start_epoch * static_cast<double>(spe))),
            last);
        end_step = std::min<std::size_t>(
            static_cast<std::size_t>(std::llround(p.end_epoch * static_cast<double>(spe))), last);
        tl.schedule = SparsitySchedule{p.initial_sparsity, p.target_sparsity, start_step,
                                       end_step};
    }

    tl.records.resize(total);
    std::size_t next_prune = 0;
    for (std::size_t s = 0; s < total; ++s) {
        TimelineRecord rec;
        rec.step = s;
        rec.epoch = static_cast<double>(s) / static_cast<double>(spe);
        rec.lr = lr_at(recipe, s, spe);
        if (recipe.prune) {
            rec.scheduled_sparsity = sparsity_at(tl.schedule, s);
            if (next_prune < tl.prune_steps.size() && tl.prune_steps[next_prune] == s) {
                rec.prune_flag = true;
                ++next_prune;
            }
            if (s < start_step) {
                rec.phase = PhaseTag::Warmup;
            } else if (s <= end_step) {
                rec.phase = PhaseTag::Prune;
            } else {
                rec.phase = PhaseTag::Finetune;
            }
        } else {
            rec.phase = PhaseTag::Finetune;
        }
        tl.records[s] = rec;
    }
    return tl;
}

void write_timeline_csv(std::ostream& out, const Timeline& timeline) {
    out << "step,epoch,lr,prune_flag,scheduled_sparsity,phase\n";
    out.precision(17);
    for (const auto& r : timeline.records) {
        out << r.step << ',' << r.epoch << ',' << r.lr << ',' << (r.prune_flag ? 1 : 0) << ','
            << r.scheduled_sparsity << ',' << to_string(r.phase) << '\n';
    }
}

}  // namespace obskit
