#include "obskit/train.hpp"

#include <cmath>

#include "obskit/errors.hpp"

namespace obskit {

SgdState::SgdState(const ToyModel& model) {
    velocity_.reserve(model.depth());
    for (const auto& layer : model.layers()) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            DenseGrads v;
            v.weight.assign(d->weight.size(), 0.0);
            v.bias.assign(d->bias.size(), 0.0);
            velocity_.emplace_back(std::move(v));
        } else {
            const auto& a = std::get<AttentionLayer>(layer);
            AttentionGrads v;
            v.wq.assign(a.wq.size(), 0.0);
            v.wk.assign(a.wk.size(), 0.0);
            v.wv.assign(a.wv.size(), 0.0);
            velocity_.emplace_back(std::move(v));
        }
    }
}

namespace {

void momentum_update(std::vector<double>& param, const std::vector<double>& grad,
                     std::vector<double>& vel, double lr, const OptimizerConfig& cfg,
                     const std::uint8_t* maskbits) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        if (maskbits && maskbits[i] == 0) {
            vel[i] = 0.0;
            continue;
        }
        const double g = grad[i] + cfg.weight_decay * param[i];
        vel[i] = cfg.momentum * vel[i] + g;
        param[i] -= lr * vel[i];
    }
}

}  // namespace

double sgd_step(ToyModel& model, const BackpropResult& grads, double lr, const Mask& mask,
                SgdState& state, const OptimizerConfig& cfg) {
    if (mask.size() != model.prunable_size()) {
        throw DimensionError("sgd_step: mask length != prunable size");
    }
    // masked bits per prunable tensor, indexed by (layer, slot)
    std::vector<std::vector<const std::uint8_t*>> maskptr(model.depth());
    for (auto& v : maskptr) v.assign(3, nullptr);
    for (const auto& t : model.prunable_registry()) {
        maskptr[t.layer][static_cast<std::size_t>(t.slot)] = mask.bits().data() + t.offset;
    }

    auto& layers = model.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
        if (auto* d = std::get_if<DenseLayer>(&layers[li])) {
            const auto& g = std::get<DenseGrads>(grads.grads[li]);
            auto& v = std::get<DenseGrads>(state.velocity_[li]);
            momentum_update(d->weight, g.weight, v.weight, lr, cfg, maskptr[li][0]);
            momentum_update(d->bias, g.bias, v.bias, lr, cfg, nullptr);
        } else {
            auto& a = std::get<AttentionLayer>(layers[li]);
            const auto& g = std::get<AttentionGrads>(grads.grads[li]);
            auto& v = std::get<AttentionGrads>(state.velocity_[li]);
            momentum_update(a.wq, g.wq, v.wq, lr, cfg, maskptr[li][0]);
            momentum_update(a.wk, g.wk, v.wk, lr, cfg, maskptr[li][1]);
            momentum_update(a.wv, g.wv, v.wv, lr, cfg, maskptr[li][2]);
        }
    }
    return grads.loss;
}

double train_steps(ToyModel& model, BatchStream& stream, std::span<const double> lrs,
                   const Mask& mask, SgdState& state, const KDConfig* kd,
                   const OptimizerConfig& cfg, QuantState* quant) {
    double total = 0.0;
    for (std::size_t step = 0; step < lrs.size(); ++step) {
        const auto batch = stream.next();
        BackpropResult grads;
        try {
            if (quant) {
                quant->observe(model);
                const ToyModel shadow = quant->quantized_copy(model);
                grads = backprop(shadow, batch.x, batch.y, kd);
            } else {
                grads = backprop(model, batch.x, batch.y, kd);
            }
        } catch (const NonFiniteError& e) {
            throw DivergenceError("train: " + std::string(e.what()) + " at span step " +
                                  std::to_string(step));
        }
        if (!std::isfinite(grads.loss) || grads.loss > cfg.divergence_threshold) {
            throw DivergenceError("train: loss " + std::to_string(grads.loss) +
                                  " exceeded divergence threshold at span step " +
                                  std::to_string(step));
        }
        sgd_step(model, grads, lrs[step], mask, state, cfg);
        total += grads.loss;
    }
    return lrs.empty() ? 0.0 : total / static_cast<double>(lrs.size());
}

std::size_t gradient_stream(const ToyModel& model, BatchStream& stream, const Mask& mask,
                            const KDConfig* kd, std::size_t count,
                            const std::function<void(std::span<const double>)>& sink) {
    if (count == 0) throw ValidationError("gradient_stream: count must be at least 1");
    const std::size_t wraps_before = stream.wraps();
    for (std::size_t i = 0; i < count; ++i) {
        const auto batch = stream.next();
        auto [loss, grad] = loss_and_grad(model, batch.x, batch.y, kd, mask);
        (void)loss;
        sink(grad);
    }
    return stream.wraps() - wraps_before;
}

ToyModel fake_quant_finetune(ToyModel model, const Mask& mask, const QuantConfig& qc,
                             BatchStream& stream, std::span<const double> lrs,
                             std::size_t steps_per_epoch, const KDConfig* kd,
                             const OptimizerConfig& cfg) {
    QuantState quant(model, qc);
    SgdState opt(model);
    const std::size_t observe_steps =
        std::min(lrs.size(), qc.observer_epochs * steps_per_epoch);
    train_steps(model, stream, lrs.subspan(0, observe_steps), mask, opt, kd, cfg, &quant);
    quant.freeze();
    train_steps(model, stream, lrs.subspan(observe_steps), mask, opt, kd, cfg, &quant);
    ToyModel deployed = quant.quantized_copy(model);
    WeightStore store = deployed.flatten_prunable();
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (!mask.kept(i)) store[i] = 0.0;
    }
    deployed.unflatten_prunable(store);
    return deployed;
}

EvalResult evaluate(const ToyModel& model, const Dataset& data) {
    EvalResult result;
    if (data.x.rows == 0) return result;
    const Mat logits = forward(model, data.x);
    std::size_t correct = 0;
    double loss = 0.0;
    std::vector<double> p(logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* z = logits.row(i);
        double mx = z[0];
        std::size_t arg = 0;
        for (std::size_t j = 1; j < logits.cols; ++j) {
            if (z[j] > mx) {
                mx = z[j];
                arg = j;
            }
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(z[j] - mx);
        const auto y = static_cast<std::size_t>(data.y[i]);
        loss += -(z[y] - mx - std::log(sum));
        correct += (arg == y);
    }
    result.loss = loss / static_cast<double>(logits.rows);
    result.accuracy = static_cast<double>(correct) / static_cast<double>(logits.rows);
    return result;
}

}  // namespace obskit
