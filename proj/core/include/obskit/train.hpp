#pragma once

#include <functional>
#include <span>

#include "obskit/data.hpp"
#include "obskit/model.hpp"
#include "obskit/quant.hpp"
#include "obskit/weight_store.hpp"

namespace obskit {

struct OptimizerConfig {
    double momentum = 0.9;
    double weight_decay = 0.0;
    double divergence_threshold = 1e6;
};

/// SGD-with-momentum velocity buffers shaped like the model's tensors.
class SgdState {
public:
    SgdState() = default;
    explicit SgdState(const ToyModel& model);
    std::vector<LayerGrads>& velocity() { return velocity_; }

private:
    std::vector<LayerGrads> velocity_;
    friend double sgd_step(ToyModel&, const BackpropResult&, double, const Mask&, SgdState&,
                           const OptimizerConfig&);
};

/// One momentum step over every tensor; gradients, velocities and weights of
/// masked prunable coordinates are pinned to zero so pruned weights never move.
double sgd_step(ToyModel& model, const BackpropResult& grads, double lr, const Mask& mask,
                SgdState& state, const OptimizerConfig& cfg);

/// Runs lrs.size() optimizer steps pulling minibatches from the stream.
/// With a QuantState the forward/backward pass sees quantize-dequantized
/// weights while updates land on the latent weights (straight-through).
/// Returns the mean training loss of the span; throws DivergenceError when
/// the loss passes the divergence threshold.
double train_steps(ToyModel& model, BatchStream& stream, std::span<const double> lrs,
                   const Mask& mask, SgdState& state, const KDConfig* kd,
                   const OptimizerConfig& cfg, QuantState* quant = nullptr);

/// Emits `count` per-minibatch gradient samples computed at the current
/// masked weights, one sink call per sample. Returns how many times the data
/// was recycled (reshuffled) while collecting.
std::size_t gradient_stream(const ToyModel& model, BatchStream& stream, const Mask& mask,
                            const KDConfig* kd, std::size_t count,
                            const std::function<void(std::span<const double>)>& sink);

/// Quantization-aware finetuning: trains lrs.size() steps with fake-quantized
/// forward passes, keeps running-max observers active for the first
/// observer_epochs * steps_per_epoch steps and frozen afterwards, and returns
/// the deployed model (weights on the quantization grid, mask re-applied).
ToyModel fake_quant_finetune(ToyModel model, const Mask& mask, const QuantConfig& qc,
                             BatchStream& stream, std::span<const double> lrs,
                             std::size_t steps_per_epoch, const KDConfig* kd,
                             const OptimizerConfig& cfg);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Mean cross-entropy and top-1 accuracy over a dataset.
EvalResult evaluate(const ToyModel& model, const Dataset& data);

}  // namespace obskit
