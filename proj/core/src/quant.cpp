#include "obskit/quant.hpp"

#include <algorithm>
#include <cmath>

#include "obskit/errors.hpp"

namespace obskit {

namespace {

std::vector<const std::vector<double>*> weight_tensors(const ToyModel& model) {
    std::vector<const std::vector<double>*> out;
    for (const auto& layer : model.layers()) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            out.push_back(&d->weight);
        } else {
            const auto& a = std::get<AttentionLayer>(layer);
            out.push_back(&a.wq);
            out.push_back(&a.wk);
            out.push_back(&a.wv);
        }
    }
    return out;
}

std::vector<std::vector<double>*> weight_tensors(ToyModel& model) {
    std::vector<std::vector<double>*> out;
    for (auto& layer : model.layers()) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            out.push_back(&d->weight);
        } else {
            auto& a = std::get<AttentionLayer>(layer);
            out.push_back(&a.wq);
            out.push_back(&a.wk);
            out.push_back(&a.wv);
        }
    }
    return out;
}

}  // namespace

QuantState::QuantState(const ToyModel& model, QuantConfig cfg) : cfg_(cfg) {
    if (cfg.bits != 8) throw ValidationError("quant: only 8-bit quantization is supported");
    running_max_.assign(weight_tensors(model).size(), 0.0);
    observe(model);
}

void QuantState::observe(const ToyModel& model) {
    if (frozen_) return;
    const auto tensors = weight_tensors(model);
    if (tensors.size() != running_max_.size()) {
        throw DimensionError("quant: observer count does not match model");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        double mx = running_max_[i];
        for (double v : *tensors[i]) mx = std::max(mx, std::abs(v));
        running_max_[i] = mx;
    }
}

double QuantState::scale(std::size_t tensor_index) const {
    const double mx = running_max_.at(tensor_index);
    if (mx == 0.0) return 1.0;
    return mx / 127.0;
}

double quantize_value(double v, double scale) {
    const double level = std::nearbyint(v / scale);
    const double clamped = std::clamp(level, -127.0, 127.0);
    return clamped * scale;
}

ToyModel QuantState::quantized_copy(const ToyModel& model) const {
    ToyModel copy = model;
    const auto tensors = weight_tensors(copy);
    if (tensors.size() != running_max_.size()) {
        throw DimensionError("quant: observer count does not match model");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const double s = scale(i);
        for (double& v : *tensors[i]) v = quantize_value(v, s);
    }
    return copy;
}

}  // namespace obskit
