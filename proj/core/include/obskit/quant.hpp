#pragma once

#include <cstddef>
#include <vector>

#include "obskit/model.hpp"

namespace obskit {

/// Symmetric uniform per-tensor fake quantization of weight matrices.
struct QuantConfig {
    int bits = 8;
    std::size_t observer_epochs = 0;
};

/// Running-max observers, one per weight matrix (biases untouched). Observers
/// keep updating until frozen, after which the scales are fixed.
class QuantState {
public:
    QuantState() = default;
    QuantState(const ToyModel& model, QuantConfig cfg);

    void observe(const ToyModel& model);
    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }
    const QuantConfig& config() const { return cfg_; }

    /// scale = running_max / 127 (8-bit symmetric); 1.0 for an all-zero tensor.
    double scale(std::size_t tensor_index) const;
    std::size_t tensor_count() const { return running_max_.size(); }

    /// Copy of the model with every weight matrix passed through
    /// quantize-dequantize; biases are left as-is.
    ToyModel quantized_copy(const ToyModel& model) const;

private:
    QuantConfig cfg_;
    std::vector<double> running_max_;
    bool frozen_ = false;
};

/// Round-to-nearest-even quantize-dequantize with clamping to [-127, 127]
/// levels; idempotent and maps 0 to exactly 0.
double quantize_value(double v, double scale);

}  // namespace obskit
