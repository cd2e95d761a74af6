#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "obskit/weight_store.hpp"

namespace obskit {

/// Minimal row-major dense matrix.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
};

enum class Activation { None, Relu, Gelu };

/// Affine layer y = x W^T + b with an optional elementwise nonlinearity.
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation act = Activation::None;
    std::vector<double> weight;  // out x in, row-major
    std::vector<double> bias;    // out
};

/// Single-head self-attention over the input viewed as (tokens x dim).
/// Output width equals input width (tokens * dim).
struct AttentionLayer {
    std::size_t tokens = 0;
    std::size_t dim = 0;
    std::vector<double> wq, wk, wv;  // dim x dim each, row-major, applied as X W
};

using Layer = std::variant<DenseLayer, AttentionLayer>;

/// One prunable weight tensor and its slice of the flat prunable vector.
struct PrunableTensor {
    std::size_t layer = 0;
    int slot = 0;  // dense: 0 = weight; attention: 0/1/2 = wq/wk/wv
    std::size_t offset = 0;
    std::size_t length = 0;
    std::string name;
};

/// Desk-scale differentiable model: a stack of dense / attention layers ending
/// in a dense logits layer. Prunable weights are the weight matrices of every
/// layer except the last; biases and the output layer stay dense.
class ToyModel {
public:
    ToyModel() = default;
    explicit ToyModel(std::vector<Layer> layers);

    std::size_t depth() const { return layers_.size(); }
    std::size_t input_width() const;
    std::size_t output_width() const;
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

    const std::vector<PrunableTensor>& prunable_registry() const { return registry_; }
    std::size_t prunable_size() const { return prunable_size_; }

    /// Flat copy of the prunable weights; flatten then unflatten is exact.
    WeightStore flatten_prunable() const;
    void unflatten_prunable(const WeightStore& w);
    std::vector<Segment> prunable_segments() const;

    /// Binary checkpoint: layer registry header followed by row-major weight
    /// tensors (dims as u64, values as f32, little-endian).
    void save_file(const std::string& path) const;
    static ToyModel load_file(const std::string& path);

private:
    std::vector<Layer> layers_;
    std::vector<PrunableTensor> registry_;
    std::size_t prunable_size_ = 0;

    void rebuild_registry();
};

struct ModelConfig {
    std::size_t input = 0;
    std::vector<std::size_t> hidden;
    std::size_t classes = 0;
    Activation activation = Activation::Relu;
    /// When set, a self-attention layer with this many tokens is inserted
    /// after the first hidden layer (hidden width must divide evenly).
    std::optional<std::size_t> attention_tokens;
    double init_scale = 1.0;

    bool operator==(const ModelConfig&) const = default;
};

ToyModel build_model(const ModelConfig& cfg, std::mt19937_64& rng);

/// Keeps the first `keep` hidden layers plus the output layer. Requires the
/// surviving widths to chain (uniform hidden widths always do).
ToyModel drop_layers(const ToyModel& model, std::size_t keep);

/// Knowledge-distillation mixing: (1-h) * CE + h * T^2 * KL(teacher || student)
/// with both distributions softened by temperature T.
struct KDConfig {
    double hardness = 0.0;
    double temperature = 1.0;
    const ToyModel* teacher = nullptr;
};

Mat forward(const ToyModel& model, const Mat& batch);

struct DenseGrads {
    std::vector<double> weight, bias;
};
struct AttentionGrads {
    std::vector<double> wq, wk, wv;
};
using LayerGrads = std::variant<DenseGrads, AttentionGrads>;

/// Loss and full per-tensor gradients (biases and output layer included).
struct BackpropResult {
    double loss = 0.0;
    std::vector<LayerGrads> grads;
};

BackpropResult backprop(const ToyModel& model, const Mat& batch, const std::vector<int>& labels,
                        const KDConfig* kd);

/// Mean cross-entropy of `model` on (batch, labels) without gradients.
double cross_entropy(const ToyModel& model, const Mat& batch, const std::vector<int>& labels);

/// Loss plus the flat prunable gradient with masked coordinates zeroed; this
/// is the gradient sample format the Fisher estimator consumes.
std::pair<double, std::vector<double>> loss_and_grad(const ToyModel& model, const Mat& batch,
                                                     const std::vector<int>& labels,
                                                     const KDConfig* kd, const Mask& mask);

}  // namespace obskit
