#include "obskit/data.hpp"

#include <algorithm>

#include "obskit/errors.hpp"

namespace obskit {

namespace {

Dataset gaussian_mixture(std::mt19937_64& rng, const Mat& means, std::size_t n_samples,
                         double spread) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n_classes = means.rows;
    const std::size_t n_features = means.cols;
    Dataset out;
    out.x = Mat(n_samples, n_features);
    out.y.resize(n_samples);
    std::uniform_int_distribution<std::size_t> pick(0, n_classes - 1);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::size_t c = pick(rng);
        out.y[i] = static_cast<int>(c);
        double* row = out.x.row(i);
        const double* mean = means.row(c);
        for (std::size_t j = 0; j < n_features; ++j) row[j] = mean[j] + spread * normal(rng);
    }
    return out;
}

Dataset teacher_labeled(std::mt19937_64& rng, const ToyModel& labeler, std::size_t n_samples,
                        std::size_t n_features) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset out;
    out.x = Mat(n_samples, n_features);
    out.y.resize(n_samples);
    for (double& v : out.x.data) v = normal(rng);
    const Mat logits = forward(labeler, out.x);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double* z = logits.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols; ++j) {
            if (z[j] > z[best]) best = j;
        }
        out.y[i] = static_cast<int>(best);
    }
    return out;
}

}  // namespace

SyntheticData make_synthetic(const DatasetSpec& spec) {
    if (spec.n_samples == 0 || spec.n_features == 0 || spec.n_classes == 0) {
        throw ValidationError("data: n_samples, n_features and n_classes are required");
    }
    std::mt19937_64 rng(spec.seed);
    SyntheticData out;
    if (spec.kind == "gaussian_mixture") {
        std::normal_distribution<double> normal(0.0, 1.0);
        Mat means(spec.n_classes, spec.n_features);
        for (double& v : means.data) v = normal(rng);
        out.train = gaussian_mixture(rng, means, spec.n_samples, spec.cluster_spread);
        out.holdout = gaussian_mixture(rng, means, spec.holdout_samples, spec.cluster_spread);
    } else if (spec.kind == "teacher_labels") {
        ModelConfig cfg;
        cfg.input = spec.n_features;
        cfg.hidden = {2 * spec.n_features};
        cfg.classes = spec.n_classes;
        cfg.activation = Activation::Relu;
        const ToyModel labeler = build_model(cfg, rng);
        out.train = teacher_labeled(rng, labeler, spec.n_samples, spec.n_features);
        out.holdout = teacher_labeled(rng, labeler, spec.holdout_samples, spec.n_features);
    } else {
        throw ValidationError("data: unknown kind '" + spec.kind + "'");
    }
    return out;
}

BatchStream::BatchStream(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), rng_(seed) {
    if (batch_size_ == 0) throw ValidationError("batch stream: batch size must be positive");
    if (data.x.rows == 0) throw ValidationError("batch stream: empty dataset");
    order_.resize(data.x.rows);
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    reshuffle();
}

void BatchStream::reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
}

BatchStream::MiniBatch BatchStream::next() {
    const std::size_t take = std::min(batch_size_, order_.size());
    MiniBatch batch;
    batch.x = Mat(take, data_->x.cols);
    batch.y.resize(take);
    for (std::size_t i = 0; i < take; ++i) {
        if (cursor_ >= order_.size()) {
            reshuffle();
            ++wraps_;
        }
        const std::size_t src = order_[cursor_++];
        std::copy(data_->x.row(src), data_->x.row(src) + data_->x.cols, batch.x.row(i));
        batch.y[i] = data_->y[src];
    }
    return batch;
}

}  // namespace obskit
