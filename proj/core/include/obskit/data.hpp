#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "obskit/model.hpp"

namespace obskit {

/// Seeded synthetic task description; embeds in a recipe so runs are
/// reproducible without external files.
struct DatasetSpec {
    std::string kind = "gaussian_mixture";  // or "teacher_labels"
    std::uint64_t seed = 0;
    std::size_t n_samples = 0;
    std::size_t n_features = 0;
    std::size_t n_classes = 0;
    double cluster_spread = 1.0;
    std::size_t holdout_samples = 0;

    bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
    Mat x;
    std::vector<int> y;
};

struct SyntheticData {
    Dataset train;
    Dataset holdout;
};

SyntheticData make_synthetic(const DatasetSpec& spec);

/// Shuffled minibatch cycle over a dataset; reshuffles on wrap-around and
/// counts wraps so callers can flag recycling in the run log.
class BatchStream {
public:
    BatchStream(const Dataset& data, std::size_t batch_size, std::uint64_t seed);

    struct MiniBatch {
        Mat x;
        std::vector<int> y;
    };

    MiniBatch next();
    std::size_t wraps() const { return wraps_; }

private:
    const Dataset* data_;
    std::size_t batch_size_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t wraps_ = 0;

    void reshuffle();
};

}  // namespace obskit
