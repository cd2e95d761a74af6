#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "obskit/errors.hpp"

namespace obskit {

/// One named slice of the flat prunable-weight vector.
struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const Segment&) const = default;
};

/// Flat vector of prunable weights partitioned into named layer segments.
/// Segments are contiguous, ordered, and cover [0, size()).
class WeightStore {
public:
    WeightStore() = default;
    WeightStore(std::vector<double> values, std::vector<Segment> segments)
        : values_(std::move(values)), segments_(std::move(segments)) {
        std::size_t expect = 0;
        for (const auto& s : segments_) {
            if (s.offset != expect) throw DimensionError("WeightStore: segment gap at " + s.name);
            expect += s.length;
        }
        if (expect != values_.size()) {
            throw DimensionError("WeightStore: segments cover " + std::to_string(expect) +
                                 " of " + std::to_string(values_.size()) + " weights");
        }
    }

    std::size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    const std::vector<Segment>& segments() const { return segments_; }

    /// Segment containing flat index i.
    const Segment& segment_of(std::size_t i) const {
        for (const auto& s : segments_) {
            if (i >= s.offset && i < s.offset + s.length) return s;
        }
        throw DimensionError("WeightStore: index " + std::to_string(i) + " out of range");
    }

private:
    std::vector<double> values_;
    std::vector<Segment> segments_;
};

/// Cumulative 0/1 pruning mask over the flat prunable vector (1 = keep).
/// Once a bit drops to 0 it stays 0 for the rest of the run.
class Mask {
public:
    Mask() = default;
    Mask(std::size_t d, std::vector<Segment> segments)
        : bits_(d, 1), segments_(std::move(segments)) {}

    std::size_t size() const { return bits_.size(); }
    bool kept(std::size_t i) const { return bits_[i] != 0; }
    std::span<const std::uint8_t> bits() const { return bits_; }
    const std::vector<Segment>& segments() const { return segments_; }

    /// Marks coordinate i pruned. Never resurrects.
    void prune(std::size_t i) { bits_[i] = 0; }

    std::size_t pruned_count() const {
        std::size_t n = 0;
        for (auto b : bits_) n += (b == 0);
        return n;
    }

    double sparsity() const {
        return bits_.empty() ? 0.0 : static_cast<double>(pruned_count()) / bits_.size();
    }

    /// True when every coordinate pruned here is also pruned in `later`.
    bool subset_of(const Mask& later) const {
        if (later.size() != size()) return false;
        for (std::size_t i = 0; i < bits_.size(); ++i) {
            if (bits_[i] == 0 && later.bits_[i] != 0) return false;
        }
        return true;
    }

    bool operator==(const Mask& other) const {
        return bits_ == other.bits_ && segments_ == other.segments_;
    }

    void save_file(const std::string& path) const;
    static Mask load_file(const std::string& path);

private:
    std::vector<std::uint8_t> bits_;
    std::vector<Segment> segments_;
};

}  // namespace obskit
