#include "obskit/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "obskit/errors.hpp"
#include "obskit/io.hpp"
#include "obskit/linalg.hpp"

namespace obskit {

FisherInverseEstimator::FisherInverseEstimator(std::size_t d, std::size_t block_width,
                                               double dampening, std::size_t gradient_budget)
    : d_(d),
      block_width_(block_width),
      dampening_(dampening),
      budget_(gradient_budget) {
    if (d == 0 || block_width == 0) {
        throw DimensionError("estimator: d and B must be at least 1");
    }
    if (!(dampening > 0.0) || !std::isfinite(dampening)) {
        throw DampeningError("estimator: dampening must be a positive finite real");
    }
    if (gradient_budget == 0) {
        throw DimensionError("estimator: gradient budget m must be at least 1");
    }
    n_blocks_ = static_cast<std::size_t>(block_count_for(d, block_width));
    blocks_.assign(n_blocks_ * block_width_ * block_width_, 0.0);
    fill_identity();
}

std::uint64_t FisherInverseEstimator::block_count_for(std::uint64_t d, std::uint64_t block_width) {
    if (d == 0 || block_width == 0) {
        throw DimensionError("estimator: d and B must be at least 1");
    }
    return (d + block_width - 1) / block_width;
}

std::uint64_t FisherInverseEstimator::storage_bytes_for(std::uint64_t d, std::uint64_t block_width,
                                                        std::uint64_t bytes_per_entry) {
    return block_count_for(d, block_width) * block_width * block_width * bytes_per_entry;
}

void FisherInverseEstimator::fill_identity() {
    const double inv = 1.0 / dampening_;
    std::fill(blocks_.begin(), blocks_.end(), 0.0);
    for (std::size_t b = 0; b < n_blocks_; ++b) {
        double* blk = blocks_.data() + b * block_width_ * block_width_;
        for (std::size_t i = 0; i < block_width_; ++i) blk[i * block_width_ + i] = inv;
    }
    consumed_ = 0;
}

void FisherInverseEstimator::reset() { fill_identity(); }

void FisherInverseEstimator::update(std::span<const double> gradient) {
    if (gradient.size() != d_) {
        throw DimensionError("update: gradient length " + std::to_string(gradient.size()) +
                             " != d " + std::to_string(d_));
    }
    if (consumed_ >= budget_) {
        throw CapacityError("update: estimator already consumed its budget of " +
                            std::to_string(budget_) + " gradients");
    }
    if (!all_finite(gradient)) {
        throw NonFiniteError("update: gradient contains NaN or infinity");
    }

    const std::size_t B = block_width_;
    const double m = static_cast<double>(budget_);
    parallel_for(n_blocks_, threads_, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> u(B);
        std::vector<double> g(B);
        for (std::size_t b = lo; b < hi; ++b) {
            const std::size_t base = b * B;
            const std::size_t valid = std::min(B, d_ - base);
            bool zero = true;
            for (std::size_t i = 0; i < valid; ++i) {
                g[i] = gradient[base + i];
                zero = zero && g[i] == 0.0;
            }
            if (zero) continue;
            std::fill(g.begin() + valid, g.end(), 0.0);

            double* blk = blocks_.data() + b * B * B;
            double dot = 0.0;
            for (std::size_t i = 0; i < B; ++i) {
                double s = 0.0;
                const double* row = blk + i * B;
                for (std::size_t j = 0; j < B; ++j) s += row[j] * g[j];
                u[i] = s;
                dot += g[i] * s;
            }
            const double scale = 1.0 / (m + dot);
            // downdate and re-symmetrize in one pass over i <= j
            for (std::size_t i = 0; i < B; ++i) {
                for (std::size_t j = i; j < B; ++j) {
                    const double sym = 0.5 * (blk[i * B + j] + blk[j * B + i]);
                    const double value = sym - u[i] * u[j] * scale;
                    blk[i * B + j] = value;
                    blk[j * B + i] = value;
                }
            }
        }
    });
    ++consumed_;
}

std::vector<double> FisherInverseEstimator::inverse_diagonal() const {
    std::vector<double> out(d_);
    const std::size_t B = block_width_;
    for (std::size_t j = 0; j < d_; ++j) {
        const std::size_t b = j / B;
        const std::size_t r = j % B;
        out[j] = blocks_[b * B * B + r * B + r];
    }
    return out;
}

std::vector<double> FisherInverseEstimator::group_inverse_submatrix(std::size_t offset,
                                                                    std::size_t group_size) const {
    if (group_size == 0 || offset + group_size > d_) {
        throw DimensionError("group submatrix: range [" + std::to_string(offset) + ", " +
                             std::to_string(offset + group_size) + ") outside [0, " +
                             std::to_string(d_) + ")");
    }
    const std::size_t B = block_width_;
    const std::size_t b = offset / B;
    if ((offset + group_size - 1) / B != b) {
        throw AlignmentError("group submatrix: group at offset " + std::to_string(offset) +
                             " straddles Fisher blocks of width " + std::to_string(B));
    }
    const std::size_t local = offset - b * B;
    const double* blk = blocks_.data() + b * B * B;
    std::vector<double> sub(group_size * group_size);
    for (std::size_t i = 0; i < group_size; ++i) {
        for (std::size_t j = 0; j < group_size; ++j) {
            sub[i * group_size + j] = blk[(local + i) * B + (local + j)];
        }
    }
    return sub;
}

std::vector<double> FisherInverseEstimator::ihvp(std::span<const double> v) const {
    if (v.size() != d_) {
        throw DimensionError("ihvp: vector length " + std::to_string(v.size()) + " != d " +
                             std::to_string(d_));
    }
    const std::size_t B = block_width_;
    std::vector<double> out(d_, 0.0);
    parallel_for(n_blocks_, threads_, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t b = lo; b < hi; ++b) {
            const std::size_t base = b * B;
            const std::size_t valid = std::min(B, d_ - base);
            const double* blk = blocks_.data() + b * B * B;
            for (std::size_t i = 0; i < valid; ++i) {
                double s = 0.0;
                const double* row = blk + i * B;
                for (std::size_t j = 0; j < valid; ++j) s += row[j] * v[base + j];
                out[base + i] = s;
            }
        }
    });
    return out;
}

std::size_t FisherInverseEstimator::memory_bytes() const {
    return n_blocks_ * block_width_ * block_width_ * sizeof(double);
}

std::span<const double> FisherInverseEstimator::block(std::size_t b) const {
    const std::size_t sz = block_width_ * block_width_;
    return {blocks_.data() + b * sz, sz};
}

void FisherInverseEstimator::save(std::ostream& out) const {
    write_u64_le(out, d_);
    write_u64_le(out, block_width_);
    write_f64_le(out, dampening_);
    write_u64_le(out, budget_);
    write_u64_le(out, consumed_);
    for (double x : blocks_) write_f64_le(out, x);
    if (!out) throw IoError("estimator save: stream write failed");
}

void FisherInverseEstimator::save_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("estimator save: cannot open " + path);
    save(f);
}

FisherInverseEstimator FisherInverseEstimator::load(std::istream& in) {
    const auto d = read_u64_le(in);
    const auto B = read_u64_le(in);
    const double lambda = read_f64_le(in);
    const auto m = read_u64_le(in);
    const auto consumed = read_u64_le(in);
    FisherInverseEstimator est(static_cast<std::size_t>(d), static_cast<std::size_t>(B), lambda,
                               static_cast<std::size_t>(m));
    if (consumed > m) throw IoError("estimator load: consumed exceeds budget");
    for (double& x : est.blocks_) x = read_f64_le(in);
    est.consumed_ = static_cast<std::size_t>(consumed);
    return est;
}

FisherInverseEstimator FisherInverseEstimator::load_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("estimator load: cannot open " + path);
    return load(f);
}

}  // namespace obskit
