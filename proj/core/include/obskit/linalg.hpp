#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "obskit/errors.hpp"

namespace obskit {

/// In-place lower Cholesky factor of a row-major symmetric positive-definite
/// n x n matrix. Throws on a non-positive pivot.
inline void cholesky_in_place(std::span<double> a, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
        if (!(diag > 0.0)) {
            throw Error("cholesky: matrix is not positive definite (pivot " +
                        std::to_string(j) + ")");
        }
        const double ljj = std::sqrt(diag);
        a[j * n + j] = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / ljj;
        }
    }
}

/// Solves A x = b for SPD A (row-major, n x n) via Cholesky; returns x.
inline std::vector<double> spd_solve(std::vector<double> a, std::size_t n,
                                     std::span<const double> b) {
    if (b.size() != n || a.size() != n * n) {
        throw DimensionError("spd_solve: size mismatch");
    }
    cholesky_in_place(a, n);
    std::vector<double> x(b.begin(), b.end());
    // forward: L y = b
    for (std::size_t i = 0; i < n; ++i) {
        double s = x[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * x[k];
        x[i] = s / (a[i * n + i]);
    }
    // backward: L^T x = y
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * x[k];
        x[ii] = s / a[ii * n + ii];
    }
    return x;
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace obskit
