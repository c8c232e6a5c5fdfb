#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "medsae/errors.hpp"
#include "medsae/matrix.hpp"

namespace medsae {

// Two-step embedding normalization: center by the training-set mean, then
// scale so the mean row l2 norm equals sqrt(d). Statistics are fit on the
// training split only and frozen for evaluation.
struct NormalizationStats {
    std::vector<double> mean;
    double scale = 1.0;
    std::size_t d = 0;
};

inline NormalizationStats fit_normalization(const Matrix& train) {
    if (train.rows < 1) throw DegenerateData("fit_normalization: no rows");
    const std::size_t n = train.rows, d = train.cols;

    NormalizationStats stats;
    stats.d = d;
    stats.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = train.row(i);
        for (std::size_t j = 0; j < d; ++j) stats.mean[j] += r[j];
    }
    for (std::size_t j = 0; j < d; ++j) stats.mean[j] /= static_cast<double>(n);

    double norm_sum = 0.0;
    double raw_norm_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = train.row(i);
        double sq = 0.0, raw_sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = r[j] - stats.mean[j];
            sq += c * c;
            raw_sq += r[j] * r[j];
        }
        norm_sum += std::sqrt(sq);
        raw_norm_sum += std::sqrt(raw_sq);
    }
    double mean_norm = norm_sum / static_cast<double>(n);
    double mean_raw_norm = raw_norm_sum / static_cast<double>(n);
    // "all rows identical" up to rounding noise from the column means
    if (mean_norm <= 1e-12 * (1.0 + mean_raw_norm)) {
        throw DegenerateData("fit_normalization: centered norms are zero (identical rows)");
    }
    stats.scale = std::sqrt(static_cast<double>(d)) / mean_norm;
    return stats;
}

inline Matrix apply_normalization(const Matrix& x, const NormalizationStats& stats) {
    if (x.cols != stats.d) {
        throw DimensionMismatch("apply_normalization: cols " + std::to_string(x.cols) +
                                " != stats.d " + std::to_string(stats.d));
    }
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* src = x.row(i);
        double* dst = out.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) {
            dst[j] = stats.scale * (src[j] - stats.mean[j]);
        }
    }
    return out;
}

// Algebraic inverse of apply_normalization.
inline Matrix invert_normalization(const Matrix& x, const NormalizationStats& stats) {
    if (x.cols != stats.d) {
        throw DimensionMismatch("invert_normalization: cols mismatch");
    }
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* src = x.row(i);
        double* dst = out.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) {
            dst[j] = src[j] / stats.scale + stats.mean[j];
        }
    }
    return out;
}

} // namespace medsae
