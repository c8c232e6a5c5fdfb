#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "medsae/errors.hpp"
#include "medsae/labels.hpp"
#include "medsae/matrix.hpp"
#include "medsae/rng.hpp"

namespace medsae {

// Known sparse dictionary with a feature -> label assignment. Stands in for
// real embeddings in acceptance tests: recovery against it is measurable.
struct GroundTruth {
    Matrix dictionary;                      // d x t, unit-norm columns
    std::size_t t = 0;                      // true feature count
    std::size_t k = 0;                      // label count
    std::vector<std::size_t> feature_labels; // feature -> label index
    double sparsity = 1.0;                  // expected active features per sample
    std::uint64_t seed = 0;
};

inline GroundTruth gen_ground_truth(std::size_t d, std::size_t t, std::size_t k,
                                    double sparsity, std::uint64_t seed) {
    if (d < 2 || k < 1 || t < k) {
        throw InvalidShape("gen_ground_truth: need d >= 2 and t >= k >= 1");
    }
    if (sparsity < 1.0 || sparsity > static_cast<double>(t)) {
        throw InvalidShape("gen_ground_truth: sparsity must be in [1, t]");
    }
    GroundTruth gt;
    gt.t = t;
    gt.k = k;
    gt.sparsity = sparsity;
    gt.seed = seed;
    gt.dictionary = Matrix(d, t);
    gt.feature_labels.resize(t);

    SplitMix64 rng(derive_seed(seed, "dictionary"));
    std::vector<double> col(d);
    for (std::size_t f = 0; f < t; ++f) {
        double norm = 0.0;
        do {
            rng.fill_gaussian(col.data(), d);
            norm = 0.0;
            for (double v : col) norm += v * v;
            norm = std::sqrt(norm);
        } while (norm == 0.0);
        for (std::size_t a = 0; a < d; ++a) gt.dictionary(a, f) = col[a] / norm;
        gt.feature_labels[f] = f % k; // round-robin: every label owns >= 1 feature
    }
    return gt;
}

struct SynthData {
    Matrix embeddings;  // n x d
    LabelMatrix labels; // n x k multi-hot
    Matrix codes;       // n x t true activations
};

// Each sample activates a Bernoulli(sparsity/t) subset of features with
// coefficients uniform in [0.5, 1.5], sums their directions and adds
// isotropic Gaussian noise. Label j fires iff some feature owned by j is
// active.
inline SynthData gen_samples(const GroundTruth& gt, std::size_t n, double noise_sigma,
                             std::uint64_t seed) {
    if (n < 1) throw InvalidShape("gen_samples: n must be >= 1");
    if (noise_sigma < 0.0) throw InvalidShape("gen_samples: noise_sigma must be >= 0");
    const std::size_t d = gt.dictionary.rows, t = gt.t, k = gt.k;
    const double p_active = gt.sparsity / static_cast<double>(t);

    SynthData out;
    out.embeddings = Matrix(n, d);
    out.codes = Matrix(n, t);
    out.labels.rows = n;
    out.labels.cols = k;
    out.labels.data.assign(n * k, 0.0);
    out.labels.label_names.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        out.labels.label_names[j] = "label_" + std::to_string(j);
    }

    SplitMix64 rng(derive_seed(seed, "samples"));
    std::vector<double> noise(d);
    for (std::size_t i = 0; i < n; ++i) {
        double* x = out.embeddings.row(i);
        double* code = out.codes.row(i);
        for (std::size_t f = 0; f < t; ++f) {
            if (rng.next_double() < p_active) {
                double c = rng.next_uniform(0.5, 1.5);
                code[f] = c;
                out.labels(i, gt.feature_labels[f]) = 1.0;
                for (std::size_t a = 0; a < d; ++a) x[a] += c * gt.dictionary(a, f);
            }
        }
        if (noise_sigma > 0.0) {
            rng.fill_gaussian(noise.data(), d);
            for (std::size_t a = 0; a < d; ++a) x[a] += noise_sigma * noise[a];
        }
    }
    return out;
}

struct RecoveryScore {
    double mean = 0.0;
    std::vector<double> per_feature; // best |cos| per ground-truth feature
};

// Mean over ground-truth features of the best absolute cosine similarity
// against the (alive) decoder columns. Invariant to permutation and sign
// flips of the decoder.
inline RecoveryScore recovery_score(const Matrix& w_dec, const GroundTruth& gt,
                                    const std::vector<std::uint8_t>* alive = nullptr) {
    if (w_dec.cols < 1) throw InvalidShape("recovery_score: decoder has no columns");
    if (w_dec.rows != gt.dictionary.rows) {
        throw DimensionMismatch("recovery_score: decoder rows != dictionary rows");
    }
    if (alive && alive->size() != w_dec.cols) {
        throw ShapeMismatch("recovery_score: alive mask size != decoder columns");
    }
    const std::size_t d = w_dec.rows, m = w_dec.cols, t = gt.t;

    std::vector<double> col_norm(m, 0.0);
    for (std::size_t a = 0; a < d; ++a) {
        const double* wr = w_dec.row(a);
        for (std::size_t j = 0; j < m; ++j) col_norm[j] += wr[j] * wr[j];
    }
    for (auto& v : col_norm) v = std::sqrt(v);

    RecoveryScore score;
    score.per_feature.assign(t, 0.0);
    for (std::size_t f = 0; f < t; ++f) {
        double best = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (alive && !(*alive)[j]) continue;
            if (col_norm[j] == 0.0) continue;
            double dot = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                dot += gt.dictionary(a, f) * w_dec(a, j);
            }
            double c = std::fabs(dot) / col_norm[j]; // dictionary columns are unit
            if (c > best) best = c;
        }
        score.per_feature[f] = best;
        score.mean += best;
    }
    score.mean /= static_cast<double>(t);
    return score;
}

} // namespace medsae
