#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "medsae/errors.hpp"
#include "medsae/matrix.hpp"
#include "medsae/normalize.hpp"
#include "medsae/rng.hpp"
#include "medsae/sae.hpp"

#include "json.hpp"

namespace medsae {

struct AdamState {
    Matrix m_w_enc, v_w_enc;
    Matrix m_w_dec, v_w_dec;
    std::vector<double> m_b_pre, v_b_pre;
    std::vector<double> m_b_enc, v_b_enc;
    std::size_t step = 0;
};

inline AdamState init_adam_state(const SaeParams& p) {
    AdamState st;
    st.m_w_enc = Matrix(p.m, p.d);
    st.v_w_enc = Matrix(p.m, p.d);
    st.m_w_dec = Matrix(p.d, p.m);
    st.v_w_dec = Matrix(p.d, p.m);
    st.m_b_pre.assign(p.d, 0.0);
    st.v_b_pre.assign(p.d, 0.0);
    st.m_b_enc.assign(p.m, 0.0);
    st.v_b_enc.assign(p.m, 0.0);
    return st;
}

namespace detail {

inline void adam_update_span(double* theta, const double* g, double* m, double* v,
                             std::size_t len, const TrainConfig& cfg, double bc1,
                             double bc2) {
    for (std::size_t i = 0; i < len; ++i) {
        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
        v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
    }
}

} // namespace detail

// Bias-corrected Adam step. With normalize_decoder set, the decoder-gradient
// component parallel to each (unit) decoder column is projected out before the
// moment update, and columns are re-normalized to unit l2 afterwards; without
// this the L1 term is gamed by shrinking z while growing w_dec.
inline void adam_step(SaeParams& p, const SaeGrads& g, AdamState& st,
                      const TrainConfig& cfg) {
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
    const std::size_t d = p.d, m = p.m;

    const Matrix* gdec = &g.w_dec;
    Matrix projected;
    if (cfg.normalize_decoder) {
        projected = g.w_dec;
        for (std::size_t j = 0; j < m; ++j) {
            double dot = 0.0, nsq = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                double w = p.w_dec.data[a * m + j];
                dot += projected.data[a * m + j] * w;
                nsq += w * w;
            }
            if (nsq > 0.0) {
                double c = dot / nsq;
                for (std::size_t a = 0; a < d; ++a) {
                    projected.data[a * m + j] -= c * p.w_dec.data[a * m + j];
                }
            }
        }
        gdec = &projected;
    }

    detail::adam_update_span(p.w_enc.data.data(), g.w_enc.data.data(),
                             st.m_w_enc.data.data(), st.v_w_enc.data.data(),
                             p.w_enc.size(), cfg, bc1, bc2);
    detail::adam_update_span(p.w_dec.data.data(), gdec->data.data(),
                             st.m_w_dec.data.data(), st.v_w_dec.data.data(),
                             p.w_dec.size(), cfg, bc1, bc2);
    detail::adam_update_span(p.b_pre.data(), g.b_pre.data(), st.m_b_pre.data(),
                             st.v_b_pre.data(), d, cfg, bc1, bc2);
    detail::adam_update_span(p.b_enc.data(), g.b_enc.data(), st.m_b_enc.data(),
                             st.v_b_enc.data(), m, cfg, bc1, bc2);

    if (cfg.normalize_decoder) {
        for (std::size_t j = 0; j < m; ++j) {
            double nsq = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                double w = p.w_dec.data[a * m + j];
                nsq += w * w;
            }
            if (nsq > 0.0) {
                double inv = 1.0 / std::sqrt(nsq);
                for (std::size_t a = 0; a < d; ++a) p.w_dec.data[a * m + j] *= inv;
            }
        }
    }
}

struct EpochRecord {
    std::size_t epoch = 0;
    LossBreakdown loss;        // mean per-sample loss over the epoch, pre-update
    double l0_rate = 0.0;      // active entries / (n * m) over the epoch
    double dead_fraction = 0.0; // neurons that never fired this epoch
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double l0_rate = 0.0;       // final, over the full data at final params
    double fve = 0.0;
    double dead_fraction = 0.0;
    double wall_time_s = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Full-batch Adam training with a fixed per-epoch Fisher-Yates shuffle keyed
// on (seed, epoch). Bit-deterministic for fixed (seed, cfg, data) on a single
// thread. The trailing partial batch is kept; loss and gradients are batch
// means so lambda and the learning rate stay batch-size invariant.
inline std::pair<SaeParams, TrainReport> train(const TrainConfig& cfg, const Matrix& data,
                                               const EpochCallback& on_epoch = {}) {
    if (cfg.learning_rate <= 0.0) throw ConfigError("train: learning_rate must be > 0");
    if (cfg.l1_coefficient < 0.0) throw ConfigError("train: l1_coefficient must be >= 0");
    if (cfg.expansion_factor < 1) throw ConfigError("train: expansion_factor must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (data.rows < cfg.batch_size) {
        throw ConfigError("train: data.rows " + std::to_string(data.rows) +
                          " < batch_size " + std::to_string(cfg.batch_size));
    }

    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = data.rows, d = data.cols;
    const std::size_t m = d * cfg.expansion_factor;

    SaeParams p = init_params(d, m, cfg.seed);
    AdamState st = init_adam_state(p);
    SaeGrads g = zero_grads(p);

    TrainReport report;
    report.epochs.reserve(cfg.epochs);
    Matrix batch;
    std::vector<std::uint8_t> fired(m);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = shuffled_indices(n, derive_seed(cfg.seed, "epoch-shuffle", epoch));
        std::fill(fired.begin(), fired.end(), 0);
        double rec_sum = 0.0, l1_sum = 0.0;
        std::size_t active_total = 0;

        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const std::size_t rows = std::min(cfg.batch_size, n - start);
            batch.rows = rows;
            batch.cols = d;
            batch.data.resize(rows * d);
            for (std::size_t i = 0; i < rows; ++i) {
                const double* src = data.row(order[start + i]);
                std::copy(src, src + d, batch.row(i));
            }

            std::fill(g.w_enc.data.begin(), g.w_enc.data.end(), 0.0);
            std::fill(g.w_dec.data.begin(), g.w_dec.data.end(), 0.0);
            std::fill(g.b_pre.begin(), g.b_pre.end(), 0.0);
            std::fill(g.b_enc.begin(), g.b_enc.end(), 0.0);

            BatchStats bs = grad_accumulate(p, batch, cfg.l1_coefficient, g, &fired);
            if (!std::isfinite(bs.loss.total)) {
                throw NonFiniteLoss("train: non-finite loss at epoch " +
                                        std::to_string(epoch) + ", batch " +
                                        std::to_string(batch_index),
                                    epoch, batch_index);
            }
            rec_sum += bs.loss.reconstruction * static_cast<double>(rows);
            l1_sum += bs.loss.sparsity * static_cast<double>(rows);
            active_total += bs.active_entries;

            adam_step(p, g, st, cfg);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss.reconstruction = rec_sum / static_cast<double>(n);
        rec.loss.sparsity = l1_sum / static_cast<double>(n);
        rec.loss.total = rec.loss.reconstruction + cfg.l1_coefficient * rec.loss.sparsity;
        rec.l0_rate = static_cast<double>(active_total) / (static_cast<double>(n) * m);
        std::size_t fired_count = 0;
        for (auto f : fired) {
            if (f) ++fired_count;
        }
        rec.dead_fraction = 1.0 - static_cast<double>(fired_count) / static_cast<double>(m);
        report.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }

    // Final diagnostics over the full data at the final parameters.
    Matrix z = encode(p, data);
    Matrix xhat = decode(p, z);
    report.l0_rate = l0_rate(z);
    report.fve = fve(data, xhat);
    report.dead_fraction = dead_neurons(z, cfg.dead_threshold).dead_fraction;
    report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(p), report};
}

// --- checkpoints ------------------------------------------------------------
//
// Checkpoint file: one SAEM container holding, in order, w_enc, w_dec, b_pre
// (1 x d), b_enc (1 x m); JSON sidecar at <path>.json carries the run
// metadata and the frozen normalization statistics.

struct CheckpointMeta {
    std::size_t d = 0;
    std::size_t m = 0;
    std::size_t expansion_factor = 0;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    NormalizationStats norm;
    std::size_t epoch = 0;
};

inline void save_checkpoint(const SaeParams& p, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("save_checkpoint: cannot open " + path.string());
    write_matrix(p.w_enc, out);
    write_matrix(p.w_dec, out);
    Matrix b_pre(1, p.d);
    b_pre.data = p.b_pre;
    Matrix b_enc(1, p.m);
    b_enc.data = p.b_enc;
    write_matrix(b_pre, out);
    write_matrix(b_enc, out);
    out.flush();
    if (!out) throw IoFailure("save_checkpoint: write failed");

    nlohmann::json j;
    j["d"] = meta.d;
    j["m"] = meta.m;
    j["expansion_factor"] = meta.expansion_factor;
    j["lambda"] = meta.lambda;
    j["seed"] = meta.seed;
    j["epoch"] = meta.epoch;
    j["normalization"] = {{"mean", meta.norm.mean}, {"scale", meta.norm.scale}};
    std::ofstream side(path.string() + ".json", std::ios::trunc);
    if (!side) throw IoFailure("save_checkpoint: cannot open sidecar");
    side << j.dump(2) << '\n';
}

inline std::pair<SaeParams, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("load_checkpoint: cannot open " + path.string());
    SaeParams p;
    p.w_enc = read_matrix(in);
    p.w_dec = read_matrix(in);
    Matrix b_pre = read_matrix(in);
    Matrix b_enc = read_matrix(in);
    p.m = p.w_enc.rows;
    p.d = p.w_enc.cols;
    if (p.w_dec.rows != p.d || p.w_dec.cols != p.m || b_pre.size() != p.d ||
        b_enc.size() != p.m) {
        throw ShapeMismatch("load_checkpoint: inconsistent tensor shapes");
    }
    p.b_pre = std::move(b_pre.data);
    p.b_enc = std::move(b_enc.data);

    std::ifstream side(path.string() + ".json");
    if (!side) throw IoFailure("load_checkpoint: missing sidecar " + path.string() + ".json");
    nlohmann::json j = nlohmann::json::parse(side);
    CheckpointMeta meta;
    meta.d = j.at("d").get<std::size_t>();
    meta.m = j.at("m").get<std::size_t>();
    meta.expansion_factor = j.at("expansion_factor").get<std::size_t>();
    meta.lambda = j.at("lambda").get<double>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.epoch = j.at("epoch").get<std::size_t>();
    meta.norm.mean = j.at("normalization").at("mean").get<std::vector<double>>();
    meta.norm.scale = j.at("normalization").at("scale").get<double>();
    meta.norm.d = meta.norm.mean.size();
    if (meta.d != p.d || meta.m != p.m) {
        throw ShapeMismatch("load_checkpoint: sidecar shape disagrees with tensors");
    }
    return {std::move(p), std::move(meta)};
}

} // namespace medsae
