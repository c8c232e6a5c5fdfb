#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "medsae/errors.hpp"
#include "medsae/matrix.hpp"
#include "medsae/rng.hpp"

namespace medsae {

// Single-layer ReLU sparse autoencoder:
//   z    = ReLU(W_enc (x - b_pre) + b_enc)
//   xhat = W_dec z + b_pre
// with loss  L = ||x - xhat||^2 + lambda * ||z||_1  averaged over the batch.
struct SaeParams {
    Matrix w_enc;               // m x d
    Matrix w_dec;               // d x m
    std::vector<double> b_pre;  // d
    std::vector<double> b_enc;  // m
    std::size_t d = 0;
    std::size_t m = 0;
};

struct SaeGrads {
    Matrix w_enc; // m x d
    Matrix w_dec; // d x m
    std::vector<double> b_pre;
    std::vector<double> b_enc;
};

struct TrainConfig {
    double learning_rate = 7e-6;
    double l1_coefficient = 3e-4;
    std::size_t expansion_factor = 16;
    std::size_t epochs = 200;
    std::size_t batch_size = 1024;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double dead_threshold = 0.0;
    bool normalize_decoder = true;
};

struct LossBreakdown {
    double reconstruction = 0.0; // mean over batch of ||x - xhat||^2
    double sparsity = 0.0;       // mean over batch of ||z||_1
    double total = 0.0;          // reconstruction + lambda * sparsity
};

// Decoder columns start as random unit directions; the encoder starts as the
// decoder transpose and both biases at zero.
inline SaeParams init_params(std::size_t d, std::size_t m, std::uint64_t seed) {
    if (d < 1 || m < 1) throw InvalidShape("init_params: d and m must be >= 1");
    SaeParams p;
    p.d = d;
    p.m = m;
    p.w_enc = Matrix(m, d);
    p.w_dec = Matrix(d, m);
    p.b_pre.assign(d, 0.0);
    p.b_enc.assign(m, 0.0);

    SplitMix64 rng(derive_seed(seed, "sae-init"));
    std::vector<double> col(d);
    for (std::size_t j = 0; j < m; ++j) {
        double norm = 0.0;
        do {
            rng.fill_gaussian(col.data(), d);
            norm = 0.0;
            for (double v : col) norm += v * v;
            norm = std::sqrt(norm);
        } while (norm == 0.0);
        for (std::size_t a = 0; a < d; ++a) {
            double v = col[a] / norm;
            p.w_dec(a, j) = v;
            p.w_enc(j, a) = v;
        }
    }
    return p;
}

inline Matrix encode(const SaeParams& p, const Matrix& x) {
    if (x.cols != p.d) {
        throw DimensionMismatch("encode: x.cols " + std::to_string(x.cols) +
                                " != d " + std::to_string(p.d));
    }
    Matrix z(x.rows, p.m);
    std::vector<double> u(p.d);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        for (std::size_t a = 0; a < p.d; ++a) u[a] = xi[a] - p.b_pre[a];
        double* zi = z.row(i);
        for (std::size_t j = 0; j < p.m; ++j) {
            const double* wj = p.w_enc.row(j);
            double acc = p.b_enc[j];
            for (std::size_t a = 0; a < p.d; ++a) acc += wj[a] * u[a];
            zi[j] = acc > 0.0 ? acc : 0.0;
        }
    }
    return z;
}

inline Matrix decode(const SaeParams& p, const Matrix& z) {
    if (z.cols != p.m) {
        throw DimensionMismatch("decode: z.cols " + std::to_string(z.cols) +
                                " != m " + std::to_string(p.m));
    }
    Matrix xhat(z.rows, p.d);
    for (std::size_t i = 0; i < z.rows; ++i) {
        const double* zi = z.row(i);
        double* xi = xhat.row(i);
        for (std::size_t a = 0; a < p.d; ++a) {
            const double* wa = p.w_dec.row(a);
            double acc = p.b_pre[a];
            for (std::size_t j = 0; j < p.m; ++j) acc += wa[j] * zi[j];
            xi[a] = acc;
        }
    }
    return xhat;
}

inline LossBreakdown loss(const SaeParams& p, const Matrix& x, double lambda) {
    if (x.cols != p.d) throw DimensionMismatch("loss: x.cols != d");
    Matrix z = encode(p, x);
    Matrix xhat = decode(p, z);
    double rec = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        const double* xh = xhat.row(i);
        for (std::size_t a = 0; a < p.d; ++a) {
            double r = xh[a] - xi[a];
            rec += r * r;
        }
        const double* zi = z.row(i);
        for (std::size_t j = 0; j < p.m; ++j) l1 += zi[j];
    }
    LossBreakdown lb;
    double n = static_cast<double>(x.rows);
    lb.reconstruction = rec / n;
    lb.sparsity = l1 / n;
    lb.total = lb.reconstruction + lambda * lb.sparsity;
    return lb;
}

// Per-batch byproducts the training loop tracks without extra passes.
struct BatchStats {
    LossBreakdown loss;
    std::size_t active_entries = 0; // count of z > 0 over the batch
};

// Analytic gradients of the batch-mean loss. ReLU and L1 subgradients at 0
// are both taken as 0, so inactive units receive no update. Accumulates into
// `g` (caller zeroes it) and flags neurons that fired in `fired` when given.
inline BatchStats grad_accumulate(const SaeParams& p, const Matrix& x, double lambda,
                                  SaeGrads& g, std::vector<std::uint8_t>* fired = nullptr) {
    if (x.cols != p.d) throw DimensionMismatch("grad: x.cols != d");
    const std::size_t d = p.d, m = p.m, n = x.rows;
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<double> u(d), a(m), z(m), xhat(d), r2(d), da(m), du(d);
    std::vector<std::size_t> active;
    active.reserve(m);

    BatchStats stats;
    double rec_sum = 0.0, l1_sum = 0.0;

    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.row(i);
        for (std::size_t aa = 0; aa < d; ++aa) u[aa] = xi[aa] - p.b_pre[aa];

        active.clear();
        for (std::size_t j = 0; j < m; ++j) {
            const double* wj = p.w_enc.row(j);
            double acc = p.b_enc[j];
            for (std::size_t aa = 0; aa < d; ++aa) acc += wj[aa] * u[aa];
            a[j] = acc;
            if (acc > 0.0) {
                z[j] = acc;
                active.push_back(j);
                l1_sum += acc;
            } else {
                z[j] = 0.0;
            }
        }
        stats.active_entries += active.size();
        if (fired) {
            for (std::size_t j : active) (*fired)[j] = 1;
        }

        // xhat = b_pre + sum_{j active} z_j * w_dec[:,j]
        for (std::size_t aa = 0; aa < d; ++aa) xhat[aa] = p.b_pre[aa];
        for (std::size_t j : active) {
            const double zj = z[j];
            for (std::size_t aa = 0; aa < d; ++aa) xhat[aa] += p.w_dec.data[aa * m + j] * zj;
        }

        for (std::size_t aa = 0; aa < d; ++aa) {
            double r = xhat[aa] - xi[aa];
            rec_sum += r * r;
            r2[aa] = 2.0 * r;
        }

        // da_j = (W_dec[:,j] . 2r + lambda) for active j, 0 otherwise
        for (std::size_t j : active) da[j] = lambda;
        for (std::size_t aa = 0; aa < d; ++aa) {
            const double raa = r2[aa];
            const double* wa = p.w_dec.row(aa);
            for (std::size_t j : active) da[j] += raa * wa[j];
        }

        // dW_dec[a][j] += 2 r_a z_j / n, active columns only
        for (std::size_t aa = 0; aa < d; ++aa) {
            const double raa = r2[aa] * inv_n;
            double* grow = g.w_dec.row(aa);
            for (std::size_t j : active) grow[j] += raa * z[j];
        }

        // dW_enc[j][:] += da_j u / n; db_enc += da / n; du = W_enc^T da
        std::fill(du.begin(), du.end(), 0.0);
        for (std::size_t j : active) {
            const double daj = da[j];
            const double scaled = daj * inv_n;
            g.b_enc[j] += scaled;
            double* grow = g.w_enc.row(j);
            const double* wj = p.w_enc.row(j);
            for (std::size_t aa = 0; aa < d; ++aa) {
                grow[aa] += scaled * u[aa];
                du[aa] += daj * wj[aa];
            }
        }

        // db_pre += (2r - W_enc^T da) / n
        for (std::size_t aa = 0; aa < d; ++aa) {
            g.b_pre[aa] += (r2[aa] - du[aa]) * inv_n;
        }
    }

    stats.loss.reconstruction = rec_sum * inv_n;
    stats.loss.sparsity = l1_sum * inv_n;
    stats.loss.total = stats.loss.reconstruction + lambda * stats.loss.sparsity;
    return stats;
}

inline SaeGrads zero_grads(const SaeParams& p) {
    SaeGrads g;
    g.w_enc = Matrix(p.m, p.d);
    g.w_dec = Matrix(p.d, p.m);
    g.b_pre.assign(p.d, 0.0);
    g.b_enc.assign(p.m, 0.0);
    return g;
}

inline SaeGrads grad(const SaeParams& p, const Matrix& x, double lambda) {
    SaeGrads g = zero_grads(p);
    grad_accumulate(p, x, lambda, g);
    return g;
}

// --- training-time diagnostics ---------------------------------------------

// Mean over samples of the fraction of strictly positive activations.
inline double l0_rate(const Matrix& z) {
    if (z.size() == 0) return 0.0;
    std::size_t nnz = 0;
    for (double v : z.data) {
        if (v > 0.0) ++nnz;
    }
    return static_cast<double>(nnz) / static_cast<double>(z.size());
}

// 1 - sum ||x - xhat||^2 / sum ||x - colmean(x)||^2.
inline double fve(const Matrix& x, const Matrix& x_hat) {
    if (x.rows != x_hat.rows || x.cols != x_hat.cols) {
        throw DimensionMismatch("fve: shape mismatch");
    }
    std::vector<double> mean(x.cols, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* r = x.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) mean[j] += r[j];
    }
    for (std::size_t j = 0; j < x.cols; ++j) mean[j] /= static_cast<double>(x.rows);

    double resid = 0.0, total = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        const double* hr = x_hat.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) {
            double e = xr[j] - hr[j];
            double c = xr[j] - mean[j];
            resid += e * e;
            total += c * c;
        }
    }
    if (total == 0.0) throw DegenerateData("fve: data has zero variance");
    return 1.0 - resid / total;
}

struct DeadNeuronReport {
    std::vector<std::uint8_t> alive; // per-neuron flag
    double dead_fraction = 0.0;
};

// Neuron j is dead iff max over samples of z[:,j] <= threshold.
inline DeadNeuronReport dead_neurons(const Matrix& z, double threshold = 0.0) {
    DeadNeuronReport rep;
    rep.alive.assign(z.cols, 0);
    for (std::size_t i = 0; i < z.rows; ++i) {
        const double* r = z.row(i);
        for (std::size_t j = 0; j < z.cols; ++j) {
            if (r[j] > threshold) rep.alive[j] = 1;
        }
    }
    std::size_t dead = 0;
    for (auto f : rep.alive) {
        if (!f) ++dead;
    }
    rep.dead_fraction = z.cols == 0 ? 0.0
                                    : static_cast<double>(dead) / static_cast<double>(z.cols);
    return rep;
}

} // namespace medsae
