#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "medsae/errors.hpp"
#include "medsae/labels.hpp"
#include "medsae/matrix.hpp"
#include "medsae/sae.hpp"

#include "json.hpp"

namespace medsae {

// Pearson correlations between neuron activations and label columns.
// Entries where either side has zero variance are flagged invalid.
struct CorrelationMatrix {
    std::size_t m = 0; // neurons
    std::size_t k = 0; // labels
    std::vector<double> values;       // m x k, row-major
    std::vector<std::uint8_t> valid;  // m x k

    double operator()(std::size_t i, std::size_t j) const { return values[i * k + j]; }
    bool is_valid(std::size_t i, std::size_t j) const { return valid[i * k + j] != 0; }
};

// Population-moment Pearson: rho = cov(Z_i, Y_j) / (sigma_i sigma_j) with
// 1/n moments throughout.
inline CorrelationMatrix pearson(const Matrix& Z, const LabelMatrix& Y) {
    if (Z.rows != Y.rows) throw ShapeMismatch("pearson: Z.rows != Y.rows");
    if (Z.rows < 2) throw ShapeMismatch("pearson: need at least 2 samples");
    const std::size_t n = Z.rows, m = Z.cols, k = Y.cols;
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<double> zmean(m, 0.0), ymean(k, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        const double* zr = Z.row(s);
        for (std::size_t i = 0; i < m; ++i) zmean[i] += zr[i];
        for (std::size_t j = 0; j < k; ++j) ymean[j] += Y(s, j);
    }
    for (auto& v : zmean) v *= inv_n;
    for (auto& v : ymean) v *= inv_n;

    std::vector<double> zvar(m, 0.0), yvar(k, 0.0);
    std::vector<double> cov(m * k, 0.0);
    std::vector<double> yc(k);
    for (std::size_t s = 0; s < n; ++s) {
        const double* zr = Z.row(s);
        for (std::size_t j = 0; j < k; ++j) {
            yc[j] = Y(s, j) - ymean[j];
            yvar[j] += yc[j] * yc[j];
        }
        for (std::size_t i = 0; i < m; ++i) {
            double zc = zr[i] - zmean[i];
            zvar[i] += zc * zc;
            double* crow = cov.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) crow[j] += zc * yc[j];
        }
    }

    CorrelationMatrix c;
    c.m = m;
    c.k = k;
    c.values.assign(m * k, 0.0);
    c.valid.assign(m * k, 0);
    for (std::size_t i = 0; i < m; ++i) {
        double zsd = std::sqrt(zvar[i] * inv_n);
        for (std::size_t j = 0; j < k; ++j) {
            double ysd = std::sqrt(yvar[j] * inv_n);
            if (zsd > 0.0 && ysd > 0.0) {
                double rho = (cov[i * k + j] * inv_n) / (zsd * ysd);
                // rounding can push |rho| a hair past 1
                c.values[i * k + j] = std::clamp(rho, -1.0, 1.0);
                c.valid[i * k + j] = 1;
            }
        }
    }
    return c;
}

// Row-normalized absolute correlations, p_ij = |rho_ij| / sum_k |rho_ik|.
// Invalid entries contribute 0; rows with no mass are undefined.
struct ConceptDistributions {
    std::size_t m = 0;
    std::size_t k = 0;
    std::vector<double> values;        // m x k
    std::vector<std::uint8_t> defined; // per neuron
};

inline ConceptDistributions concept_distribution(const CorrelationMatrix& c) {
    ConceptDistributions d;
    d.m = c.m;
    d.k = c.k;
    d.values.assign(c.m * c.k, 0.0);
    d.defined.assign(c.m, 0);
    for (std::size_t i = 0; i < c.m; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < c.k; ++j) {
            if (c.is_valid(i, j)) sum += std::fabs(c(i, j));
        }
        if (sum > 0.0) {
            d.defined[i] = 1;
            for (std::size_t j = 0; j < c.k; ++j) {
                if (c.is_valid(i, j)) d.values[i * c.k + j] = std::fabs(c(i, j)) / sum;
            }
        }
    }
    return d;
}

// Shannon entropy in bits with 0 log 0 := 0.
inline double entropy_bits(std::span<const double> dist) {
    double h = 0.0;
    for (double p : dist) {
        if (p > 0.0) h -= p * std::log2(p);
    }
    return h + 0.0; // normalize -0.0
}

struct NeuronProfile {
    std::size_t neuron_id = 0;
    bool entropy_defined = false;
    double entropy = 0.0;                 // bits, valid when entropy_defined
    std::vector<double> distribution;     // empty when undefined
    bool has_best_label = false;
    std::size_t best_label = 0;
    std::string best_label_name;
    double best_abs_correlation = 0.0;
    bool alive = true;
    std::vector<std::size_t> top_samples;
};

struct MeanEntropy {
    double mean = 0.0;
    std::size_t included = 0;
    std::size_t excluded = 0;
};

// Mean over neurons with defined entropy; optionally restricted to alive
// neurons. The excluded count is always reported.
inline MeanEntropy mean_entropy(const std::vector<NeuronProfile>& profiles,
                                bool exclude_dead = true) {
    MeanEntropy me;
    double sum = 0.0;
    for (const auto& p : profiles) {
        if (p.entropy_defined && (!exclude_dead || p.alive)) {
            sum += p.entropy;
            ++me.included;
        } else {
            ++me.excluded;
        }
    }
    if (me.included == 0) throw NoDefinedNeurons("mean_entropy: no neuron has defined entropy");
    me.mean = sum / static_cast<double>(me.included);
    return me;
}

// Indices of the `count` largest activations of one neuron, descending,
// ties broken by ascending sample index.
inline std::vector<std::size_t> top_activating(const Matrix& Z, std::size_t neuron,
                                               std::size_t count) {
    if (neuron >= Z.cols) throw IndexOutOfRange("top_activating: neuron index out of range");
    if (count < 1) throw IndexOutOfRange("top_activating: count must be >= 1");
    std::vector<std::size_t> idx(Z.rows);
    std::iota(idx.begin(), idx.end(), 0);
    auto cmp = [&](std::size_t a, std::size_t b) {
        double za = Z(a, neuron), zb = Z(b, neuron);
        if (za != zb) return za > zb;
        return a < b;
    };
    count = std::min(count, Z.rows);
    std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), cmp);
    idx.resize(count);
    return idx;
}

// Z = encode(p, data), evaluated in row chunks so n can exceed memory
// comfortable for one pass. Chunking is bit-neutral.
inline Matrix activation_matrix(const SaeParams& p, const Matrix& data,
                                std::size_t chunk_rows = 256) {
    if (data.cols != p.d) throw DimensionMismatch("activation_matrix: data.cols != d");
    if (chunk_rows == 0) chunk_rows = 1;
    Matrix Z(data.rows, p.m);
    Matrix chunk;
    for (std::size_t start = 0; start < data.rows; start += chunk_rows) {
        std::size_t rows = std::min(chunk_rows, data.rows - start);
        chunk.rows = rows;
        chunk.cols = data.cols;
        chunk.data.assign(data.row(start), data.row(start) + rows * data.cols);
        Matrix zc = encode(p, chunk);
        std::copy(zc.data.begin(), zc.data.end(), Z.row(start));
    }
    return Z;
}

// Full per-neuron profile pipeline shared by SAE activations and raw
// embedding dimensions.
inline std::vector<NeuronProfile> build_profiles(const Matrix& Z, const LabelMatrix& Y,
                                                 const std::vector<std::uint8_t>& alive,
                                                 std::size_t top_k = 10) {
    if (alive.size() != Z.cols) throw ShapeMismatch("build_profiles: alive mask size != m");
    CorrelationMatrix c = pearson(Z, Y);
    ConceptDistributions dist = concept_distribution(c);

    std::vector<NeuronProfile> out;
    out.reserve(Z.cols);
    for (std::size_t i = 0; i < Z.cols; ++i) {
        NeuronProfile np;
        np.neuron_id = i;
        np.alive = alive[i] != 0;
        if (dist.defined[i]) {
            np.distribution.assign(dist.values.begin() + i * c.k,
                                   dist.values.begin() + (i + 1) * c.k);
            np.entropy = entropy_bits(np.distribution);
            np.entropy_defined = true;
        }
        for (std::size_t j = 0; j < c.k; ++j) {
            if (!c.is_valid(i, j)) continue;
            double a = std::fabs(c(i, j));
            if (!np.has_best_label || a > np.best_abs_correlation) {
                np.has_best_label = true;
                np.best_label = j;
                np.best_abs_correlation = a;
            }
        }
        if (np.has_best_label) np.best_label_name = Y.label_names[np.best_label];
        np.top_samples = top_activating(Z, i, std::min<std::size_t>(top_k, Z.rows));
        out.push_back(std::move(np));
    }
    return out;
}

// Baseline side of the entropy comparison: the same pipeline applied to raw
// embedding dimensions. A dimension is treated as alive when it varies.
inline std::vector<NeuronProfile> raw_feature_profiles(const Matrix& embeddings,
                                                       const LabelMatrix& Y,
                                                       std::size_t top_k = 10) {
    std::vector<std::uint8_t> alive(embeddings.cols, 0);
    for (std::size_t j = 0; j < embeddings.cols; ++j) {
        double first = embeddings(0, j);
        for (std::size_t i = 1; i < embeddings.rows; ++i) {
            if (embeddings(i, j) != first) {
                alive[j] = 1;
                break;
            }
        }
    }
    return build_profiles(embeddings, Y, alive, top_k);
}

// Line-delimited JSON, one record per neuron.
inline void write_profiles(const std::vector<NeuronProfile>& profiles,
                           const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoFailure("write_profiles: cannot open " + path.string());
    for (const auto& p : profiles) {
        nlohmann::json j;
        j["neuron_id"] = p.neuron_id;
        if (p.entropy_defined) {
            j["entropy"] = p.entropy;
            j["distribution"] = p.distribution;
        } else {
            j["entropy"] = nullptr;
            j["distribution"] = nullptr;
        }
        if (p.has_best_label) {
            j["best_label"] = p.best_label_name;
            j["best_abs_correlation"] = p.best_abs_correlation;
        } else {
            j["best_label"] = nullptr;
            j["best_abs_correlation"] = nullptr;
        }
        j["alive"] = p.alive;
        j["top_samples"] = p.top_samples;
        out << j.dump() << '\n';
    }
    if (!out) throw IoFailure("write_profiles: write failed");
}

inline std::vector<NeuronProfile> read_profiles(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("read_profiles: cannot open " + path.string());
    std::vector<NeuronProfile> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        NeuronProfile p;
        p.neuron_id = j.at("neuron_id").get<std::size_t>();
        if (!j.at("entropy").is_null()) {
            p.entropy = j.at("entropy").get<double>();
            p.entropy_defined = true;
            p.distribution = j.at("distribution").get<std::vector<double>>();
        }
        if (!j.at("best_label").is_null()) {
            p.has_best_label = true;
            p.best_label_name = j.at("best_label").get<std::string>();
            p.best_abs_correlation = j.at("best_abs_correlation").get<double>();
        }
        p.alive = j.at("alive").get<bool>();
        p.top_samples = j.at("top_samples").get<std::vector<std::size_t>>();
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace medsae
