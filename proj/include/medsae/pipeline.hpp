#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "medsae/errors.hpp"
#include "medsae/http_vlm_client.hpp"
#include "medsae/labels.hpp"
#include "medsae/matrix.hpp"
#include "medsae/metrics.hpp"
#include "medsae/naming.hpp"
#include "medsae/normalize.hpp"
#include "medsae/sae.hpp"
#include "medsae/synth.hpp"
#include "medsae/train.hpp"
#include "medsae/vlm_client.hpp"

#include "json.hpp"

namespace medsae::pipeline {

namespace fs = std::filesystem;

// --- configuration -------------------------------------------------------------

struct DataPaths {
    std::string train_embeddings;
    std::string eval_embeddings; // falls back to train_embeddings
    std::string labels;
    std::string image_manifest;
};

struct MetricsConfig {
    double dead_threshold = 0.0;
    std::size_t top_k = 10;
    std::size_t chunk_rows = 256;
    bool export_correlations = false;
};

struct NamingConfig {
    VlmEndpointConfig endpoint;
    std::size_t n_top = 10;      // naming images per neuron
    std::size_t n_per_side = 10; // detection set size per side
    double threshold = 0.70;     // report cutoff
    std::size_t max_neurons = 25;
    std::string mock; // "", "oracle", "random", "scripted:PATH"
};

struct SynthesisConfig {
    std::size_t d = 64;
    std::size_t t = 100;
    std::size_t k = 8;
    double sparsity = 3.0;
    std::size_t n = 5000;
    double noise_sigma = 0.01;
    bool emit_images = false;
};

// One root seed fans out to every stage through derive_seed(root, stage).
struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    DataPaths data;
    TrainConfig train;
    MetricsConfig metrics;
    NamingConfig naming;
    SynthesisConfig synth;
};

namespace detail {

inline void require_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                         const std::string& section) {
    if (!obj.is_object()) {
        throw ConfigError("config: " + section + " must be a JSON object");
    }
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("config: unknown key '" + key + "' in " + section);
        }
    }
}

template <typename T>
void fetch(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

} // namespace detail

// Strict parse: any unknown key anywhere is a ConfigError (typo safety).
inline PipelineConfig parse_config(const nlohmann::json& j) {
    PipelineConfig cfg;
    detail::require_keys(
        j, {"seed", "output_dir", "data", "train", "metrics", "naming", "synth"}, "root");
    detail::fetch(j, "seed", cfg.seed);
    detail::fetch(j, "output_dir", cfg.output_dir);

    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::require_keys(
            d, {"train_embeddings", "eval_embeddings", "labels", "image_manifest"}, "data");
        detail::fetch(d, "train_embeddings", cfg.data.train_embeddings);
        detail::fetch(d, "eval_embeddings", cfg.data.eval_embeddings);
        detail::fetch(d, "labels", cfg.data.labels);
        detail::fetch(d, "image_manifest", cfg.data.image_manifest);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::require_keys(t,
                             {"learning_rate", "l1_coefficient", "expansion_factor", "epochs",
                              "batch_size", "adam_beta1", "adam_beta2", "adam_epsilon",
                              "dead_threshold", "normalize_decoder"},
                             "train");
        detail::fetch(t, "learning_rate", cfg.train.learning_rate);
        detail::fetch(t, "l1_coefficient", cfg.train.l1_coefficient);
        detail::fetch(t, "expansion_factor", cfg.train.expansion_factor);
        detail::fetch(t, "epochs", cfg.train.epochs);
        detail::fetch(t, "batch_size", cfg.train.batch_size);
        detail::fetch(t, "adam_beta1", cfg.train.adam_beta1);
        detail::fetch(t, "adam_beta2", cfg.train.adam_beta2);
        detail::fetch(t, "adam_epsilon", cfg.train.adam_epsilon);
        detail::fetch(t, "dead_threshold", cfg.train.dead_threshold);
        detail::fetch(t, "normalize_decoder", cfg.train.normalize_decoder);
    }
    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        detail::require_keys(
            m, {"dead_threshold", "top_k", "chunk_rows", "export_correlations"}, "metrics");
        detail::fetch(m, "dead_threshold", cfg.metrics.dead_threshold);
        detail::fetch(m, "top_k", cfg.metrics.top_k);
        detail::fetch(m, "chunk_rows", cfg.metrics.chunk_rows);
        detail::fetch(m, "export_correlations", cfg.metrics.export_correlations);
    }
    if (j.contains("naming")) {
        const auto& n = j.at("naming");
        detail::require_keys(n,
                             {"base_url", "model_name", "timeout_s", "max_retries",
                              "temperature", "api_key_env", "n_top", "n_per_side", "threshold",
                              "max_neurons", "mock"},
                             "naming");
        detail::fetch(n, "base_url", cfg.naming.endpoint.base_url);
        detail::fetch(n, "model_name", cfg.naming.endpoint.model_name);
        detail::fetch(n, "timeout_s", cfg.naming.endpoint.timeout_s);
        detail::fetch(n, "max_retries", cfg.naming.endpoint.max_retries);
        detail::fetch(n, "temperature", cfg.naming.endpoint.temperature);
        detail::fetch(n, "api_key_env", cfg.naming.endpoint.api_key_env);
        detail::fetch(n, "n_top", cfg.naming.n_top);
        detail::fetch(n, "n_per_side", cfg.naming.n_per_side);
        detail::fetch(n, "threshold", cfg.naming.threshold);
        detail::fetch(n, "max_neurons", cfg.naming.max_neurons);
        detail::fetch(n, "mock", cfg.naming.mock);
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        detail::require_keys(
            s, {"d", "t", "k", "sparsity", "n", "noise_sigma", "emit_images"}, "synth");
        detail::fetch(s, "d", cfg.synth.d);
        detail::fetch(s, "t", cfg.synth.t);
        detail::fetch(s, "k", cfg.synth.k);
        detail::fetch(s, "sparsity", cfg.synth.sparsity);
        detail::fetch(s, "n", cfg.synth.n);
        detail::fetch(s, "noise_sigma", cfg.synth.noise_sigma);
        detail::fetch(s, "emit_images", cfg.synth.emit_images);
    }
    return cfg;
}

inline PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: invalid JSON in " + path.string() + ": " + e.what());
    }
    try {
        return parse_config(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: bad value in " + path.string() + ": " + e.what());
    }
}

// --- path wiring ------------------------------------------------------------------

struct StagePaths {
    fs::path synth_dir, train_dir, analyze_dir, name_dir, report_dir;
    fs::path embeddings, labels, dictionary, ground_truth, manifest;
    fs::path checkpoint, progress;
    fs::path profiles_sae, profiles_raw, summary, correlations;
    fs::path findings, transcripts;
    fs::path report_csv, report_txt;
};

inline StagePaths stage_paths(const PipelineConfig& cfg) {
    StagePaths p;
    fs::path out = cfg.output_dir;
    p.synth_dir = out / "synth";
    p.train_dir = out / "train";
    p.analyze_dir = out / "analyze";
    p.name_dir = out / "name";
    p.report_dir = out / "report";
    p.embeddings = p.synth_dir / "embeddings.saem";
    p.labels = p.synth_dir / "labels.csv";
    p.dictionary = p.synth_dir / "dictionary.saem";
    p.ground_truth = p.synth_dir / "ground_truth.json";
    p.manifest = p.synth_dir / "manifest.csv";
    p.checkpoint = p.train_dir / "checkpoint.saem";
    p.progress = p.train_dir / "progress.jsonl";
    p.profiles_sae = p.analyze_dir / "profiles_sae.jsonl";
    p.profiles_raw = p.analyze_dir / "profiles_raw.jsonl";
    p.summary = p.analyze_dir / "summary.json";
    p.correlations = p.analyze_dir / "correlations_sae.saem";
    p.findings = p.name_dir / "findings.jsonl";
    p.transcripts = p.name_dir / "transcripts.jsonl";
    p.report_csv = p.report_dir / "report.csv";
    p.report_txt = p.report_dir / "report.txt";
    return p;
}

// Data paths fall back to the synth stage outputs inside output_dir so the
// synthetic flow needs no explicit wiring; real data sets them explicitly.
inline fs::path resolve_train_embeddings(const PipelineConfig& cfg) {
    if (!cfg.data.train_embeddings.empty()) return cfg.data.train_embeddings;
    return stage_paths(cfg).embeddings;
}

inline fs::path resolve_eval_embeddings(const PipelineConfig& cfg) {
    if (!cfg.data.eval_embeddings.empty()) return cfg.data.eval_embeddings;
    return resolve_train_embeddings(cfg);
}

inline fs::path resolve_labels(const PipelineConfig& cfg) {
    if (!cfg.data.labels.empty()) return cfg.data.labels;
    return stage_paths(cfg).labels;
}

inline fs::path resolve_manifest(const PipelineConfig& cfg) {
    if (!cfg.data.image_manifest.empty()) return cfg.data.image_manifest;
    return stage_paths(cfg).manifest;
}

inline void require_input(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) {
        throw ConfigError("validation: " + what + " not found at " + path.string());
    }
}

// --- synth stage --------------------------------------------------------------------

// 8x8 binary PGM rendering of one embedding row; unique per sample via the
// index comment, deterministic bytes.
inline std::string render_pgm(const double* row, std::size_t d, std::size_t index) {
    std::string img = "P5\n# sample " + std::to_string(index) + "\n8 8\n255\n";
    double lo = row[0], hi = row[0];
    for (std::size_t a = 1; a < d; ++a) {
        lo = std::min(lo, row[a]);
        hi = std::max(hi, row[a]);
    }
    for (std::size_t p = 0; p < 64; ++p) {
        double v = row[p % d];
        double unit = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        img.push_back(static_cast<char>(static_cast<unsigned char>(unit * 255.0)));
    }
    return img;
}

struct SynthStageResult {
    StagePaths paths;
    GroundTruth ground_truth;
    std::size_t n = 0;
    std::size_t files_written = 0;
};

inline SynthStageResult run_synth(const PipelineConfig& cfg) {
    const auto& s = cfg.synth;
    GroundTruth gt = gen_ground_truth(s.d, s.t, s.k, s.sparsity,
                                      derive_seed(cfg.seed, "synth-gt"));
    SynthData data = gen_samples(gt, s.n, s.noise_sigma, derive_seed(cfg.seed, "synth-samples"));

    StagePaths p = stage_paths(cfg);
    fs::create_directories(p.synth_dir);
    write_matrix(data.embeddings, p.embeddings);
    write_labels(data.labels, p.labels);
    write_matrix(gt.dictionary, p.dictionary);

    nlohmann::json sidecar;
    sidecar["d"] = s.d;
    sidecar["t"] = s.t;
    sidecar["k"] = s.k;
    sidecar["sparsity"] = s.sparsity;
    sidecar["n"] = s.n;
    sidecar["noise_sigma"] = s.noise_sigma;
    sidecar["seed"] = cfg.seed;
    sidecar["feature_labels"] = gt.feature_labels;
    sidecar["label_names"] = data.labels.label_names;
    {
        std::ofstream out(p.ground_truth, std::ios::trunc);
        if (!out) throw IoFailure("run_synth: cannot write " + p.ground_truth.string());
        out << sidecar.dump(2) << '\n';
    }

    SynthStageResult result;
    result.paths = p;
    result.ground_truth = std::move(gt);
    result.n = s.n;
    result.files_written = 3;

    if (s.emit_images) {
        fs::create_directories(p.synth_dir / "images");
        std::ofstream manifest(p.manifest, std::ios::trunc);
        manifest << "index,path\n";
        char name[32];
        for (std::size_t i = 0; i < s.n; ++i) {
            std::snprintf(name, sizeof(name), "sample_%06zu.pgm", i);
            fs::path rel = fs::path("images") / name;
            std::ofstream img(p.synth_dir / rel, std::ios::binary | std::ios::trunc);
            img << render_pgm(data.embeddings.row(i), s.d, i);
            manifest << i << ',' << rel.string() << '\n';
        }
        result.files_written += 1 + s.n;
    }
    return result;
}

// --- train stage ----------------------------------------------------------------------

struct TrainStageResult {
    StagePaths paths;
    TrainReport report;
    std::size_t d = 0;
    std::size_t m = 0;
};

inline TrainStageResult run_train(const PipelineConfig& cfg) {
    fs::path emb_path = resolve_train_embeddings(cfg);
    fs::path labels_path = resolve_labels(cfg);
    require_input(emb_path, "train embeddings");
    require_input(labels_path, "labels");

    Matrix raw = read_matrix(emb_path);
    NormalizationStats norm = fit_normalization(raw);
    Matrix normalized = apply_normalization(raw, norm);

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train");

    StagePaths p = stage_paths(cfg);
    fs::create_directories(p.train_dir);
    std::ofstream progress(p.progress, std::ios::trunc);
    if (!progress) throw IoFailure("run_train: cannot write " + p.progress.string());

    auto [params, report] = train(tc, normalized, [&](const EpochRecord& rec) {
        nlohmann::json j;
        j["epoch"] = rec.epoch;
        j["reconstruction"] = rec.loss.reconstruction;
        j["sparsity"] = rec.loss.sparsity;
        j["total"] = rec.loss.total;
        j["l0_rate"] = rec.l0_rate;
        j["dead_fraction"] = rec.dead_fraction;
        progress << j.dump() << '\n';
    });
    progress.flush();

    CheckpointMeta meta;
    meta.d = params.d;
    meta.m = params.m;
    meta.expansion_factor = tc.expansion_factor;
    meta.lambda = tc.l1_coefficient;
    meta.seed = cfg.seed;
    meta.norm = norm;
    meta.epoch = tc.epochs;
    save_checkpoint(params, meta, p.checkpoint);

    TrainStageResult result;
    result.paths = p;
    result.report = std::move(report);
    result.d = params.d;
    result.m = params.m;
    return result;
}

// --- analyze stage ----------------------------------------------------------------------

struct AnalyzeStageResult {
    StagePaths paths;
    nlohmann::json summary;
};

namespace detail {

inline nlohmann::json mean_entropy_json(const std::vector<NeuronProfile>& profiles,
                                        bool exclude_dead) {
    try {
        MeanEntropy me = mean_entropy(profiles, exclude_dead);
        return {{"mean", me.mean}, {"included", me.included}, {"excluded", me.excluded}};
    } catch (const NoDefinedNeurons&) {
        return {{"mean", nullptr}, {"included", 0}, {"excluded", profiles.size()}};
    }
}

} // namespace detail

inline AnalyzeStageResult run_analyze(const PipelineConfig& cfg,
                                      const fs::path& checkpoint_override = {}) {
    StagePaths p = stage_paths(cfg);
    fs::path ckpt = checkpoint_override.empty() ? p.checkpoint : checkpoint_override;
    fs::path eval_path = resolve_eval_embeddings(cfg);
    fs::path labels_path = resolve_labels(cfg);
    require_input(ckpt, "checkpoint");
    require_input(eval_path, "eval embeddings");
    require_input(labels_path, "labels");

    auto [params, meta] = load_checkpoint(ckpt);
    Matrix raw = read_matrix(eval_path);
    LabelMatrix labels = read_labels(labels_path);
    if (labels.rows != raw.rows) {
        throw ShapeMismatch("run_analyze: labels rows != embedding rows");
    }
    Matrix normalized = apply_normalization(raw, meta.norm); // frozen training stats

    Matrix Z = activation_matrix(params, normalized, cfg.metrics.chunk_rows);
    DeadNeuronReport dead = dead_neurons(Z, cfg.metrics.dead_threshold);
    auto sae_profiles = build_profiles(Z, labels, dead.alive, cfg.metrics.top_k);
    auto raw_profiles = raw_feature_profiles(raw, labels, cfg.metrics.top_k);

    Matrix xhat = decode(params, Z);

    fs::create_directories(p.analyze_dir);
    write_profiles(sae_profiles, p.profiles_sae);
    write_profiles(raw_profiles, p.profiles_raw);

    nlohmann::json summary;
    summary["l0_rate"] = l0_rate(Z);
    summary["fve"] = fve(normalized, xhat);
    summary["dead_fraction"] = dead.dead_fraction;
    summary["neuron_count"] = params.m;
    summary["raw_dim_count"] = raw.cols;
    summary["mean_entropy_sae"] = {
        {"dead_excluded", detail::mean_entropy_json(sae_profiles, true)},
        {"dead_included", detail::mean_entropy_json(sae_profiles, false)}};
    summary["mean_entropy_raw"] = {
        {"dead_excluded", detail::mean_entropy_json(raw_profiles, true)},
        {"dead_included", detail::mean_entropy_json(raw_profiles, false)}};
    {
        std::ofstream out(p.summary, std::ios::trunc);
        if (!out) throw IoFailure("run_analyze: cannot write " + p.summary.string());
        out << summary.dump(2) << '\n';
    }

    if (cfg.metrics.export_correlations) {
        CorrelationMatrix c = pearson(Z, labels);
        Matrix rho(c.m, c.k);
        rho.data = c.values; // invalid entries exported as 0
        write_matrix(rho, p.correlations);
    }

    AnalyzeStageResult result;
    result.paths = p;
    result.summary = std::move(summary);
    return result;
}

// --- name / detect stages ------------------------------------------------------------------

// Client selection: an injected pointer wins (tests), otherwise the config's
// mock mode, otherwise the real HTTP endpoint.
struct ClientSpec {
    VlmClient* injected = nullptr;
    std::string mock; // overrides cfg.naming.mock when non-empty
};

namespace detail {

inline std::unique_ptr<VlmClient> make_mock(const std::string& mode,
                                            const PipelineConfig& cfg,
                                            const ImageManifest* manifest) {
    if (mode == "oracle") {
        auto oracle = std::make_unique<OracleVlmClient>();
        if (!manifest) throw ConfigError("oracle mock requires an image manifest");
        for (const auto& [index, _] : manifest->entries()) {
            oracle->register_image(load_image_base64(manifest->image_path(index)), index);
        }
        return oracle;
    }
    if (mode == "random") {
        return std::make_unique<RandomVlmClient>(derive_seed(cfg.seed, "mock-random"));
    }
    if (mode.rfind("scripted:", 0) == 0) {
        fs::path path = mode.substr(9);
        std::ifstream in(path);
        if (!in) throw ConfigError("scripted mock: cannot open " + path.string());
        return std::make_unique<ScriptedVlmClient>(nlohmann::json::parse(in));
    }
    throw ConfigError("unknown mock mode '" + mode + "' (oracle|random|scripted:PATH)");
}

} // namespace detail

struct NameStageResult {
    StagePaths paths;
    std::size_t named = 0;
    std::size_t resumed = 0;
    std::size_t skipped = 0;
};

// Names and validates the top alive neurons (ranked by best |correlation|),
// appending findings as it goes so an interrupted run resumes without
// re-querying completed neurons.
inline NameStageResult run_name(const PipelineConfig& cfg, const ClientSpec& spec = {},
                                const fs::path& checkpoint_override = {},
                                const fs::path& profiles_override = {}) {
    StagePaths p = stage_paths(cfg);
    fs::path ckpt = checkpoint_override.empty() ? p.checkpoint : checkpoint_override;
    fs::path profiles_path = profiles_override.empty() ? p.profiles_sae : profiles_override;
    fs::path eval_path = resolve_eval_embeddings(cfg);
    fs::path manifest_path = resolve_manifest(cfg);
    require_input(ckpt, "checkpoint");
    require_input(profiles_path, "profiles");
    require_input(eval_path, "eval embeddings");
    require_input(manifest_path, "image manifest");

    auto [params, meta] = load_checkpoint(ckpt);
    Matrix raw = read_matrix(eval_path);
    Matrix normalized = apply_normalization(raw, meta.norm);
    Matrix Z = activation_matrix(params, normalized, cfg.metrics.chunk_rows);
    ImageManifest manifest = ImageManifest::load(manifest_path);

    // selection policy: alive neurons ranked by best absolute correlation
    auto profiles = read_profiles(profiles_path);
    std::vector<const NeuronProfile*> candidates;
    for (const auto& prof : profiles) {
        if (prof.alive && prof.has_best_label) candidates.push_back(&prof);
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const NeuronProfile* a, const NeuronProfile* b) {
                  if (a->best_abs_correlation != b->best_abs_correlation) {
                      return a->best_abs_correlation > b->best_abs_correlation;
                  }
                  return a->neuron_id < b->neuron_id;
              });
    if (candidates.size() > cfg.naming.max_neurons) {
        candidates.resize(cfg.naming.max_neurons);
    }

    std::string mock = !spec.mock.empty() ? spec.mock : cfg.naming.mock;
    std::unique_ptr<VlmClient> owned;
    VlmClient* client = spec.injected;
    if (!client) {
        if (!mock.empty()) {
            owned = detail::make_mock(mock, cfg, &manifest);
        } else {
            owned = std::make_unique<HttpVlmClient>(cfg.naming.endpoint);
        }
        client = owned.get();
    }

    fs::create_directories(p.name_dir);
    std::set<std::size_t> done;
    if (fs::exists(p.findings)) {
        for (const auto& f : read_findings(p.findings)) done.insert(f.neuron_id);
    }
    TranscriptWriter transcript(p.transcripts);
    auto provider = manifest_image_provider(manifest);

    NameStageResult result;
    result.paths = p;
    for (const NeuronProfile* prof : candidates) {
        const std::size_t neuron = prof->neuron_id;
        if (done.count(neuron)) {
            ++result.resumed;
            continue;
        }
        DetectionSet set;
        try {
            set = build_detection_set(Z, neuron, cfg.naming.n_per_side,
                                      derive_seed(cfg.seed, "detection-set"));
        } catch (const NumericError&) {
            ++result.skipped; // not enough activation mass to validate
            continue;
        }

        auto top = top_activating(Z, neuron, std::min<std::size_t>(cfg.naming.n_top, Z.rows));
        std::vector<fs::path> images;
        for (std::size_t idx : top) images.push_back(manifest.image_path(idx));
        VlmRequest request = build_naming_prompt(images, std::string(kNamingPromptTemplate),
                                                 cfg.naming.endpoint, cfg.naming.n_top);
        std::string concept_text;
        try {
            concept_text = name_neuron(*client, neuron, request, cfg.naming.endpoint,
                                       &transcript);
        } catch (const EmptyConcept&) {
            ++result.skipped;
            continue;
        }

        ConceptFinding finding = run_detection(*client, concept_text, set,
                                               derive_seed(cfg.seed, "detection-order"),
                                               provider, cfg.naming.endpoint, &transcript);
        append_finding(finding, p.findings);
        ++result.named;
    }
    return result;
}

struct DetectStageResult {
    fs::path findings_out;
    std::size_t detected = 0;
};

// Re-runs the detection phase against concepts from an existing findings
// file, with fresh seeded sets. Supports repeat validation runs without
// repeating the naming queries.
inline DetectStageResult run_detect(const PipelineConfig& cfg, const ClientSpec& spec,
                                    const fs::path& findings_in,
                                    const fs::path& findings_out,
                                    const fs::path& checkpoint_override = {}) {
    StagePaths p = stage_paths(cfg);
    fs::path ckpt = checkpoint_override.empty() ? p.checkpoint : checkpoint_override;
    fs::path manifest_path = resolve_manifest(cfg);
    fs::path eval_path = resolve_eval_embeddings(cfg);
    require_input(ckpt, "checkpoint");
    require_input(findings_in, "findings");
    require_input(manifest_path, "image manifest");
    require_input(eval_path, "eval embeddings");

    auto [params, meta] = load_checkpoint(ckpt);
    Matrix raw = read_matrix(eval_path);
    Matrix normalized = apply_normalization(raw, meta.norm);
    Matrix Z = activation_matrix(params, normalized, cfg.metrics.chunk_rows);
    ImageManifest manifest = ImageManifest::load(manifest_path);

    std::string mock = !spec.mock.empty() ? spec.mock : cfg.naming.mock;
    std::unique_ptr<VlmClient> owned;
    VlmClient* client = spec.injected;
    if (!client) {
        if (!mock.empty()) {
            owned = detail::make_mock(mock, cfg, &manifest);
        } else {
            owned = std::make_unique<HttpVlmClient>(cfg.naming.endpoint);
        }
        client = owned.get();
    }

    fs::create_directories(findings_out.parent_path());
    if (fs::exists(findings_out)) fs::remove(findings_out);
    TranscriptWriter transcript(findings_out.parent_path() / "transcripts_detect.jsonl");
    auto provider = manifest_image_provider(manifest);

    DetectStageResult result;
    result.findings_out = findings_out;
    for (const auto& prior : read_findings(findings_in)) {
        DetectionSet set;
        try {
            set = build_detection_set(Z, prior.neuron_id, cfg.naming.n_per_side,
                                      derive_seed(cfg.seed, "detect-rerun-set"));
        } catch (const NumericError&) {
            continue;
        }
        ConceptFinding finding = run_detection(*client, prior.concept_text, set,
                                               derive_seed(cfg.seed, "detect-rerun-order"),
                                               provider, cfg.naming.endpoint, &transcript);
        append_finding(finding, findings_out);
        ++result.detected;
    }
    return result;
}

// --- report stage -----------------------------------------------------------------------

struct ReportStageResult {
    StagePaths paths;
    std::size_t rows = 0;
    std::string rendered; // aligned text table
};

namespace detail {

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

} // namespace detail

inline ReportStageResult run_report(const PipelineConfig& cfg,
                                    const fs::path& findings_override = {}) {
    StagePaths p = stage_paths(cfg);
    fs::path findings_path = findings_override.empty() ? p.findings : findings_override;
    require_input(findings_path, "findings");

    auto ranked = rank_findings(read_findings(findings_path), cfg.naming.threshold);

    fs::create_directories(p.report_dir);
    char accuracy[16];
    {
        std::ofstream csv(p.report_csv, std::ios::trunc);
        if (!csv) throw IoFailure("run_report: cannot write " + p.report_csv.string());
        csv << "neuron,accuracy,concept\n";
        for (const auto& f : ranked) {
            std::snprintf(accuracy, sizeof(accuracy), "%.4f", f.detection_accuracy);
            csv << f.neuron_id << ',' << accuracy << ','
                << detail::csv_escape(f.concept_text) << '\n';
        }
    }

    std::string text;
    {
        char line[160];
        std::snprintf(line, sizeof(line), "%8s  %8s  %s\n", "neuron", "accuracy", "concept");
        text += line;
        text += "--------  --------  -------------------------------------------\n";
        for (const auto& f : ranked) {
            std::snprintf(line, sizeof(line), "%8zu  %8.2f  ", f.neuron_id,
                          f.detection_accuracy);
            text += line;
            text += f.concept_text;
            text += '\n';
        }
        std::snprintf(line, sizeof(line),
                      "%zu finding(s) at detection accuracy >= %.2f (duplicates removed)\n",
                      ranked.size(), cfg.naming.threshold);
        text += line;
        std::ofstream txt(p.report_txt, std::ios::trunc);
        if (!txt) throw IoFailure("run_report: cannot write " + p.report_txt.string());
        txt << text;
    }

    ReportStageResult result;
    result.paths = p;
    result.rows = ranked.size();
    result.rendered = std::move(text);
    return result;
}

} // namespace medsae::pipeline
