#pragma once

#include <algorithm>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "medsae/errors.hpp"
#include "medsae/labels.hpp"
#include "medsae/matrix.hpp"
#include "medsae/rng.hpp"
#include "medsae/vlm_client.hpp"

#include "json.hpp"

namespace medsae {

// Instruction shown with the top-activating images of one neuron. Frozen:
// tests snapshot its hash so accidental edits surface.
inline constexpr std::string_view kNamingPromptTemplate =
    "You are shown a set of medical images. All of them strongly activate the "
    "same latent feature of a sparse autoencoder trained on image embeddings. "
    "Identify and summarize the shared concept underlying these images. "
    "Answer with exactly one concise line naming the concept, with no extra "
    "commentary.";

// Per-image detection question; {concept} is substituted.
inline constexpr std::string_view kDetectionPromptTemplate =
    "Concept: {concept}\n"
    "Does this image match the concept above? Answer with a single word: yes or no.";

inline std::string render_detection_prompt(std::string_view concept_text) {
    std::string out(kDetectionPromptTemplate);
    const std::string needle = "{concept}";
    auto pos = out.find(needle);
    out.replace(pos, needle.size(), std::string(concept_text));
    return out;
}

// --- image manifest -----------------------------------------------------------

// CSV mapping sample index -> image file path (header "index,path"); relative
// paths resolve against the manifest's directory.
class ImageManifest {
public:
    ImageManifest() = default;

    static ImageManifest load(const std::filesystem::path& csv_path) {
        std::ifstream in(csv_path);
        if (!in) throw IoFailure("manifest: cannot open " + csv_path.string());
        ImageManifest m;
        m.base_dir_ = csv_path.parent_path();
        std::string line;
        if (!std::getline(in, line)) throw EmptyHeader("manifest: empty file");
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto comma = line.find(',');
            if (comma == std::string::npos) {
                throw RaggedRow("manifest: line " + std::to_string(lineno) +
                                " is not index,path");
            }
            std::size_t idx = 0;
            try {
                std::size_t used = 0;
                idx = std::stoull(line.substr(0, comma), &used);
                if (used != comma) throw std::invalid_argument("trailing junk");
            } catch (const std::exception&) {
                throw RaggedRow("manifest: bad index at line " + std::to_string(lineno));
            }
            m.paths_[idx] = line.substr(comma + 1);
        }
        return m;
    }

    void add(std::size_t index, const std::filesystem::path& path) { paths_[index] = path; }

    std::filesystem::path image_path(std::size_t index) const {
        auto it = paths_.find(index);
        if (it == paths_.end()) {
            throw ImageLoadFailure("manifest: no image for sample " + std::to_string(index));
        }
        const auto& p = it->second;
        return p.is_absolute() ? p : base_dir_ / p;
    }

    std::size_t size() const { return paths_.size(); }
    const std::map<std::size_t, std::filesystem::path>& entries() const { return paths_; }

private:
    std::map<std::size_t, std::filesystem::path> paths_;
    std::filesystem::path base_dir_;
};

inline std::string load_image_base64(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageLoadFailure("cannot open image " + path.string());
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.empty()) throw ImageLoadFailure("empty image file " + path.string());
    return base64_encode(bytes);
}

// --- prompts -------------------------------------------------------------------

// Single naming request: instruction plus the images in activation order.
inline VlmRequest build_naming_prompt(const std::vector<std::filesystem::path>& images,
                                      const std::string& prompt_template,
                                      const VlmEndpointConfig& cfg,
                                      std::size_t max_images = 10,
                                      std::size_t max_payload_bytes = 16u << 20) {
    if (images.empty() || images.size() > max_images) {
        throw InvalidShape("build_naming_prompt: need between 1 and " +
                           std::to_string(max_images) + " images, got " +
                           std::to_string(images.size()));
    }
    VlmRequest req;
    req.model = cfg.model_name;
    req.temperature = cfg.temperature;
    req.text = prompt_template;
    std::size_t payload = 0;
    for (const auto& path : images) {
        std::string b64 = load_image_base64(path);
        payload += b64.size();
        if (payload > max_payload_bytes) {
            throw OversizePayload("build_naming_prompt: payload exceeds " +
                                  std::to_string(max_payload_bytes) + " bytes");
        }
        req.images_base64.push_back(std::move(b64));
    }
    return req;
}

// --- transcripts -----------------------------------------------------------------

// Line-delimited JSON log of every request/response pair; remote models are
// not bit-reproducible, so the transcript is the record of what actually ran.
class TranscriptWriter {
public:
    explicit TranscriptWriter(const std::filesystem::path& path)
        : out_(path, std::ios::app), path_(path) {
        if (!out_) throw IoFailure("transcript: cannot open " + path.string());
    }

    void record(std::string_view phase, std::size_t neuron_id, const nlohmann::json& request,
                const std::string& response, const nlohmann::json& parsed) {
        std::lock_guard<std::mutex> lock(mu_);
        nlohmann::json j;
        j["timestamp"] = iso8601_now();
        j["neuron_id"] = neuron_id;
        j["phase"] = phase;
        j["request_digest"] = digest_hex(request);
        j["request"] = request;
        j["response"] = response;
        j["parsed"] = parsed;
        out_ << j.dump() << '\n';
        out_.flush();
    }

    const std::filesystem::path& path() const { return path_; }

    static std::string digest_hex(const nlohmann::json& request) {
        std::string dumped = request.dump();
        std::uint64_t h = fnv1a64(dumped);
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    static std::string iso8601_now() {
        std::time_t t = std::time(nullptr);
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

private:
    std::ofstream out_;
    std::filesystem::path path_;
    std::mutex mu_;
};

// --- naming ---------------------------------------------------------------------

// Trimmed first non-empty line of the response; the template demands a
// one-line answer, anything after a newline is discarded.
inline std::string extract_concept_line(const std::string& response) {
    std::size_t pos = 0;
    while (pos < response.size()) {
        std::size_t eol = response.find('\n', pos);
        std::string line = response.substr(pos, eol == std::string::npos ? eol : eol - pos);
        std::size_t b = line.find_first_not_of(" \t\r");
        std::size_t e = line.find_last_not_of(" \t\r");
        if (b != std::string::npos) return line.substr(b, e - b + 1);
        if (eol == std::string::npos) break;
        pos = eol + 1;
    }
    return "";
}

inline std::string name_neuron(VlmClient& client, std::size_t neuron_id,
                               const VlmRequest& request, const VlmEndpointConfig& cfg,
                               TranscriptWriter* transcript = nullptr) {
    client.begin_naming(neuron_id);
    std::size_t attempts = 0;
    VlmResponse response = complete_with_retry(client, request, cfg.max_retries, &attempts);
    std::string concept_text = extract_concept_line(response.text);
    if (transcript) {
        transcript->record("naming", neuron_id, request.to_wire_json(), response.text,
                           concept_text.empty() ? nlohmann::json(nullptr)
                                                : nlohmann::json(concept_text));
    }
    if (concept_text.empty()) {
        throw EmptyConcept("name_neuron: empty concept for neuron " +
                           std::to_string(neuron_id));
    }
    return concept_text;
}

// --- detection sets ---------------------------------------------------------------

// Balanced evaluation set for one neuron: positives sampled from the top
// activation decile, negatives from zero-activation samples (bottom decile as
// a fallback). Every positive activation strictly exceeds every negative one.
struct DetectionSet {
    std::size_t neuron_id = 0;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    std::uint64_t seed = 0;
};

namespace detail {

// nearest-rank percentile of a copy of the column
inline double column_percentile(const Matrix& Z, std::size_t neuron, double pct) {
    std::vector<double> col(Z.rows);
    for (std::size_t i = 0; i < Z.rows; ++i) col[i] = Z(i, neuron);
    std::sort(col.begin(), col.end());
    std::size_t rank = static_cast<std::size_t>(
        std::ceil(pct / 100.0 * static_cast<double>(col.size())));
    if (rank == 0) rank = 1;
    return col[rank - 1];
}

} // namespace detail

inline DetectionSet build_detection_set(const Matrix& Z, std::size_t neuron,
                                        std::size_t n_per_side, std::uint64_t seed) {
    if (neuron >= Z.cols) throw IndexOutOfRange("build_detection_set: bad neuron index");
    const std::size_t n = Z.rows;

    const double q90 = detail::column_percentile(Z, neuron, 90.0);
    std::vector<std::size_t> pos_pool;
    for (std::size_t i = 0; i < n; ++i) {
        if (Z(i, neuron) > q90 && Z(i, neuron) > 0.0) pos_pool.push_back(i);
    }
    if (pos_pool.size() < n_per_side) {
        throw InsufficientPositives("build_detection_set: neuron " + std::to_string(neuron) +
                                    " has " + std::to_string(pos_pool.size()) +
                                    " top-decile activations, need " +
                                    std::to_string(n_per_side));
    }

    std::vector<std::size_t> neg_pool;
    for (std::size_t i = 0; i < n; ++i) {
        if (Z(i, neuron) == 0.0) neg_pool.push_back(i);
    }
    if (neg_pool.size() < n_per_side) {
        // fallback: bottom decile
        const double q10 = detail::column_percentile(Z, neuron, 10.0);
        neg_pool.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (Z(i, neuron) <= q10) neg_pool.push_back(i);
        }
    }
    if (neg_pool.size() < n_per_side) {
        throw InsufficientNegatives("build_detection_set: neuron " + std::to_string(neuron) +
                                    " lacks non-activating samples");
    }

    DetectionSet set;
    set.neuron_id = neuron;
    set.seed = seed;
    set.positives = sample_without_replacement(pos_pool, n_per_side,
                                               derive_seed(seed, "positives", neuron));
    set.negatives = sample_without_replacement(neg_pool, n_per_side,
                                               derive_seed(seed, "negatives", neuron));
    std::sort(set.positives.begin(), set.positives.end());
    std::sort(set.negatives.begin(), set.negatives.end());

    double min_pos = Z(set.positives[0], neuron);
    for (std::size_t i : set.positives) min_pos = std::min(min_pos, Z(i, neuron));
    double max_neg = Z(set.negatives[0], neuron);
    for (std::size_t i : set.negatives) max_neg = std::max(max_neg, Z(i, neuron));
    if (!(min_pos > max_neg)) {
        throw InsufficientNegatives(
            "build_detection_set: positive/negative activations overlap for neuron " +
            std::to_string(neuron));
    }
    return set;
}

// --- detection ---------------------------------------------------------------------

struct ConceptFinding {
    std::size_t neuron_id = 0;
    std::string concept_text;
    double detection_accuracy = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t true_negatives = 0;
    std::size_t false_negatives = 0;
    std::size_t unparseable = 0;
    std::vector<std::size_t> positive_set;
    std::vector<std::size_t> negative_set;
    std::string transcript_ref;
};

// Supplies the base64 payload for a sample index.
using ImageProvider = std::function<std::string(std::size_t)>;

inline ImageProvider manifest_image_provider(const ImageManifest& manifest) {
    return [&manifest](std::size_t index) {
        return load_image_base64(manifest.image_path(index));
    };
}

// One image per query in seeded-shuffled order, yes/no per query; unparseable
// answers are excluded from the confusion counts and reported. More than 20%
// unparseable aborts.
inline ConceptFinding run_detection(VlmClient& client, const std::string& concept_text,
                                    const DetectionSet& set, std::uint64_t shuffle_seed,
                                    const ImageProvider& image_of,
                                    const VlmEndpointConfig& cfg,
                                    TranscriptWriter* transcript = nullptr) {
    if (concept_text.empty()) throw EmptyConcept("run_detection: empty concept");
    client.begin_detection(set.neuron_id, set.positives);

    struct Query {
        std::size_t sample;
        bool truth;
    };
    std::vector<Query> queries;
    queries.reserve(set.positives.size() + set.negatives.size());
    for (std::size_t i : set.positives) queries.push_back({i, true});
    for (std::size_t i : set.negatives) queries.push_back({i, false});
    auto order = shuffled_indices(queries.size(), derive_seed(shuffle_seed, "detection-order",
                                                              set.neuron_id));

    ConceptFinding finding;
    finding.neuron_id = set.neuron_id;
    finding.concept_text = concept_text;
    finding.positive_set = set.positives;
    finding.negative_set = set.negatives;
    if (transcript) finding.transcript_ref = transcript->path().string();

    const std::string prompt = render_detection_prompt(concept_text);
    for (std::size_t qi : order) {
        const Query& q = queries[qi];
        VlmRequest req;
        req.model = cfg.model_name;
        req.temperature = cfg.temperature;
        req.text = prompt;
        req.images_base64.push_back(image_of(q.sample));

        VlmResponse response = complete_with_retry(client, req, cfg.max_retries);
        auto answer = parse_yes_no(response.text);
        if (transcript) {
            transcript->record("detection", set.neuron_id, req.to_wire_json(), response.text,
                               answer ? nlohmann::json(*answer ? "yes" : "no")
                                      : nlohmann::json(nullptr));
        }
        if (!answer) {
            ++finding.unparseable;
            continue;
        }
        if (q.truth && *answer) ++finding.true_positives;
        if (q.truth && !*answer) ++finding.false_negatives;
        if (!q.truth && *answer) ++finding.false_positives;
        if (!q.truth && !*answer) ++finding.true_negatives;
    }

    if (5 * finding.unparseable > queries.size()) {
        throw TooManyUnparseable("run_detection: " + std::to_string(finding.unparseable) +
                                 " of " + std::to_string(queries.size()) +
                                 " answers unparseable for neuron " +
                                 std::to_string(set.neuron_id));
    }
    const std::size_t counted = finding.true_positives + finding.true_negatives +
                                finding.false_positives + finding.false_negatives;
    finding.detection_accuracy =
        static_cast<double>(finding.true_positives + finding.true_negatives) /
        static_cast<double>(counted);
    return finding;
}

// Threshold filter, sorted by accuracy descending then neuron id ascending,
// duplicate concept texts collapsed keeping the best row.
inline std::vector<ConceptFinding> rank_findings(std::vector<ConceptFinding> findings,
                                                 double threshold) {
    std::erase_if(findings,
                  [&](const ConceptFinding& f) { return f.detection_accuracy < threshold; });
    std::sort(findings.begin(), findings.end(),
              [](const ConceptFinding& a, const ConceptFinding& b) {
                  if (a.detection_accuracy != b.detection_accuracy) {
                      return a.detection_accuracy > b.detection_accuracy;
                  }
                  return a.neuron_id < b.neuron_id;
              });
    std::set<std::string> seen;
    std::vector<ConceptFinding> out;
    for (auto& f : findings) {
        if (seen.insert(f.concept_text).second) out.push_back(std::move(f));
    }
    return out;
}

// --- findings files ------------------------------------------------------------------

inline nlohmann::json finding_to_json(const ConceptFinding& f) {
    return {{"neuron_id", f.neuron_id},
            {"concept_text", f.concept_text},
            {"detection_accuracy", f.detection_accuracy},
            {"true_positives", f.true_positives},
            {"false_positives", f.false_positives},
            {"true_negatives", f.true_negatives},
            {"false_negatives", f.false_negatives},
            {"unparseable", f.unparseable},
            {"positive_set", f.positive_set},
            {"negative_set", f.negative_set},
            {"transcript_ref", f.transcript_ref}};
}

inline ConceptFinding finding_from_json(const nlohmann::json& j) {
    ConceptFinding f;
    f.neuron_id = j.at("neuron_id").get<std::size_t>();
    f.concept_text = j.at("concept_text").get<std::string>();
    f.detection_accuracy = j.at("detection_accuracy").get<double>();
    f.true_positives = j.at("true_positives").get<std::size_t>();
    f.false_positives = j.at("false_positives").get<std::size_t>();
    f.true_negatives = j.at("true_negatives").get<std::size_t>();
    f.false_negatives = j.at("false_negatives").get<std::size_t>();
    f.unparseable = j.at("unparseable").get<std::size_t>();
    f.positive_set = j.at("positive_set").get<std::vector<std::size_t>>();
    f.negative_set = j.at("negative_set").get<std::vector<std::size_t>>();
    f.transcript_ref = j.at("transcript_ref").get<std::string>();
    return f;
}

inline std::vector<ConceptFinding> read_findings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("read_findings: cannot open " + path.string());
    std::vector<ConceptFinding> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(finding_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

inline void append_finding(const ConceptFinding& f, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoFailure("append_finding: cannot open " + path.string());
    out << finding_to_json(f).dump() << '\n';
}

} // namespace medsae
