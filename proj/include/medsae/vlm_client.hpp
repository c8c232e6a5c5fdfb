#pragma once

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "medsae/errors.hpp"
#include "medsae/rng.hpp"

#include "json.hpp"

namespace medsae {

struct VlmEndpointConfig {
    std::string base_url = "http://localhost:8000";
    std::string model_name = "medgemma";
    double timeout_s = 60.0;
    std::size_t max_retries = 3;
    double temperature = 0.0;
    std::string api_key_env = "VLM_API_KEY"; // secrets come from the environment only
};

// One chat-completion style request: an instruction followed by zero or more
// base64 images, sent as a single user message.
struct VlmRequest {
    std::string model;
    double temperature = 0.0;
    std::string text;
    std::vector<std::string> images_base64;

    nlohmann::json to_wire_json() const {
        nlohmann::json content = nlohmann::json::array();
        content.push_back({{"type", "text"}, {"text", text}});
        for (const auto& img : images_base64) {
            content.push_back({{"type", "image"}, {"base64", img}});
        }
        return {{"model", model},
                {"temperature", temperature},
                {"messages", nlohmann::json::array(
                                 {{{"role", "user"}, {"content", content}}})}};
    }
};

struct VlmResponse {
    std::string text;
};

// Minimal client surface. `begin_naming` / `begin_detection` announce which
// neuron the next requests belong to; the HTTP client ignores them, mock
// clients use them to stay omniscient without touching the wire format.
class VlmClient {
public:
    virtual ~VlmClient() = default;
    virtual VlmResponse complete(const VlmRequest& request) = 0;
    virtual void begin_naming(std::size_t /*neuron_id*/) {}
    virtual void begin_detection(std::size_t /*neuron_id*/,
                                 const std::vector<std::size_t>& /*positives*/) {}
};

// --- base64 -----------------------------------------------------------------

namespace detail {

inline constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

} // namespace detail

inline std::string base64_encode(const unsigned char* data, std::size_t n) {
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (std::size_t i = 0; i < n; i += 3) {
        std::uint32_t chunk = std::uint32_t(data[i]) << 16;
        if (i + 1 < n) chunk |= std::uint32_t(data[i + 1]) << 8;
        if (i + 2 < n) chunk |= std::uint32_t(data[i + 2]);
        out.push_back(detail::kB64Alphabet[(chunk >> 18) & 0x3f]);
        out.push_back(detail::kB64Alphabet[(chunk >> 12) & 0x3f]);
        out.push_back(i + 1 < n ? detail::kB64Alphabet[(chunk >> 6) & 0x3f] : '=');
        out.push_back(i + 2 < n ? detail::kB64Alphabet[chunk & 0x3f] : '=');
    }
    return out;
}

inline std::string base64_encode(std::string_view s) {
    return base64_encode(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

inline std::vector<unsigned char> base64_decode(std::string_view s) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<unsigned char> out;
    std::uint32_t buf = 0;
    int bits = 0;
    for (char c : s) {
        if (c == '=') break;
        int v = value_of(c);
        if (v < 0) throw FormatError("base64_decode: invalid character");
        buf = (buf << 6) | std::uint32_t(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
        }
    }
    return out;
}

// --- answer parsing ----------------------------------------------------------

// Case-insensitive leading "yes"/"no" token after trimming; anything else is
// unparseable.
inline std::optional<bool> parse_yes_no(std::string_view text) {
    std::size_t start = 0;
    while (start < text.size() &&
           std::isspace(static_cast<unsigned char>(text[start]))) {
        ++start;
    }
    std::string token;
    for (std::size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (!std::isalpha(static_cast<unsigned char>(c))) break;
        token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (token == "yes") return true;
    if (token == "no") return false;
    return std::nullopt;
}

// --- mock clients -------------------------------------------------------------

// Plays back scripted entries in order: a string is a successful response, a
// {"error": msg} object throws EndpointUnreachable for that attempt.
class ScriptedVlmClient : public VlmClient {
public:
    explicit ScriptedVlmClient(nlohmann::json entries) : entries_(std::move(entries)) {
        if (!entries_.is_array()) {
            throw ConfigError("scripted mock: expected a JSON array of entries");
        }
    }

    VlmResponse complete(const VlmRequest&) override {
        std::lock_guard<std::mutex> lock(mu_);
        ++calls_;
        if (next_ >= entries_.size()) {
            throw EndpointUnreachable("scripted mock: no entries left");
        }
        const nlohmann::json& e = entries_[next_++];
        if (e.is_string()) return {e.get<std::string>()};
        if (e.is_object() && e.contains("error")) {
            throw EndpointUnreachable("scripted mock: " + e["error"].get<std::string>());
        }
        throw ConfigError("scripted mock: entry must be a string or {\"error\": ...}");
    }

    std::size_t calls() const { return calls_; }

private:
    nlohmann::json entries_;
    std::size_t next_ = 0;
    std::size_t calls_ = 0;
    mutable std::mutex mu_;
};

// Always answers the same string; "yes"/"no" constant responders calibrate the
// detection metric (exactly 0.5 on any balanced set).
class FixedAnswerVlmClient : public VlmClient {
public:
    explicit FixedAnswerVlmClient(std::string answer) : answer_(std::move(answer)) {}
    VlmResponse complete(const VlmRequest&) override {
        std::lock_guard<std::mutex> lock(mu_);
        ++calls_;
        return {answer_};
    }
    std::size_t calls() const { return calls_; }

private:
    std::string answer_;
    std::size_t calls_ = 0;
    mutable std::mutex mu_;
};

// Seeded coin-flip yes/no; naming requests get a tagged placeholder concept.
class RandomVlmClient : public VlmClient {
public:
    explicit RandomVlmClient(std::uint64_t seed) : rng_(derive_seed(seed, "random-mock")) {}

    VlmResponse complete(const VlmRequest& request) override {
        std::lock_guard<std::mutex> lock(mu_);
        if (request.images_base64.size() != 1) {
            return {"random concept " + std::to_string(rng_.next_below(1000000))};
        }
        return {rng_.next_double() < 0.5 ? "yes" : "no"};
    }

private:
    SplitMix64 rng_;
    mutable std::mutex mu_;
};

// Ground-truth oracle: resolves each detection image back to its sample index
// by base64 digest and answers membership in the announced positive set.
class OracleVlmClient : public VlmClient {
public:
    void register_image(const std::string& base64, std::size_t sample_index) {
        index_by_digest_[fnv1a64(base64)] = sample_index;
    }

    void begin_naming(std::size_t neuron_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        current_neuron_ = neuron_id;
    }

    void begin_detection(std::size_t neuron_id,
                         const std::vector<std::size_t>& positives) override {
        std::lock_guard<std::mutex> lock(mu_);
        current_neuron_ = neuron_id;
        positives_.assign(positives.begin(), positives.end());
    }

    VlmResponse complete(const VlmRequest& request) override {
        std::lock_guard<std::mutex> lock(mu_);
        if (request.images_base64.size() != 1) {
            return {"latent concept " + std::to_string(current_neuron_)};
        }
        auto it = index_by_digest_.find(fnv1a64(request.images_base64[0]));
        if (it == index_by_digest_.end()) {
            throw MalformedResponse("oracle mock: unknown image in detection query");
        }
        bool member = false;
        for (std::size_t p : positives_) {
            if (p == it->second) {
                member = true;
                break;
            }
        }
        return {member ? "yes" : "no"};
    }

private:
    std::unordered_map<std::uint64_t, std::size_t> index_by_digest_;
    std::vector<std::size_t> positives_;
    std::size_t current_neuron_ = 0;
    mutable std::mutex mu_;
};

// Retries only transport failures; response-content errors surface at once.
// `max_retries` counts additional attempts after the first.
inline VlmResponse complete_with_retry(VlmClient& client, const VlmRequest& request,
                                       std::size_t max_retries,
                                       std::size_t* attempts_out = nullptr) {
    std::size_t attempts = 0;
    while (true) {
        ++attempts;
        try {
            VlmResponse r = client.complete(request);
            if (attempts_out) *attempts_out = attempts;
            return r;
        } catch (const EndpointUnreachable&) {
            if (attempts > max_retries) {
                if (attempts_out) *attempts_out = attempts;
                throw;
            }
        }
    }
}

} // namespace medsae
