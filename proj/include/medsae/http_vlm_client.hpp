#pragma once

// Kept separate from vlm_client.hpp so translation units that only need mocks
// do not pay for the httplib include.

#include <chrono>
#include <cstdlib>
#include <string>

#include "medsae/errors.hpp"
#include "medsae/vlm_client.hpp"

#include "httplib.h"
#include "json.hpp"

namespace medsae {

// POSTs {base_url}/chat/completions with the wire JSON and extracts the
// answer text. One HTTP attempt per complete() call; retry policy lives in
// complete_with_retry so mocks and the real transport share it.
class HttpVlmClient : public VlmClient {
public:
    explicit HttpVlmClient(VlmEndpointConfig cfg) : cfg_(std::move(cfg)) {}

    VlmResponse complete(const VlmRequest& request) override {
        httplib::Client cli(cfg_.base_url);
        auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
        cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
        cli.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
        cli.set_write_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));

        httplib::Headers headers;
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        auto res = cli.Post("/chat/completions", headers, request.to_wire_json().dump(),
                            "application/json");
        if (!res) {
            throw EndpointUnreachable("vlm endpoint: " + httplib::to_string(res.error()));
        }
        if (res->status >= 500) {
            throw EndpointUnreachable("vlm endpoint: server status " +
                                      std::to_string(res->status));
        }
        if (res->status != 200) {
            throw MalformedResponse("vlm endpoint: status " + std::to_string(res->status) +
                                    ": " + res->body);
        }
        return {extract_text(res->body)};
    }

    // Accepts the common chat-completion body shape or a bare {"text": ...}.
    static std::string extract_text(const std::string& body) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            throw MalformedResponse("vlm endpoint: response is not JSON");
        }
        if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
            const auto& msg = j["choices"][0];
            if (msg.contains("message") && msg["message"].contains("content")) {
                const auto& content = msg["message"]["content"];
                if (content.is_string()) return content.get<std::string>();
                if (content.is_array()) {
                    std::string out;
                    for (const auto& part : content) {
                        if (part.contains("text") && part["text"].is_string()) {
                            out += part["text"].get<std::string>();
                        }
                    }
                    if (!out.empty()) return out;
                }
            }
            if (msg.contains("text") && msg["text"].is_string()) {
                return msg["text"].get<std::string>();
            }
        }
        if (j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
        throw MalformedResponse("vlm endpoint: no text field in response body");
    }

private:
    VlmEndpointConfig cfg_;
};

} // namespace medsae
