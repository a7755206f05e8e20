#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ssounds/augment.hpp"
#include "ssounds/error.hpp"

namespace ssounds {

struct CaptionServiceConfig {
    // scheme://host[:port]
    std::string base_url;
    std::string path = "/caption";
    int timeout_ms = 2000;
    int retries = 2;
};

// POSTs {"mode", "base_captions", "description"} as JSON and reads
// {"caption"} back. Any transport or decoding failure yields nullopt after
// the configured retries.
class HttpCaptionService : public CaptionService {
public:
    explicit HttpCaptionService(CaptionServiceConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.base_url.empty()) throw ConfigError("caption_service.url must not be empty");
        if (cfg_.retries < 0) throw ConfigError("caption_service.retries must be >= 0");
        if (cfg_.timeout_ms <= 0) throw ConfigError("caption_service.timeout_ms must be positive");
    }

    std::optional<std::string> transform(const std::string& caption, const std::string& description) override {
        return request("transform", {caption}, description);
    }

    std::optional<std::string> compose(const std::string& first, const std::string& second) override {
        return request("compose", {first, second}, "");
    }

    static nlohmann::json request_body(const std::string& mode, const std::vector<std::string>& captions,
                                       const std::string& description) {
        return nlohmann::json{{"mode", mode}, {"base_captions", captions}, {"description", description}};
    }

private:
    std::optional<std::string> request(const std::string& mode, const std::vector<std::string>& captions,
                                       const std::string& description) {
        const std::string body = request_body(mode, captions, description).dump();
        httplib::Client client(cfg_.base_url);
        const auto timeout = std::chrono::milliseconds(cfg_.timeout_ms);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
            auto res = client.Post(cfg_.path, body, "application/json");
            if (!res) {
                spdlog::debug("caption service attempt {}: {}", attempt + 1, httplib::to_string(res.error()));
                continue;
            }
            if (res->status != 200) {
                spdlog::debug("caption service attempt {}: HTTP {}", attempt + 1, res->status);
                continue;
            }
            try {
                const auto reply = nlohmann::json::parse(res->body);
                const auto caption = reply.at("caption").get<std::string>();
                if (!caption.empty()) return caption;
            } catch (const nlohmann::json::exception& e) {
                spdlog::debug("caption service attempt {}: bad reply: {}", attempt + 1, e.what());
            }
        }
        return std::nullopt;
    }

    CaptionServiceConfig cfg_;
};

} // namespace ssounds
