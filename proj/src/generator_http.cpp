#include <httplib.h>

#include <nlohmann/json.hpp>

#include "counsel/error.hpp"
#include "counsel/generator.hpp"

namespace counsel {

HttpTextGenerator::HttpTextGenerator(HttpGeneratorConfig config) : config_(std::move(config)) {
    if (!config_.configured()) fail(ErrorCode::InvalidArgument, "generator endpoint needs a base URL and a model");
    if (config_.base_url.rfind("http://", 0) != 0) {
        fail(ErrorCode::InvalidArgument, "generator base URL must use plain http: " + config_.base_url);
    }
}

std::string HttpTextGenerator::generate(const std::string& prompt) {
    std::lock_guard lock(mu_);
    // Split "http://host:port/prefix" into the client origin and a path prefix.
    const auto after_scheme = config_.base_url.find("://") + 3;
    const auto slash = config_.base_url.find('/', after_scheme);
    const std::string origin = config_.base_url.substr(0, slash);
    std::string prefix = slash == std::string::npos ? "" : config_.base_url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

    httplib::Client client(origin);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    client.set_write_timeout(config_.timeout_s, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    const nlohmann::json body = {{"model", config_.model},
                                 {"temperature", 0},
                                 {"messages", {{{"role", "user"}, {"content", prompt}}}}};
    auto res = client.Post(prefix + config_.path, headers, body.dump(), "application/json");
    if (!res) {
        fail(ErrorCode::GeneratorUnavailable, "generator request failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        fail(ErrorCode::GeneratorUnavailable, "generator returned HTTP " + std::to_string(res->status));
    }
    try {
        const auto j = nlohmann::json::parse(res->body);
        std::string text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        if (text.size() > config_.max_chars) text.resize(config_.max_chars);
        return text;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::GeneratorUnavailable, std::string("unreadable generator response: ") + e.what());
    }
}

}  // namespace counsel
