#pragma once

// HTTP service: sessions, ingestion, live NDJSON event stream, alerts,
// reports and the follow-up outbox.

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "counsel/error.hpp"
#include "counsel/fusion.hpp"
#include "counsel/generator.hpp"

namespace counsel::gateway {

enum class ApiErrorCode { BadRequest, NotFound, Conflict, ConsentViolation, Closed, Internal };
std::string_view to_string(ApiErrorCode c);

struct ApiError {
    ApiErrorCode code = ApiErrorCode::BadRequest;
    std::string message;
    std::string detail;

    int http_status() const;
    nlohmann::json to_json() const;
};

ApiError to_api_error(const Error& e);

struct ServiceConfig {
    std::string store_root = "./counsel-store";
    std::string host = "127.0.0.1";
    int port = 8080;
    bool allow_remote = false;
    fusion::FusionConfig fusion_defaults;
    HttpGeneratorConfig generator;
    int worker_threads = 32;

    /// Keys present in `j` override the current values.
    void merge_json(const nlohmann::json& j);
    /// COUNSEL_STORE_ROOT, COUNSEL_HOST, COUNSEL_PORT, COUNSEL_GENERATOR_URL,
    /// COUNSEL_GENERATOR_MODEL, COUNSEL_GENERATOR_TIMEOUT_S, COUNSEL_GENERATOR_API_KEY.
    void merge_env(const std::function<std::optional<std::string>(const char*)>& lookup);
    /// Throws InvalidArgument for a non-loopback host without allow_remote.
    void validate() const;
};

/// File (optional) then process environment; CLI flags are applied by the caller.
ServiceConfig load_service_config(const std::string& path);
std::optional<std::string> process_env(const char* name);

class Gateway {
public:
    /// Opens the store; throws StoreUnwritable.
    explicit Gateway(ServiceConfig config);
    ~Gateway();
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    /// Binds and serves on a background thread. Throws PortInUse.
    void start();
    /// Bound port (useful with port 0).
    int port() const;
    void stop();
    /// Blocks until stop() or a fatal listen error.
    void wait();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace counsel::gateway
