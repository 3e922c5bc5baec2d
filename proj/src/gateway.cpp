#include "counsel/gateway.hpp"

#include <httplib.h>
#include <sys/socket.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "counsel/followup.hpp"
#include "counsel/pipeline.hpp"
#include "counsel/report.hpp"
#include "counsel/session.hpp"

namespace counsel::gateway {

using json = nlohmann::json;

std::string_view to_string(ApiErrorCode c) {
    switch (c) {
        case ApiErrorCode::BadRequest: return "bad_request";
        case ApiErrorCode::NotFound: return "not_found";
        case ApiErrorCode::Conflict: return "conflict";
        case ApiErrorCode::ConsentViolation: return "consent_violation";
        case ApiErrorCode::Closed: return "closed";
        case ApiErrorCode::Internal: return "internal";
    }
    return "internal";
}

int ApiError::http_status() const {
    switch (code) {
        case ApiErrorCode::BadRequest: return 400;
        case ApiErrorCode::NotFound: return 404;
        case ApiErrorCode::Conflict: return 409;
        case ApiErrorCode::ConsentViolation: return 403;
        case ApiErrorCode::Closed: return 409;
        case ApiErrorCode::Internal: return 500;
    }
    return 500;
}

json ApiError::to_json() const {
    return {{"error", {{"code", to_string(code)}, {"message", message}, {"detail", detail}}}};
}

ApiError to_api_error(const Error& e) {
    ApiError a;
    a.message = e.what();
    a.detail = std::string(counsel::to_string(e.code()));
    switch (e.code()) {
        case ErrorCode::SessionNotFound:
        case ErrorCode::AlertNotFound: a.code = ApiErrorCode::NotFound; break;
        case ErrorCode::DuplicateSession: a.code = ApiErrorCode::Conflict; break;
        case ErrorCode::ConsentViolation: a.code = ApiErrorCode::ConsentViolation; break;
        case ErrorCode::SessionClosed: a.code = ApiErrorCode::Closed; break;
        case ErrorCode::IoError:
        case ErrorCode::CorruptLog:
        case ErrorCode::StoreUnwritable:
        case ErrorCode::PortInUse: a.code = ApiErrorCode::Internal; break;
        case ErrorCode::QueueFull: a.code = ApiErrorCode::Conflict; break;
        default: a.code = ApiErrorCode::BadRequest; break;
    }
    return a;
}

// --- config --------------------------------------------------------------------

void ServiceConfig::merge_json(const json& j) {
    try {
        store_root = j.value("store_root", store_root);
        host = j.value("host", host);
        port = j.value("port", port);
        allow_remote = j.value("allow_remote", allow_remote);
        worker_threads = j.value("worker_threads", worker_threads);
        if (j.contains("fusion")) fusion_defaults = session::fusion_config_from_json(j["fusion"], fusion_defaults);
        if (j.contains("generator")) {
            const auto& g = j["generator"];
            generator.base_url = g.value("base_url", generator.base_url);
            generator.model = g.value("model", generator.model);
            generator.path = g.value("path", generator.path);
            generator.timeout_s = g.value("timeout_s", generator.timeout_s);
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("service config: ") + e.what());
    }
}

void ServiceConfig::merge_env(const std::function<std::optional<std::string>(const char*)>& lookup) {
    auto to_int = [](const std::string& name, const std::string& v) {
        try {
            std::size_t used = 0;
            const int n = std::stoi(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return n;
        } catch (const std::exception&) {
            fail(ErrorCode::InvalidArgument, name + " must be an integer, got '" + v + "'");
        }
    };
    if (auto v = lookup("COUNSEL_STORE_ROOT")) store_root = *v;
    if (auto v = lookup("COUNSEL_HOST")) host = *v;
    if (auto v = lookup("COUNSEL_PORT")) port = to_int("COUNSEL_PORT", *v);
    if (auto v = lookup("COUNSEL_GENERATOR_URL")) generator.base_url = *v;
    if (auto v = lookup("COUNSEL_GENERATOR_MODEL")) generator.model = *v;
    if (auto v = lookup("COUNSEL_GENERATOR_TIMEOUT_S")) generator.timeout_s = to_int("COUNSEL_GENERATOR_TIMEOUT_S", *v);
    if (auto v = lookup("COUNSEL_GENERATOR_API_KEY")) generator.api_key = *v;
}

void ServiceConfig::validate() const {
    const bool loopback = host == "127.0.0.1" || host == "localhost" || host == "::1";
    if (!loopback && !allow_remote) {
        fail(ErrorCode::InvalidArgument, "binding to '" + host + "' requires --allow-remote");
    }
    if (port < 0 || port > 65535) fail(ErrorCode::InvalidArgument, "port out of range");
    fusion_defaults.validate();
}

std::optional<std::string> process_env(const char* name) {
    const char* v = std::getenv(name);
    if (!v) return std::nullopt;
    return std::string(v);
}

ServiceConfig load_service_config(const std::string& path) {
    ServiceConfig c;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) fail(ErrorCode::IoError, "cannot open config '" + path + "'");
        try {
            c.merge_json(json::parse(in));
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, path + ": " + e.what());
        }
    }
    c.merge_env(process_env);
    return c;
}

// --- service -------------------------------------------------------------------

struct Gateway::Impl {
    ServiceConfig config;
    session::SessionStore store;
    followup::ClientDirectory clients;
    std::unique_ptr<TextGenerator> generator;
    httplib::Server server;
    std::thread thread;
    std::atomic<bool> stopping{false};
    int bound_port = 0;

    explicit Impl(ServiceConfig c) : config(std::move(c)), store(config.store_root), clients(config.store_root) {
        if (config.generator.configured()) generator = std::make_unique<HttpTextGenerator>(config.generator);
        routes();
    }

    static void send_json(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, const ApiError& e) { send_json(res, e.http_status(), e.to_json()); }

    template <typename F>
    static httplib::Server::Handler guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const Error& e) {
                send_error(res, to_api_error(e));
            } catch (const json::exception& e) {
                send_error(res, {ApiErrorCode::BadRequest, "malformed request body", e.what()});
            } catch (const std::exception& e) {
                send_error(res, {ApiErrorCode::Internal, e.what(), ""});
            }
        };
    }

    static json body_json(const httplib::Request& req) {
        if (req.body.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
        return json::parse(req.body);
    }

    static std::int64_t int_param(const httplib::Request& req, const std::string& name, std::int64_t fallback) {
        if (!req.has_param(name)) return fallback;
        const auto v = req.get_param_value(name);
        try {
            std::size_t used = 0;
            const auto n = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return n;
        } catch (const std::exception&) {
            fail(ErrorCode::InvalidArgument, name + " must be an integer");
        }
    }

    static json events_json(const std::vector<session::SessionEvent>& events) {
        json out = json::array();
        for (const auto& e : events) out.push_back(e.to_json());
        return out;
    }

    void routes() {
        server.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, {{"status", "ok"}});
        }));

        server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto body = body_json(req);
            auto config = session::SessionConfig::from_json(body);
            if (!body.contains("fusion")) config.fusion = this->config.fusion_defaults;
            auto s = store.create(config);
            send_json(res, 201, {{"session_id", config.session_id}, {"config", config.to_json()}, {"last_seq", s->last_seq()}});
        }));

        server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto s = store.get(req.matches[1]);
            const auto st = s->state();
            send_json(res, 200,
                      {{"session_id", s->config().session_id},
                       {"config", s->config().to_json()},
                       {"closed", s->closed()},
                       {"last_seq", s->last_seq()},
                       {"s_p", st.s_p},
                       {"tick", st.tick}});
        }));

        server.Post(R"(/sessions/([^/]+)/end)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto s = store.get(req.matches[1]);
            const auto summary = s->end_session();
            if (!s->config().client_pseudonym.empty()) {
                clients.register_session(s->config().client_pseudonym, s->config().session_id);
            }
            send_json(res, 200, summary.to_json());
        }));

        server.Post(R"(/sessions/([^/]+)/ppg)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto s = store.get(req.matches[1]);
            auto batch = session::PpgFeatureBatch::from_json(body_json(req));
            send_json(res, 200, {{"events", events_json(s->submit_ppg(std::move(batch)))}});
        }));

        server.Post(R"(/sessions/([^/]+)/speech)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto s = store.get(req.matches[1]);
            const auto event = speech::speech_event_from_json(body_json(req));
            send_json(res, 200, {{"events", events_json(s->submit_speech(event))}});
        }));

        server.Get(R"(/sessions/([^/]+)/updates)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto s = store.get(req.matches[1]);
            const auto since = int_param(req, "since_seq", 0);
            json updates = json::array();
            for (const auto& e : s->events_since(since)) {
                if (e.kind == session::EventKind::EmotionUpdate) updates.push_back(e.to_json());
            }
            send_json(res, 200, {{"last_seq", s->last_seq()}, {"updates", updates}});
        }));

        server.Get(R"(/sessions/([^/]+)/alerts)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto s = store.get(req.matches[1]);
            json alerts = json::array();
            for (const auto& a : s->alerts()) alerts.push_back(fusion::to_json(a));
            send_json(res, 200, {{"alerts", alerts}});
        }));

        server.Post(R"(/sessions/([^/]+)/alerts/([^/]+)/ack)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        auto s = store.get(req.matches[1]);
                        const auto body = body_json(req);
                        std::int64_t t_ms = 0;
                        if (const auto last = s->events_since(s->last_seq() - 1); !last.empty()) t_ms = last.back().t_ms;
                        t_ms = body.value("t_ms", t_ms);
                        const auto event = s->acknowledge(req.matches[2], t_ms);
                        send_json(res, 200,
                                  {{"alert_id", std::string(req.matches[2])},
                                   {"acknowledged", true},
                                   {"seq", event ? json(event->seq) : json(nullptr)}});
                    }));

        server.Post(R"(/sessions/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            const auto body = body_json(req);
            std::optional<std::vector<report::TranscriptTurn>> transcript;
            if (body.contains("transcript")) {
                std::string lines;
                for (const auto& t : body["transcript"]) lines += t.dump() + "\n";
                transcript = report::parse_transcript_jsonl(lines);
            } else if (body.contains("transcript_jsonl")) {
                transcript = report::parse_transcript_jsonl(body["transcript_jsonl"].get<std::string>());
            }
            const auto r = pipeline::write_session_report(store, clients, id, std::move(transcript), generator.get());
            send_json(res, 200, r.to_json());
        }));

        server.Get(R"(/sessions/([^/]+)/stream)", [this](const httplib::Request& req, httplib::Response& res) {
            std::shared_ptr<session::Session> s;
            std::int64_t cursor = 0;
            try {
                s = store.get(req.matches[1]);
                cursor = int_param(req, "since_seq", 0);
                if (req.has_header("Last-Seq")) {
                    const auto v = req.get_header_value("Last-Seq");
                    try {
                        cursor = std::stoll(v);
                    } catch (const std::exception&) {
                        fail(ErrorCode::InvalidArgument, "Last-Seq must be an integer");
                    }
                }
            } catch (const Error& e) {
                send_error(res, to_api_error(e));
                return;
            }
            res.set_header("Last-Seq", std::to_string(s->last_seq()));
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "application/x-ndjson", [this, s, cursor](std::size_t, httplib::DataSink& sink) mutable {
                    if (stopping || !sink.is_writable()) return false;
                    // Each subscriber reads the log from its own cursor, so a slow
                    // consumer never blocks the writer and resumes where it left off.
                    const auto events = s->wait_for_events(cursor, std::chrono::milliseconds(200));
                    for (const auto& e : events) {
                        const std::string line = e.to_json().dump() + "\n";
                        if (!sink.write(line.data(), line.size())) return false;
                        cursor = e.seq;
                    }
                    if (events.empty() && s->closed()) sink.done();
                    return true;
                });
        });

        server.Get(R"(/clients/([^/]+)/outbox)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            json messages = json::array();
            for (const auto& m : clients.outbox(req.matches[1]).poll()) messages.push_back(m.to_json());
            send_json(res, 200, {{"messages", messages}});
        }));

        server.Post(R"(/clients/([^/]+)/outbox/([^/]+)/read)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        if (!clients.outbox(req.matches[1]).mark_read(req.matches[2])) {
                            send_error(res, {ApiErrorCode::NotFound, "no message '" + std::string(req.matches[2]) + "'", ""});
                            return;
                        }
                        send_json(res, 200, {{"message_id", std::string(req.matches[2])}, {"delivery_status", "read"}});
                    }));

        server.Put(R"(/clients/([^/]+)/goals)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto body = body_json(req);
            body["client_pseudonym"] = std::string(req.matches[1]);
            const auto goals = followup::ClientGoals::from_json(body);
            clients.save_goals(goals);
            send_json(res, 200, goals.to_json());
        }));

        server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
            ApiError e{res.status == 404 ? ApiErrorCode::NotFound : ApiErrorCode::BadRequest,
                       "no route for " + req.method + " " + req.path, ""};
            res.set_content(e.to_json().dump(), "application/json");
            return httplib::Server::HandlerResponse::Handled;
        });

        const int threads = std::max(4, config.worker_threads);
        server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
        // SO_REUSEPORT would let a second instance share the port silently.
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
    }
};

Gateway::Gateway(ServiceConfig config) {
    config.validate();
    impl_ = std::make_unique<Impl>(std::move(config));
}

Gateway::~Gateway() { stop(); }

void Gateway::start() {
    auto& i = *impl_;
    if (i.config.port == 0) {
        i.bound_port = i.server.bind_to_any_port(i.config.host);
        if (i.bound_port <= 0) fail(ErrorCode::PortInUse, "cannot bind " + i.config.host);
    } else {
        if (!i.server.bind_to_port(i.config.host, i.config.port)) {
            fail(ErrorCode::PortInUse, "port " + std::to_string(i.config.port) + " on " + i.config.host + " is in use");
        }
        i.bound_port = i.config.port;
    }
    i.thread = std::thread([&i] { i.server.listen_after_bind(); });
    i.server.wait_until_ready();
}

int Gateway::port() const { return impl_->bound_port; }

void Gateway::stop() {
    if (!impl_) return;
    impl_->stopping = true;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

void Gateway::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace counsel::gateway
