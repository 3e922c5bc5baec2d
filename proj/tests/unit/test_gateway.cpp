#include <doctest.h>

#include <httplib.h>

#include <thread>

#include <nlohmann/json.hpp>

#include "counsel/gateway.hpp"
#include "test_support.hpp"

using namespace counsel;
using namespace counsel::gateway;
using json = nlohmann::json;

namespace {

struct Running {
    test::TempDir dir;
    std::unique_ptr<Gateway> gw;
    std::unique_ptr<httplib::Client> cli;

    Running() {
        ServiceConfig cfg;
        cfg.store_root = dir.path().string();
        cfg.port = 0;
        cfg.worker_threads = 8;
        gw = std::make_unique<Gateway>(cfg);
        gw->start();
        cli = std::make_unique<httplib::Client>("127.0.0.1", gw->port());
        cli->set_read_timeout(10, 0);
    }
    ~Running() { gw->stop(); }

    std::pair<int, json> post(const std::string& path, const json& body) {
        auto r = cli->Post(path, body.dump(), "application/json");
        REQUIRE(r);
        return {r->status, r->body.empty() ? json() : json::parse(r->body)};
    }
    std::pair<int, json> get(const std::string& path) {
        auto r = cli->Get(path);
        REQUIRE(r);
        return {r->status, json::parse(r->body)};
    }
};

json session_body(const std::string& id, const std::string& modality, bool speech, bool ppg) {
    return {{"session_id", id}, {"modality", modality}, {"consent", {{"speech", speech}, {"ppg", ppg}}},
            {"client_pseudonym", "client-3"}};
}

json speech_body(std::int64_t t, std::array<double, 3> p) { return {{"t_ms", t}, {"dist", p}, {"quality", "high"}}; }

}  // namespace

TEST_CASE("health and unknown routes") {
    Running r;
    auto [st, body] = r.get("/health");
    CHECK(st == 200);
    CHECK(body["status"] == "ok");
    auto [st2, err] = r.get("/nope");
    CHECK(st2 == 404);
    CHECK(err["error"]["code"] == "not_found");
}

TEST_CASE("session lifecycle over http") {
    Running r;
    auto [st, created] = r.post("/sessions", session_body("web-1", "speech_only", true, false));
    REQUIRE(st == 201);
    CHECK(created["last_seq"] == 1);

    auto [st2, dup] = r.post("/sessions", session_body("web-1", "speech_only", true, false));
    CHECK(st2 == 409);
    CHECK(dup["error"]["code"] == "conflict");

    auto [st3, evs] = r.post("/sessions/web-1/speech", speech_body(60000, {0.7, 0.2, 0.1}));
    CHECK(st3 == 200);
    bool saw_update = false;
    for (const auto& e : evs["events"]) saw_update |= e["kind"] == "emotion_update";
    CHECK(saw_update);

    auto [st4, upd] = r.get("/sessions/web-1/updates?since_seq=0");
    CHECK(st4 == 200);
    REQUIRE(upd["updates"].size() == 1);
    CHECK(upd["updates"][0]["payload"]["label"] == "sad");
    CHECK(upd["updates"][0]["payload"]["mode"] == "speech_only");

    auto [st5, refused] = r.post("/sessions/web-1/ppg", {{"t_ms", 120000}, {"reactivity", 1.0}});
    CHECK(st5 == 403);
    CHECK(refused["error"]["code"] == "consent_violation");

    auto [st6, bad] = r.post("/sessions/web-1/speech", {{"t_ms", 120000}, {"dist", {0.5, 0.5, 0.5}}});
    CHECK(st6 == 400);
    CHECK(bad["error"]["code"] == "bad_request");

    auto [st7, missing] = r.get("/sessions/ghost/updates");
    CHECK(st7 == 404);
    CHECK(missing["error"]["code"] == "not_found");

    for (int k = 2; k <= 3; ++k) r.post("/sessions/web-1/speech", speech_body(k * 60000, {0.7, 0.2, 0.1}));
    auto [st8, alerts] = r.get("/sessions/web-1/alerts");
    CHECK(st8 == 200);
    REQUIRE(alerts["alerts"].size() == 1);
    const std::string aid = alerts["alerts"][0]["alert_id"];
    auto [st9, ack] = r.post("/sessions/web-1/alerts/" + aid + "/ack", json::object());
    CHECK(st9 == 200);
    CHECK(ack["acknowledged"] == true);
    CHECK(r.post("/sessions/web-1/alerts/nope/ack", json::object()).first == 404);

    auto [st10, summary] = r.post("/sessions/web-1/end", json::object());
    CHECK(st10 == 200);
    CHECK(summary["label_counts"]["sad"] == 3);
    CHECK(r.post("/sessions/web-1/speech", speech_body(300000, {0.1, 0.1, 0.8})).first == 409);

    json transcript = json::array({{{"t_ms", 0}, {"role", "counselor"}, {"text", "How are you?"}},
                                   {{"t_ms", 5000}, {"role", "client"}, {"text", "Tired and worried about money."}}});
    auto [st11, report] = r.post("/sessions/web-1/report", {{"transcript", transcript}});
    CHECK(st11 == 200);
    CHECK(report["sections"].size() == 5);
    CHECK(report["provenance"]["generator"] == "extractive_fallback");
}

TEST_CASE("consent is checked at creation") {
    Running r;
    auto [st, body] = r.post("/sessions", session_body("web-2", "multimodal", true, false));
    CHECK(st == 403);
    CHECK(body["error"]["code"] == "consent_violation");
    CHECK(r.post("/sessions", json::parse("[1,2]")).first == 400);
}

TEST_CASE("live stream delivers ticks as ndjson") {
    Running r;
    r.post("/sessions", session_body("web-3", "speech_only", true, false));

    std::vector<json> lines;
    std::string buffer;
    std::string last_seq_header;
    std::thread reader([&] {
        httplib::Client c("127.0.0.1", r.gw->port());
        c.set_read_timeout(10, 0);
        auto res = c.Get(
            "/sessions/web-3/stream?since_seq=1",
            [&](const httplib::Response& resp) {
                last_seq_header = resp.get_header_value("Last-Seq");
                return true;
            },
            [&](const char* data, std::size_t n) {
                buffer.append(data, n);
                for (auto pos = buffer.find('\n'); pos != std::string::npos; pos = buffer.find('\n')) {
                    lines.push_back(json::parse(buffer.substr(0, pos)));
                    buffer.erase(0, pos + 1);
                }
                return true;
            });
        CHECK(res);
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    r.post("/sessions/web-3/speech", speech_body(60000, {0.1, 0.2, 0.7}));
    r.post("/sessions/web-3/end", json::object());
    reader.join();

    CHECK(last_seq_header == "1");
    int updates = 0;
    for (const auto& l : lines) updates += l["kind"] == "emotion_update";
    CHECK(updates == 1);
    REQUIRE_FALSE(lines.empty());
    CHECK(lines.front()["seq"] == 2);
    CHECK(lines.back()["kind"] == "session_end");
}

TEST_CASE("outbox and goals endpoints") {
    Running r;
    auto put = r.cli->Put("/clients/client-9/goals", R"({"goals":["supportive"]})", "application/json");
    REQUIRE(put);
    CHECK(put->status == 200);
    auto [st, box] = r.get("/clients/client-9/outbox");
    CHECK(st == 200);
    CHECK(box["messages"].empty());
    CHECK(r.post("/clients/client-9/outbox/zzz/read", json::object()).first == 404);
}

TEST_CASE("service config layering and bind errors") {
    ServiceConfig cfg;
    cfg.merge_json({{"port", 9001}, {"store_root", "/tmp/x"}});
    CHECK(cfg.port == 9001);
    cfg.merge_env([](const char* name) -> std::optional<std::string> {
        if (std::string(name) == "COUNSEL_PORT") return "9002";
        return std::nullopt;
    });
    CHECK(cfg.port == 9002);
    CHECK(cfg.store_root == "/tmp/x");
    cfg.host = "0.0.0.0";
    CHECK_FAILS_WITH(cfg.validate(), ErrorCode::InvalidArgument);
    cfg.allow_remote = true;
    CHECK_NOTHROW(cfg.validate());

    Running first;
    test::TempDir other;
    ServiceConfig clash;
    clash.store_root = other.path().string();
    clash.port = first.gw->port();
    Gateway second(clash);
    CHECK_FAILS_WITH(second.start(), ErrorCode::PortInUse);
}

TEST_CASE("api error mapping") {
    CHECK(to_api_error(Error(ErrorCode::SessionNotFound, "x")).http_status() == 404);
    CHECK(to_api_error(Error(ErrorCode::DuplicateSession, "x")).http_status() == 409);
    CHECK(to_api_error(Error(ErrorCode::ConsentViolation, "x")).http_status() == 403);
    CHECK(to_api_error(Error(ErrorCode::SessionClosed, "x")).code == ApiErrorCode::Closed);
    CHECK(to_api_error(Error(ErrorCode::InvalidDistribution, "x")).http_status() == 400);
}
