#include <doctest.h>

#include <fstream>
#include <sstream>
#include <thread>

#include "counsel/numeric.hpp"
#include "counsel/session.hpp"
#include "test_support.hpp"

using namespace counsel;
using namespace counsel::session;
using fusion::Emotion;

namespace {

SessionConfig config_for(const std::string& id, Modality m, Consent c = {true, true}) {
    SessionConfig cfg;
    cfg.session_id = id;
    cfg.modality = m;
    cfg.consent = c;
    cfg.client_pseudonym = "client-7";
    return cfg;
}

speech::SpeechEmotionEvent speech_at(std::int64_t t, std::array<double, 3> p) {
    speech::SpeechEmotionEvent e;
    e.t_ms = t;
    e.dist = fusion::EmotionDistribution::normalized(p);
    return e;
}

PpgFeatureBatch ppg_at(std::int64_t t, double mu, std::optional<std::array<double, 3>> p = std::nullopt) {
    PpgFeatureBatch b;
    b.t_ms = t;
    b.reactivity = mu;
    if (p) b.dist = fusion::EmotionDistribution::normalized(*p);
    return b;
}

std::size_t line_count(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

std::size_t count_kind(const std::vector<SessionEvent>& evs, EventKind k) {
    std::size_t n = 0;
    for (const auto& e : evs) n += e.kind == k;
    return n;
}

}  // namespace

TEST_CASE("session config validation") {
    CHECK_NOTHROW(config_for("s-1", Modality::Multimodal).validate());
    CHECK_FAILS_WITH(config_for("", Modality::Multimodal).validate(), ErrorCode::InvalidArgument);
    CHECK_FAILS_WITH(config_for("../etc", Modality::Multimodal).validate(), ErrorCode::InvalidArgument);
    CHECK_FAILS_WITH(config_for("clients", Modality::Multimodal).validate(), ErrorCode::InvalidArgument);
    CHECK_FAILS_WITH(config_for("s", Modality::Multimodal, {true, false}).validate(), ErrorCode::ConsentViolation);
    CHECK_FAILS_WITH(config_for("s", Modality::SpeechOnly, {false, true}).validate(), ErrorCode::ConsentViolation);
    CHECK_NOTHROW(config_for("s", Modality::PpgOnly, {false, true}).validate());

    const auto cfg = config_for("s-1", Modality::SpeechOnly, {true, false});
    const auto back = SessionConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(cfg.permissions().speech);
    CHECK_FALSE(cfg.permissions().ppg);
}

TEST_CASE("speech-only session logs, alerts and summarises") {
    test::TempDir dir;
    SessionStore store(dir.path());
    auto s = store.create(config_for("s-speech", Modality::SpeechOnly, {true, false}));
    CHECK(s->last_seq() == 1);

    std::vector<SessionEvent> all;
    for (int k = 1; k <= 4; ++k) {
        auto evs = s->submit_speech(speech_at(k * 60000, {0.7, 0.2, 0.1}));
        all.insert(all.end(), evs.begin(), evs.end());
    }
    CHECK(count_kind(all, EventKind::EmotionUpdate) == 4);
    CHECK(count_kind(all, EventKind::Alert) == 1);
    REQUIRE(s->alerts().size() == 1);
    const auto alert_id = s->alerts()[0].alert_id;

    SUBCASE("consent is enforced on ingestion") {
        const auto before = line_count(s->dir() / "events.jsonl");
        CHECK_FAILS_WITH(s->submit_ppg(ppg_at(300000, 1.0)), ErrorCode::ConsentViolation);
        CHECK(line_count(s->dir() / "events.jsonl") == before);
    }
    SUBCASE("late and duplicate evidence") {
        CHECK_FAILS_WITH(s->submit_speech(speech_at(120000, {1, 1, 1})), ErrorCode::InvalidArgument);
    }
    SUBCASE("acknowledgement is idempotent") {
        CHECK(s->acknowledge(alert_id, 250000));
        CHECK_FALSE(s->acknowledge(alert_id, 260000));
        CHECK(s->alerts()[0].acknowledged);
        CHECK_FAILS_WITH(s->acknowledge("nope", 1), ErrorCode::AlertNotFound);
    }
    SUBCASE("end writes the summary and closes") {
        const auto sum = s->end_session();
        CHECK(sum.count(Emotion::Sad) == 4);
        CHECK(sum.sustained_alerts == 1);
        CHECK(sum.duration_ms == 180000);
        CHECK(std::filesystem::exists(s->dir() / "summary.json"));
        CHECK(s->closed());
        CHECK(s->events_since(0).back().kind == EventKind::SessionEnd);
        CHECK_FAILS_WITH(s->submit_speech(speech_at(600000, {1, 1, 1})), ErrorCode::SessionClosed);
        CHECK_FAILS_WITH(s->acknowledge(alert_id, 1), ErrorCode::SessionClosed);
    }
}

TEST_CASE("multimodal ticks wait for both modalities") {
    test::TempDir dir;
    SessionStore store(dir.path());
    auto s = store.create(config_for("s-mm", Modality::Multimodal));
    CHECK(s->submit_ppg(ppg_at(60000, 1.0, {{0.1, 0.8, 0.1}})).empty());
    const auto evs = s->submit_speech(speech_at(60000, {0.2, 0.2, 0.6}));
    REQUIRE(count_kind(evs, EventKind::EmotionUpdate) == 1);
    const auto u = s->updates().back();
    CHECK(u.mode == fusion::FusionMode::Multimodal);
    // 0.7 * speech + 0.3 * ppg
    CHECK(u.dist->neutral() == doctest::Approx(0.7 * 0.2 + 0.3 * 0.8));
    CHECK(u.label == Emotion::Positive);

    // a ppg batch arriving alone is ticked once the next interval begins
    CHECK(s->submit_ppg(ppg_at(120000, 2.0, {{0.1, 0.8, 0.1}})).empty());
    const auto next = s->submit_speech(speech_at(180000, {0.2, 0.2, 0.6}));
    CHECK(count_kind(next, EventKind::EmotionUpdate) == 1);
    CHECK(s->updates().back().mode == fusion::FusionMode::PpgOnly);
    s->flush();
    CHECK(s->updates().size() == 3);
}

TEST_CASE("classifier-free ppg batches still drive the score") {
    test::TempDir dir;
    SessionStore store(dir.path());
    auto s = store.create(config_for("s-ppg", Modality::PpgOnly, {false, true}));
    double mu = 1.0;
    for (int k = 1; k <= 6; ++k) s->submit_ppg(ppg_at(k * 60000, mu *= 1.5));
    // five rises of +1/3 each add lambda * m = 0.25
    CHECK(s->state().s_p == doctest::Approx(1.25));
    CHECK(s->updates().back().label == Emotion::Positive);
    CHECK_FAILS_WITH(s->submit_ppg(ppg_at(420000, -1.0)), ErrorCode::NegativeMu);
    CHECK_FAILS_WITH(s->submit_speech(speech_at(480000, {1, 1, 1})), ErrorCode::ConsentViolation);
}

TEST_CASE("log replays identically and survives restore") {
    test::TempDir dir;
    {
        SessionStore store(dir.path());
        auto s = store.create(config_for("s-rep", Modality::Multimodal));
        Rng rng(2);
        for (int k = 1; k <= 30; ++k) {
            const std::array<double, 3> p{rng.uniform(), rng.uniform(), rng.uniform()};
            s->submit_ppg(ppg_at(k * 60000, rng.uniform(0.2, 2.0), p));
            s->submit_speech(speech_at(k * 60000, {rng.uniform(), rng.uniform(), rng.uniform()}));
        }
        CHECK(s->updates().size() == 30);
    }
    const auto log = read_log(dir / "s-rep" / "events.jsonl");
    const auto check = verify_replay(log);
    CHECK(check.identical);
    CHECK(check.recorded_updates == 30);

    SessionStore again(dir.path());
    auto s = again.get("s-rep");
    CHECK(s->updates().size() == 30);
    CHECK(s->last_seq() == log.back().seq);
    s->submit_speech(speech_at(31 * 60000, {1, 0, 0}));
    s->submit_ppg(ppg_at(31 * 60000, 1.0, {{1, 1, 1}}));
    CHECK(s->updates().size() == 31);
    CHECK(verify_replay(read_log(dir / "s-rep" / "events.jsonl")).identical);
}

TEST_CASE("corrupt logs are reported") {
    test::TempDir dir;
    {
        SessionStore store(dir.path());
        auto s = store.create(config_for("s-bad", Modality::SpeechOnly, {true, false}));
        for (int k = 1; k <= 3; ++k) s->submit_speech(speech_at(k * 60000, {0.1, 0.1, 0.8}));
    }
    const auto path = dir / "s-bad" / "events.jsonl";
    std::vector<std::string> lines;
    {
        std::ifstream in(path);
        for (std::string l; std::getline(in, l);) lines.push_back(l);
    }
    SUBCASE("gap in seq") {
        std::ofstream out(path, std::ios::trunc);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (i != 2) out << lines[i] << '\n';
        }
        out.close();
        CHECK_FAILS_WITH(read_log(path), ErrorCode::CorruptLog);
    }
    SUBCASE("garbage line") {
        std::ofstream(path, std::ios::app) << "{not json\n";
        CHECK_FAILS_WITH(read_log(path), ErrorCode::CorruptLog);
    }
    SUBCASE("tampered update") {
        auto j = nlohmann::json::parse(lines.back());
        REQUIRE(j["kind"] == "emotion_update");
        j["payload"]["label"] = "sad";
        lines.back() = j.dump();
        std::ofstream out(path, std::ios::trunc);
        for (const auto& l : lines) out << l << '\n';
        out.close();
        const auto check = verify_replay(read_log(path));
        CHECK_FALSE(check.identical);
        CHECK_FALSE(check.mismatches.empty());
    }
}

TEST_CASE("store guards ids") {
    test::TempDir dir;
    SessionStore store(dir.path());
    store.create(config_for("dup", Modality::SpeechOnly, {true, false}));
    CHECK_FAILS_WITH(store.create(config_for("dup", Modality::SpeechOnly, {true, false})), ErrorCode::DuplicateSession);
    CHECK_FAILS_WITH(store.get("missing"), ErrorCode::SessionNotFound);
    CHECK_FAILS_WITH(store.get("../dup"), ErrorCode::SessionNotFound);
    CHECK_FAILS_WITH(store.create(config_for("x", Modality::Multimodal, {true, false})), ErrorCode::ConsentViolation);
    CHECK_FALSE(std::filesystem::exists(dir / "x"));
    CHECK(store.list() == std::vector<std::string>{"dup"});
}

TEST_CASE("raw ppg is kept only in debug mode") {
    test::TempDir dir;
    SessionStore store(dir.path());
    const std::vector<ppg::PpgSample> raw{{0, 1.0}, {10, 2.0}};
    auto a = store.create(config_for("plain", Modality::PpgOnly, {false, true}));
    a->retain_raw_ppg(raw);
    CHECK_FALSE(std::filesystem::exists(a->dir() / "raw_ppg.jsonl"));
    auto cfg = config_for("debug", Modality::PpgOnly, {false, true});
    cfg.debug_retain_raw = true;
    auto b = store.create(cfg);
    b->retain_raw_ppg(raw);
    CHECK(line_count(b->dir() / "raw_ppg.jsonl") == 2);
}

TEST_CASE("waiters wake on new events") {
    test::TempDir dir;
    SessionStore store(dir.path());
    auto s = store.create(config_for("wait", Modality::SpeechOnly, {true, false}));
    const auto start = s->last_seq();
    std::thread producer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        s->submit_speech(speech_at(60000, {0.1, 0.1, 0.8}));
    });
    const auto evs = s->wait_for_events(start, std::chrono::milliseconds(5000));
    producer.join();
    REQUIRE_FALSE(evs.empty());
    CHECK(evs.front().seq == start + 1);
    CHECK(s->wait_for_events(s->last_seq(), std::chrono::milliseconds(20)).empty());
}

TEST_CASE("summary json and dominant label") {
    SessionSummary s;
    s.label_counts = {2, 2, 1};
    CHECK(s.dominant_label() == Emotion::Sad);
    s.label_counts = {0, 0, 0};
    CHECK(s.dominant_label() == Emotion::Neutral);
    s.label_counts = {1, 0, 3};
    s.session_id = "x";
    const auto back = SessionSummary::from_json(s.to_json());
    CHECK(back.to_json() == s.to_json());
    CHECK(s.to_json()["label_counts"]["positive"] == 3);
}
