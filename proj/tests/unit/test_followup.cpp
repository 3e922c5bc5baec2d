#include <doctest.h>

#include <fstream>

#include "counsel/followup.hpp"
#include "counsel/generator.hpp"
#include "test_support.hpp"

using namespace counsel;
using namespace counsel::followup;

namespace {

constexpr std::int64_t kDay = 24 * kHourMs;
constexpr std::int64_t kT0 = 1'700'000'000'000;

ClientGoals goals_for(std::vector<Goal> g, int per_week = 7) {
    ClientGoals c;
    c.client_pseudonym = "client-1";
    c.goals = std::move(g);
    c.preferences.frequency_per_week = per_week;
    return c;
}

report::StructuredReport report_with_tags() {
    report::StructuredReport r;
    r.session_id = "s1";
    r.provenance.generator = "extractive_fallback";
    for (auto id : report::kSectionOrder) r.sections.push_back({id, "x"});
    r.sections[3].text = "- breathe daily #technique:breathing\n- thought record #technique:cognitive_reframing";
    return r;
}

session::SessionSummary sad_summary() {
    session::SessionSummary s;
    s.label_counts = {6, 3, 1};
    return s;
}

bool fired(const std::vector<TriggerRule>& rules, TriggerKind k) {
    for (const auto& r : rules) {
        if (r.kind == k) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("check-in spacing follows weekly frequency with a floor") {
    CooldownConfig c;
    CHECK(*checkin_interval_ms(7, c) == 24 * kHourMs);
    CHECK(*checkin_interval_ms(14, c) == 20 * kHourMs);  // 12 h raised to the cooldown
    CHECK(*checkin_interval_ms(1, c) == 7 * kDay);
    CHECK_FALSE(checkin_interval_ms(0, c));
}

TEST_CASE("triggers respect cooldowns") {
    ClientState st;
    st.goals = goals_for({Goal::EmotionalRegulation});
    st.last_session = sad_summary();
    st.latest_report = report_with_tags();

    auto rules = check_triggers(st, kT0);
    CHECK(fired(rules, TriggerKind::DailyCheckin));
    CHECK(fired(rules, TriggerKind::LowValenceTrend));
    CHECK(fired(rules, TriggerKind::TechniqueReminder));
    for (const auto& r : rules) {
        if (r.kind == TriggerKind::TechniqueReminder) {
            CHECK(r.techniques == std::vector<std::string>{"breathing", "cognitive_reframing"});
        }
    }

    for (auto k : {TriggerKind::DailyCheckin, TriggerKind::LowValenceTrend, TriggerKind::TechniqueReminder})
        st.last_fired_ms[k] = kT0;
    CHECK(check_triggers(st, kT0 + 23 * kHourMs).empty());
    rules = check_triggers(st, kT0 + 24 * kHourMs);
    CHECK(rules.size() == 1);
    CHECK(fired(rules, TriggerKind::DailyCheckin));
    rules = check_triggers(st, kT0 + 48 * kHourMs);
    CHECK(fired(rules, TriggerKind::LowValenceTrend));
    CHECK_FALSE(fired(rules, TriggerKind::TechniqueReminder));
    CHECK(fired(check_triggers(st, kT0 + 72 * kHourMs), TriggerKind::TechniqueReminder));

    st.goals.preferences.enabled = false;
    CHECK(check_triggers(st, kT0 + 100 * kDay).empty());
}

TEST_CASE("low-valence trigger needs the regulation goal and a sad majority") {
    ClientState st;
    st.goals = goals_for({Goal::Supportive});
    st.last_session = sad_summary();
    CHECK_FALSE(fired(check_triggers(st, kT0), TriggerKind::LowValenceTrend));
    st.goals = goals_for({Goal::EmotionalRegulation});
    st.last_session->label_counts = {5, 5, 0};  // half is not a majority
    CHECK_FALSE(fired(check_triggers(st, kT0), TriggerKind::LowValenceTrend));
}

TEST_CASE("utf-8 aware truncation") {
    CHECK(utf8_length("h\xC3\xA9llo") == 5);
    const std::string two = "First sentence here. Second one is longer than the budget allows.";
    CHECK(truncate_at_sentence(two, 30) == "First sentence here.");
    CHECK(truncate_at_sentence("no sentence end just words here", 12) == "no sentence");
    CHECK(truncate_at_sentence("short", 400) == "short");
    std::string accents;
    for (int i = 0; i < 500; ++i) accents += "\xC3\xA9";
    const auto cut = truncate_at_sentence(accents, 400);
    CHECK(utf8_length(cut) == 400);
}

TEST_CASE("template messages") {
    const auto daily = select_template(TriggerKind::DailyCheckin, goals_for({Goal::EmotionalRegulation}));
    CHECK(daily.text.find("just checking in") != std::string::npos);
    CHECK(daily.text.find("\xE2\x80\x94") != std::string::npos);
    const auto reframe = select_template(TriggerKind::TechniqueReminder, goals_for({Goal::CognitiveReframing}));
    CHECK(reframe.text.find("reframing") != std::string::npos);

    const auto m = generate_followup({TriggerKind::DailyCheckin, 20, {}}, nullptr, std::nullopt,
                                     goals_for({Goal::EmotionalRegulation}), nullptr, kT0);
    CHECK(m.source == "template");
    CHECK(m.paradigm == "cbt");
    CHECK(m.message_id == "client-1-daily_checkin-" + std::to_string(kT0));
    const auto j = m.to_json();
    CHECK(j["tts_request"]["voice"] == "generic_neutral");
    CHECK(j["tts_request"]["text"] == m.text);
    CHECK(FollowupMessage::from_json(j).to_json() == j);
}

TEST_CASE("generator messages are truncated and fall back on failure") {
    const auto goals = goals_for({Goal::Supportive});
    CallbackGenerator chatty("chatty", [](const std::string&) {
        std::string s;
        for (int i = 0; i < 60; ++i) s += "Keep going. ";
        return s;
    });
    const auto m = generate_followup({TriggerKind::DailyCheckin, 20, {}}, nullptr, std::nullopt, goals, &chatty, kT0);
    CHECK(utf8_length(m.text) <= kMaxMessageCodePoints);
    CHECK(m.text.back() == '.');
    CHECK(m.paradigm == "supportive_counseling");
    CHECK(m.source != "template");

    CallbackGenerator broken("broken", [](const std::string&) -> std::string {
        fail(ErrorCode::GeneratorUnavailable, "down");
    });
    CHECK(generate_followup({TriggerKind::DailyCheckin, 20, {}}, nullptr, std::nullopt, goals, &broken, kT0).source ==
          "template");

    auto off = goals;
    off.preferences.enabled = false;
    CHECK_FAILS_WITH(generate_followup({TriggerKind::DailyCheckin, 20, {}}, nullptr, std::nullopt, off, nullptr, kT0),
                     ErrorCode::ConsentViolation);
}

TEST_CASE("outbox is bounded, idempotent and persistent") {
    test::TempDir dir;
    FollowupMessage m;
    m.client_pseudonym = "client-1";
    m.text = "hello";
    {
        Outbox box(dir.path(), 3);
        for (int i = 0; i < 3; ++i) {
            m.message_id = "m" + std::to_string(i);
            box.enqueue(m);
        }
        box.enqueue(m);  // same id again is a no-op
        CHECK(box.queued() == 3);
        m.message_id = "m3";
        CHECK_FAILS_WITH(box.enqueue(m), ErrorCode::QueueFull);
        m.text = "";
        m.message_id = "m4";
        CHECK_FAILS_WITH(box.enqueue(m), ErrorCode::InvalidArgument);
        m.text = std::string(401, 'a');
        CHECK_FAILS_WITH(box.enqueue(m), ErrorCode::InvalidArgument);

        const auto got = box.poll();
        CHECK(got.size() == 3);
        CHECK(box.queued() == 0);
        CHECK(box.poll().empty());
        CHECK(box.mark_read("m1"));
        CHECK_FALSE(box.mark_read("zzz"));
    }
    Outbox reopened(dir.path(), 3);
    const auto all = reopened.all();
    REQUIRE(all.size() == 3);
    CHECK(all[1].delivery_status == DeliveryStatus::Read);
    CHECK(all[0].delivery_status == DeliveryStatus::Delivered);
}

TEST_CASE("sweep enqueues once per cooldown") {
    test::TempDir dir;
    ClientDirectory clients(dir.path());
    clients.save_goals(goals_for({Goal::EmotionalRegulation}));
    const auto first = sweep(clients, kT0, nullptr);
    CHECK(first.errors.empty());
    REQUIRE(first.enqueued.size() == 1);  // no session yet: only the check-in
    CHECK(first.enqueued[0].trigger == TriggerKind::DailyCheckin);
    CHECK(sweep(clients, kT0 + kHourMs, nullptr).enqueued.empty());
    CHECK(sweep(clients, kT0 + kDay, nullptr).enqueued.size() == 1);
    CHECK(clients.outbox("client-1").queued() == 2);

    // a client without stored goals gets nothing
    clients.register_session("client-2", "s-9");
    CHECK(sweep(clients, kT0 + 10 * kDay, nullptr).enqueued.size() == 1);
}
