#include "counsel/followup.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "counsel/error.hpp"

namespace counsel::followup {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

void write_atomic(const fs::path& path, const std::string& text) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out || !(out << text) || !out.flush()) fail(ErrorCode::IoError, "cannot write '" + tmp.string() + "'");
    }
    fs::rename(tmp, path, ec);
    if (ec) fail(ErrorCode::IoError, "cannot rename '" + tmp.string() + "': " + ec.message());
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n\"");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n\"");
    return std::string(s.substr(b, e - b + 1));
}

bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

}  // namespace

// --- enums -------------------------------------------------------------------

std::string_view to_string(Goal g) {
    switch (g) {
        case Goal::EmotionalRegulation: return "emotional_regulation";
        case Goal::CognitiveReframing: return "cognitive_reframing";
        case Goal::Supportive: return "supportive";
    }
    return "supportive";
}

Goal parse_goal(std::string_view name) {
    for (auto g : {Goal::EmotionalRegulation, Goal::CognitiveReframing, Goal::Supportive}) {
        if (to_string(g) == name) return g;
    }
    fail(ErrorCode::ParseError, "unknown goal '" + std::string(name) + "'");
}

std::string_view to_string(Tone t) { return t == Tone::Warm ? "warm" : "neutral"; }

Tone parse_tone(std::string_view name) {
    if (name == "warm") return Tone::Warm;
    if (name == "neutral") return Tone::Neutral;
    fail(ErrorCode::ParseError, "unknown tone '" + std::string(name) + "'");
}

std::string_view to_string(TriggerKind k) {
    switch (k) {
        case TriggerKind::DailyCheckin: return "daily_checkin";
        case TriggerKind::LowValenceTrend: return "low_valence_trend";
        case TriggerKind::TechniqueReminder: return "technique_reminder";
    }
    return "daily_checkin";
}

TriggerKind parse_trigger(std::string_view name) {
    for (auto k : {TriggerKind::DailyCheckin, TriggerKind::LowValenceTrend, TriggerKind::TechniqueReminder}) {
        if (to_string(k) == name) return k;
    }
    fail(ErrorCode::ParseError, "unknown trigger '" + std::string(name) + "'");
}

std::string_view to_string(DeliveryStatus s) {
    switch (s) {
        case DeliveryStatus::Queued: return "queued";
        case DeliveryStatus::Delivered: return "delivered";
        case DeliveryStatus::Read: return "read";
    }
    return "queued";
}

DeliveryStatus parse_delivery_status(std::string_view name) {
    for (auto s : {DeliveryStatus::Queued, DeliveryStatus::Delivered, DeliveryStatus::Read}) {
        if (to_string(s) == name) return s;
    }
    fail(ErrorCode::ParseError, "unknown delivery status '" + std::string(name) + "'");
}

// --- goals -------------------------------------------------------------------

bool ClientGoals::has(Goal g) const { return std::find(goals.begin(), goals.end(), g) != goals.end(); }

json ClientGoals::to_json() const {
    json gs = json::array();
    for (auto g : goals) gs.push_back(to_string(g));
    return {{"client_pseudonym", client_pseudonym},
            {"goals", gs},
            {"preferences",
             {{"frequency_per_week", preferences.frequency_per_week},
              {"tone", to_string(preferences.tone)},
              {"enabled", preferences.enabled}}}};
}

ClientGoals ClientGoals::from_json(const json& j) {
    try {
        ClientGoals c;
        c.client_pseudonym = j.at("client_pseudonym").get<std::string>();
        for (const auto& g : j.value("goals", json::array())) c.goals.push_back(parse_goal(g.get<std::string>()));
        if (j.contains("preferences")) {
            const auto& p = j["preferences"];
            c.preferences.frequency_per_week = p.value("frequency_per_week", c.preferences.frequency_per_week);
            c.preferences.tone = parse_tone(p.value("tone", std::string("warm")));
            c.preferences.enabled = p.value("enabled", true);
        }
        if (c.preferences.frequency_per_week < 0) fail(ErrorCode::ParseError, "frequency_per_week must be >= 0");
        return c;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("client goals: ") + e.what());
    }
}

// --- triggers ----------------------------------------------------------------

double CooldownConfig::hours(TriggerKind k) const {
    switch (k) {
        case TriggerKind::DailyCheckin: return daily_checkin_hours;
        case TriggerKind::LowValenceTrend: return low_valence_trend_hours;
        case TriggerKind::TechniqueReminder: return technique_reminder_hours;
    }
    return daily_checkin_hours;
}

json ClientState::trigger_state_json() const {
    json j = json::object();
    for (const auto& [k, t] : last_fired_ms) j[std::string(to_string(k))] = t;
    return {{"last_fired_ms", j}};
}

void ClientState::load_trigger_state(const json& j) {
    last_fired_ms.clear();
    const json fired = j.value("last_fired_ms", json::object());
    for (const auto& [k, v] : fired.items()) {
        last_fired_ms[parse_trigger(k)] = v.get<std::int64_t>();
    }
}

std::optional<std::int64_t> checkin_interval_ms(int frequency_per_week, const CooldownConfig& cooldowns) {
    if (frequency_per_week <= 0) return std::nullopt;
    const double week_ms = 7.0 * 24.0 * static_cast<double>(kHourMs);
    const double spacing = week_ms / frequency_per_week;
    const double cooldown = cooldowns.daily_checkin_hours * static_cast<double>(kHourMs);
    return static_cast<std::int64_t>(std::max(spacing, cooldown));
}

bool majority_sad(const session::SessionSummary& summary) {
    const int total = summary.label_counts[0] + summary.label_counts[1] + summary.label_counts[2];
    return total > 0 && 2 * summary.label_counts[0] > total;
}

std::vector<std::string> technique_tags(const report::StructuredReport& r) {
    std::vector<std::string> out;
    const auto* s = r.section(report::SectionId::FollowupSuggestions);
    if (!s) return out;
    constexpr std::string_view tag = "#technique:";
    for (std::size_t at = s->text.find(tag); at != std::string::npos; at = s->text.find(tag, at + 1)) {
        std::size_t end = at + tag.size();
        while (end < s->text.size() && (std::isalnum(static_cast<unsigned char>(s->text[end])) || s->text[end] == '_' ||
                                        s->text[end] == '-')) {
            ++end;
        }
        std::string name = s->text.substr(at + tag.size(), end - at - tag.size());
        if (!name.empty() && std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
    }
    return out;
}

std::vector<TriggerRule> check_triggers(const ClientState& state, std::int64_t now_ms, const CooldownConfig& cooldowns) {
    std::vector<TriggerRule> fired;
    if (!state.goals.preferences.enabled) return fired;

    auto cooled = [&](TriggerKind k, std::int64_t spacing_ms) {
        auto it = state.last_fired_ms.find(k);
        return it == state.last_fired_ms.end() || now_ms - it->second >= spacing_ms;
    };
    auto cooldown_ms = [&](TriggerKind k) { return static_cast<std::int64_t>(cooldowns.hours(k) * kHourMs); };

    if (auto interval = checkin_interval_ms(state.goals.preferences.frequency_per_week, cooldowns)) {
        if (cooled(TriggerKind::DailyCheckin, *interval)) {
            fired.push_back({TriggerKind::DailyCheckin, cooldowns.daily_checkin_hours, {}});
        }
    }
    if (state.last_session && majority_sad(*state.last_session) && state.goals.has(Goal::EmotionalRegulation) &&
        cooled(TriggerKind::LowValenceTrend, cooldown_ms(TriggerKind::LowValenceTrend))) {
        fired.push_back({TriggerKind::LowValenceTrend, cooldowns.low_valence_trend_hours, {}});
    }
    if (state.latest_report) {
        auto tags = technique_tags(*state.latest_report);
        if (!tags.empty() && cooled(TriggerKind::TechniqueReminder, cooldown_ms(TriggerKind::TechniqueReminder))) {
            fired.push_back({TriggerKind::TechniqueReminder, cooldowns.technique_reminder_hours, std::move(tags)});
        }
    }
    return fired;
}

// --- messages ----------------------------------------------------------------

json FollowupMessage::to_json() const {
    return {{"message_id", message_id},
            {"client_pseudonym", client_pseudonym},
            {"text", text},
            {"created_at_ms", created_at_ms},
            {"trigger", to_string(trigger)},
            {"delivery_status", to_string(delivery_status)},
            {"tts_request", {{"voice", tts_voice}, {"text", text}}},
            {"provenance",
             {{"source", source}, {"template_id", template_id}, {"tone", to_string(tone)}, {"paradigm", paradigm}}}};
}

FollowupMessage FollowupMessage::from_json(const json& j) {
    try {
        FollowupMessage m;
        m.message_id = j.at("message_id").get<std::string>();
        m.client_pseudonym = j.at("client_pseudonym").get<std::string>();
        m.text = j.at("text").get<std::string>();
        m.created_at_ms = j.at("created_at_ms").get<std::int64_t>();
        m.trigger = parse_trigger(j.at("trigger").get<std::string>());
        m.delivery_status = parse_delivery_status(j.at("delivery_status").get<std::string>());
        if (j.contains("tts_request")) m.tts_voice = j["tts_request"].value("voice", std::string(kVoiceId));
        if (j.contains("provenance")) {
            const auto& p = j["provenance"];
            m.source = p.value("source", std::string());
            m.template_id = p.value("template_id", std::string());
            m.tone = parse_tone(p.value("tone", std::string("warm")));
            m.paradigm = p.value("paradigm", std::string());
        }
        return m;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("follow-up message: ") + e.what());
    }
}

std::size_t utf8_length(std::string_view text) {
    return static_cast<std::size_t>(
        std::count_if(text.begin(), text.end(), [](char c) { return !is_continuation(static_cast<unsigned char>(c)); }));
}

std::string truncate_at_sentence(std::string_view text, std::size_t max_code_points) {
    if (utf8_length(text) <= max_code_points) return std::string(text);
    // Byte offset just past the max_code_points-th code point.
    std::size_t cut = 0, count = 0;
    while (cut < text.size()) {
        std::size_t next = cut + 1;
        while (next < text.size() && is_continuation(static_cast<unsigned char>(text[next]))) ++next;
        if (count == max_code_points) break;
        ++count;
        cut = next;
    }
    const std::string_view head = text.substr(0, cut);
    for (std::size_t i = head.size(); i-- > 0;) {
        const char c = head[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\n')) {
            return trim(head.substr(0, i + 1));
        }
    }
    const auto space = head.find_last_of(" \n");
    if (space != std::string_view::npos && space > 0) return trim(head.substr(0, space));
    return std::string(head);
}

namespace {

Goal primary_goal(const ClientGoals& goals) { return goals.goals.empty() ? Goal::Supportive : goals.goals.front(); }

std::string paradigm_for(const ClientGoals& goals) {
    return primary_goal(goals) == Goal::Supportive ? "supportive_counseling" : "cbt";
}

}  // namespace

TemplateText select_template(TriggerKind trigger, const ClientGoals& goals) {
    const bool warm = goals.preferences.tone == Tone::Warm;
    const std::string tone(to_string(goals.preferences.tone));
    switch (trigger) {
        case TriggerKind::DailyCheckin:
            return {"daily_checkin/any/" + tone,
                    warm ? "Hi, just checking in with you today. Remember to take a few minutes to breathe and slow "
                           "down if you're feeling overwhelmed. You're doing your best\xE2\x80\x94" "and that matters."
                         : "Hello. This is your scheduled check-in for today. If things feel busy, a few slow breaths "
                           "can help you reset."};
        case TriggerKind::LowValenceTrend:
            return {"low_valence_trend/emotional_regulation/" + tone,
                    warm ? "Hi, thinking of you after our last session. When feelings get heavy, try slowing your "
                           "breathing and naming what you notice, one feeling at a time. Small steps count."
                         : "Hello. A reminder after your last session: when difficult feelings build up, pause, "
                           "breathe slowly and name what you notice."};
        case TriggerKind::TechniqueReminder: break;
    }
    const Goal goal = primary_goal(goals);
    const std::string id = "technique_reminder/" + std::string(to_string(goal)) + "/" + tone;
    switch (goal) {
        case Goal::CognitiveReframing:
            return {id, warm ? "Hi, a gentle reminder to try the reframing exercise this week. When a harsh thought "
                               "shows up, write it down and ask what a kinder, more balanced way to see it might be."
                             : "Reminder: practice reframing this week. Write down one difficult thought and look for "
                               "a more balanced alternative."};
        case Goal::EmotionalRegulation:
            return {id, warm ? "Hi, a gentle reminder to practice the regulation technique from our session. A few "
                               "minutes of slow breathing can help when emotions run high."
                             : "Reminder: practice the emotion regulation technique from your session, such as a few "
                               "minutes of slow breathing."};
        case Goal::Supportive:
            return {id, warm ? "Hi, a gentle reminder of the strategies we talked about. Take a moment for yourself "
                               "today; you are not doing this alone."
                             : "Reminder: take a moment today for the strategies discussed in your session."};
    }
    return {id, "Reminder: take a moment today for the strategies discussed in your session."};
}

FollowupMessage generate_followup(const TriggerRule& trigger, const report::StructuredReport* latest_report,
                                  std::optional<fusion::Trend> trend, const ClientGoals& goals,
                                  TextGenerator* generator, std::int64_t now_ms) {
    if (!goals.preferences.enabled) {
        fail(ErrorCode::ConsentViolation, "follow-up disabled for client '" + goals.client_pseudonym + "'");
    }
    FollowupMessage m;
    m.client_pseudonym = goals.client_pseudonym;
    m.trigger = trigger.kind;
    m.created_at_ms = now_ms;
    m.message_id = goals.client_pseudonym + "-" + std::string(to_string(trigger.kind)) + "-" + std::to_string(now_ms);
    m.tone = goals.preferences.tone;
    m.paradigm = paradigm_for(goals);
    const auto tmpl = select_template(trigger.kind, goals);
    m.template_id = tmpl.template_id;

    if (generator) {
        std::string prompt =
            "Write one short, emotionally supportive follow-up message for a counseling client, under 400 "
            "characters, plain text, no medical advice.\nTrigger: " +
            std::string(to_string(trigger.kind)) + "\nTone: " + std::string(to_string(goals.preferences.tone)) +
            "\nTherapeutic approach: " + m.paradigm + "\nClient goals:";
        for (auto g : goals.goals) prompt += " " + std::string(to_string(g));
        if (!trigger.techniques.empty()) {
            prompt += "\nTechniques to remind:";
            for (const auto& t : trigger.techniques) prompt += " " + t;
        }
        if (trend) prompt += "\nRecent emotional trend: " + std::string(fusion::to_string(*trend));
        if (latest_report) {
            if (const auto* s = latest_report->section(report::SectionId::Summary)) {
                prompt += "\nLatest session summary: " + s->text;
            }
        }
        prompt += "\nExample of the expected style: " + tmpl.text + "\n";
        try {
            std::string text = trim(generator->generate(prompt));
            if (!text.empty()) {
                m.text = truncate_at_sentence(text);
                m.source = generator->name();
            }
        } catch (const std::exception&) {
            // template fallback below
        }
    }
    if (m.text.empty()) {
        m.text = truncate_at_sentence(tmpl.text);
        m.source = "template";
    }
    return m;
}

// --- outbox ------------------------------------------------------------------

Outbox::Outbox(fs::path dir, std::size_t capacity) : dir_(std::move(dir)), capacity_(capacity) {
    const fs::path file = dir_ / "outbox.jsonl";
    std::ifstream in(file);
    std::string line;
    while (in && std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            messages_.push_back(FollowupMessage::from_json(json::parse(line)));
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, file.string() + ": " + e.what());
        }
    }
}

void Outbox::persist_locked() const {
    std::string text;
    for (const auto& m : messages_) text += m.to_json().dump() + "\n";
    write_atomic(dir_ / "outbox.jsonl", text);
}

FollowupMessage Outbox::enqueue(FollowupMessage message) {
    if (message.text.empty() || utf8_length(message.text) > kMaxMessageCodePoints) {
        fail(ErrorCode::InvalidArgument, "follow-up text must be non-empty and at most 400 characters");
    }
    std::lock_guard lock(mu_);
    for (const auto& m : messages_) {
        if (m.message_id == message.message_id) return m;
    }
    const auto queued_count = static_cast<std::size_t>(std::count_if(
        messages_.begin(), messages_.end(), [](const FollowupMessage& m) { return m.delivery_status == DeliveryStatus::Queued; }));
    if (queued_count >= capacity_) {
        fail(ErrorCode::QueueFull, "outbox for '" + message.client_pseudonym + "' holds " + std::to_string(capacity_) +
                                       " undelivered messages");
    }
    message.delivery_status = DeliveryStatus::Queued;
    messages_.push_back(message);
    persist_locked();
    return message;
}

std::vector<FollowupMessage> Outbox::poll() {
    std::lock_guard lock(mu_);
    std::vector<FollowupMessage> out;
    for (auto& m : messages_) {
        if (m.delivery_status != DeliveryStatus::Queued) continue;
        m.delivery_status = DeliveryStatus::Delivered;
        out.push_back(m);
    }
    if (!out.empty()) persist_locked();
    return out;
}

bool Outbox::mark_read(const std::string& message_id) {
    std::lock_guard lock(mu_);
    for (auto& m : messages_) {
        if (m.message_id != message_id) continue;
        if (m.delivery_status != DeliveryStatus::Read) {
            m.delivery_status = DeliveryStatus::Read;
            persist_locked();
        }
        return true;
    }
    return false;
}

std::vector<FollowupMessage> Outbox::all() const {
    std::lock_guard lock(mu_);
    return messages_;
}

std::size_t Outbox::queued() const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count_if(messages_.begin(), messages_.end(), [](const FollowupMessage& m) {
        return m.delivery_status == DeliveryStatus::Queued;
    }));
}

// --- client directory ----------------------------------------------------------

ClientDirectory::ClientDirectory(fs::path store_root) : root_(std::move(store_root)) {}

fs::path ClientDirectory::client_dir(const std::string& pseudonym) const {
    if (pseudonym.empty() || pseudonym.find('/') != std::string::npos || pseudonym.front() == '.') {
        fail(ErrorCode::InvalidArgument, "invalid client pseudonym '" + pseudonym + "'");
    }
    return root_ / "clients" / pseudonym;
}

void ClientDirectory::save_goals(const ClientGoals& goals) const {
    write_atomic(client_dir(goals.client_pseudonym) / "goals.json", goals.to_json().dump(2) + "\n");
}

std::optional<ClientGoals> ClientDirectory::load_goals(const std::string& pseudonym) const {
    const auto path = client_dir(pseudonym) / "goals.json";
    if (!fs::exists(path)) return std::nullopt;
    return ClientGoals::from_json(read_json(path));
}

void ClientDirectory::register_session(const std::string& pseudonym, const std::string& session_id) const {
    auto list = sessions(pseudonym);
    if (std::find(list.begin(), list.end(), session_id) != list.end()) return;
    list.push_back(session_id);
    write_atomic(client_dir(pseudonym) / "sessions.json", json(list).dump(2) + "\n");
}

std::vector<std::string> ClientDirectory::sessions(const std::string& pseudonym) const {
    const auto path = client_dir(pseudonym) / "sessions.json";
    if (!fs::exists(path)) return {};
    return read_json(path).get<std::vector<std::string>>();
}

std::vector<std::string> ClientDirectory::clients() const {
    std::vector<std::string> out;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(root_ / "clients", ec)) {
        if (e.is_directory()) out.push_back(e.path().filename());
    }
    std::sort(out.begin(), out.end());
    return out;
}

ClientState ClientDirectory::load_state(const std::string& pseudonym) const {
    ClientState state;
    if (auto goals = load_goals(pseudonym)) {
        state.goals = *goals;
    } else {
        state.goals.client_pseudonym = pseudonym;
        state.goals.preferences.enabled = false;
    }
    const auto list = sessions(pseudonym);
    if (!list.empty()) {
        const fs::path dir = root_ / list.back();
        if (fs::exists(dir / "summary.json")) {
            state.last_session = session::SessionSummary::from_json(read_json(dir / "summary.json"));
        }
        if (fs::exists(dir / "report.json")) {
            state.latest_report = report::StructuredReport::from_json(read_json(dir / "report.json"));
        }
    }
    const auto trig = client_dir(pseudonym) / "trigger_state.json";
    if (fs::exists(trig)) state.load_trigger_state(read_json(trig));
    return state;
}

void ClientDirectory::save_trigger_state(const ClientState& state) const {
    write_atomic(client_dir(state.goals.client_pseudonym) / "trigger_state.json",
                 state.trigger_state_json().dump(2) + "\n");
}

Outbox& ClientDirectory::outbox(const std::string& pseudonym) {
    std::lock_guard lock(mu_);
    auto& slot = outboxes_[pseudonym];
    if (!slot) slot = std::make_unique<Outbox>(client_dir(pseudonym));
    return *slot;
}

SweepResult sweep(ClientDirectory& clients, std::int64_t now_ms, TextGenerator* generator,
                  const CooldownConfig& cooldowns) {
    SweepResult result;
    for (const auto& pseudonym : clients.clients()) {
        ClientState state;
        try {
            state = clients.load_state(pseudonym);
        } catch (const Error& e) {
            result.errors.push_back(pseudonym + ": " + e.what());
            continue;
        }
        if (!state.goals.preferences.enabled) continue;
        const auto fired = check_triggers(state, now_ms, cooldowns);
        if (fired.empty()) continue;
        std::optional<fusion::Trend> trend;
        if (state.last_session && !state.last_session->updates.empty()) {
            trend = fusion::compute_trend(state.last_session->updates);
        }
        const auto* report = state.latest_report ? &*state.latest_report : nullptr;
        for (const auto& rule : fired) {
            auto message = generate_followup(rule, report, trend, state.goals, generator, now_ms);
            try {
                result.enqueued.push_back(clients.outbox(pseudonym).enqueue(std::move(message)));
                state.last_fired_ms[rule.kind] = now_ms;
            } catch (const Error& e) {
                result.errors.push_back(pseudonym + ": " + e.what());
            }
        }
        clients.save_trigger_state(state);
    }
    return result;
}

}  // namespace counsel::followup
