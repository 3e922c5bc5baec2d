#pragma once

// Between-session follow-up: trigger rules with cooldowns, message generation
// with template fallback, and a bounded per-client outbox.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "counsel/generator.hpp"
#include "counsel/report.hpp"
#include "counsel/session.hpp"

namespace counsel::followup {

inline constexpr std::size_t kMaxMessageCodePoints = 400;
inline constexpr std::size_t kOutboxCapacity = 1000;
inline constexpr std::string_view kVoiceId = "generic_neutral";
inline constexpr std::int64_t kHourMs = 3600 * 1000;

enum class Goal { EmotionalRegulation, CognitiveReframing, Supportive };
std::string_view to_string(Goal g);
Goal parse_goal(std::string_view name);

enum class Tone { Warm, Neutral };
std::string_view to_string(Tone t);
Tone parse_tone(std::string_view name);

struct Preferences {
    int frequency_per_week = 7;
    Tone tone = Tone::Warm;
    bool enabled = true;
};

struct ClientGoals {
    std::string client_pseudonym;
    std::vector<Goal> goals;
    Preferences preferences;

    bool has(Goal g) const;
    nlohmann::json to_json() const;
    static ClientGoals from_json(const nlohmann::json& j);
};

enum class TriggerKind { DailyCheckin, LowValenceTrend, TechniqueReminder };
std::string_view to_string(TriggerKind k);
TriggerKind parse_trigger(std::string_view name);

struct CooldownConfig {
    double daily_checkin_hours = 20.0;
    double low_valence_trend_hours = 48.0;
    double technique_reminder_hours = 72.0;

    double hours(TriggerKind k) const;
};

struct TriggerRule {
    TriggerKind kind;
    double cooldown_hours;
    /// Technique names from the report tags (technique_reminder only).
    std::vector<std::string> techniques;
};

struct ClientState {
    ClientGoals goals;
    std::optional<report::StructuredReport> latest_report;
    std::optional<session::SessionSummary> last_session;
    /// Last firing time per trigger, epoch milliseconds.
    std::map<TriggerKind, std::int64_t> last_fired_ms;

    nlohmann::json trigger_state_json() const;
    void load_trigger_state(const nlohmann::json& j);
};

/// Milliseconds between daily check-ins: max(cooldown, one week / frequency).
std::optional<std::int64_t> checkin_interval_ms(int frequency_per_week, const CooldownConfig& cooldowns);

/// More than half of the session's updates were sad.
bool majority_sad(const session::SessionSummary& summary);

/// "#technique:<name>" tags in the report's follow-up suggestions.
std::vector<std::string> technique_tags(const report::StructuredReport& report);

/// Rules that fire at now_ms. Disabled clients get nothing.
std::vector<TriggerRule> check_triggers(const ClientState& state, std::int64_t now_ms,
                                        const CooldownConfig& cooldowns = {});

enum class DeliveryStatus { Queued, Delivered, Read };
std::string_view to_string(DeliveryStatus s);
DeliveryStatus parse_delivery_status(std::string_view name);

struct FollowupMessage {
    std::string message_id;
    std::string client_pseudonym;
    std::string text;
    std::int64_t created_at_ms = 0;
    TriggerKind trigger = TriggerKind::DailyCheckin;
    DeliveryStatus delivery_status = DeliveryStatus::Queued;
    /// Text-to-speech request stub; the voice is always the generic profile.
    std::string tts_voice = std::string(kVoiceId);
    /// "template" or the generator name.
    std::string source;
    std::string template_id;
    Tone tone = Tone::Warm;
    /// cbt or supportive_counseling.
    std::string paradigm;

    nlohmann::json to_json() const;
    static FollowupMessage from_json(const nlohmann::json& j);
};

std::size_t utf8_length(std::string_view text);

/// Cuts to at most max_code_points, preferring the last sentence end that fits,
/// then the last space.
std::string truncate_at_sentence(std::string_view text, std::size_t max_code_points = kMaxMessageCodePoints);

struct TemplateText {
    std::string template_id;
    std::string text;
};

/// Deterministic template keyed by (trigger, primary goal, tone).
TemplateText select_template(TriggerKind trigger, const ClientGoals& goals);

/// Builds the message for a fired trigger; falls back to the template when the
/// generator is absent, unavailable or returns nothing usable.
FollowupMessage generate_followup(const TriggerRule& trigger, const report::StructuredReport* latest_report,
                                  std::optional<fusion::Trend> trend, const ClientGoals& goals,
                                  TextGenerator* generator, std::int64_t now_ms);

/// Bounded, persisted per-client queue. Receipts are idempotent by message_id.
class Outbox {
public:
    Outbox(std::filesystem::path dir, std::size_t capacity = kOutboxCapacity);

    /// Throws QueueFull once capacity undelivered messages are queued.
    FollowupMessage enqueue(FollowupMessage message);
    /// Returns queued messages and marks them delivered.
    std::vector<FollowupMessage> poll();
    /// Marks a delivered message read; returns false for unknown ids.
    bool mark_read(const std::string& message_id);
    std::vector<FollowupMessage> all() const;
    std::size_t queued() const;

private:
    void persist_locked() const;

    std::filesystem::path dir_;
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::vector<FollowupMessage> messages_;
};

/// Per-client files under <root>/clients/<pseudonym>/.
class ClientDirectory {
public:
    explicit ClientDirectory(std::filesystem::path store_root);

    std::filesystem::path client_dir(const std::string& pseudonym) const;
    void save_goals(const ClientGoals& goals) const;
    std::optional<ClientGoals> load_goals(const std::string& pseudonym) const;
    /// Records an ended session in the client's history (idempotent).
    void register_session(const std::string& pseudonym, const std::string& session_id) const;
    std::vector<std::string> sessions(const std::string& pseudonym) const;
    std::vector<std::string> clients() const;

    /// Goals, the latest ended session summary and its report, and trigger state.
    ClientState load_state(const std::string& pseudonym) const;
    void save_trigger_state(const ClientState& state) const;

    Outbox& outbox(const std::string& pseudonym);

private:
    std::filesystem::path root_;
    std::mutex mu_;
    std::map<std::string, std::unique_ptr<Outbox>> outboxes_;
};

struct SweepResult {
    std::vector<FollowupMessage> enqueued;
    std::vector<std::string> errors;
};

/// One pass over every client with stored goals.
SweepResult sweep(ClientDirectory& clients, std::int64_t now_ms, TextGenerator* generator,
                  const CooldownConfig& cooldowns = {});

}  // namespace counsel::followup
