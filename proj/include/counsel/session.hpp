#pragma once

// Session lifecycle, interval batching, append-only event log and replay.

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "counsel/fusion.hpp"
#include "counsel/models.hpp"
#include "counsel/ppg.hpp"
#include "counsel/speech.hpp"

namespace counsel::session {

enum class Modality { SpeechOnly, PpgOnly, Multimodal };
std::string_view to_string(Modality m);
Modality parse_modality(std::string_view name);

struct Consent {
    bool speech = false;
    bool ppg = false;
};

nlohmann::json fusion_config_json(const fusion::FusionConfig& c);
/// Missing keys keep the values of `base`.
fusion::FusionConfig fusion_config_from_json(const nlohmann::json& j, fusion::FusionConfig base = {});

struct SessionConfig {
    std::string session_id;
    Modality modality = Modality::PpgOnly;
    Consent consent;
    fusion::FusionConfig fusion;
    fusion::AlertConfig alerts;
    std::string counselor_id;
    std::string client_pseudonym;
    /// Keep raw PPG samples next to the log (off by default).
    bool debug_retain_raw = false;
    /// Optional trained PPG classifier used when batches arrive without a posterior.
    std::string model_path;

    /// Throws InvalidArgument for bad ids and ConsentViolation when the
    /// modality needs a signal the client did not consent to.
    void validate() const;
    fusion::ModalityPermissions permissions() const;

    nlohmann::json to_json() const;
    static SessionConfig from_json(const nlohmann::json& j);
};

/// One interval's PPG contribution as posted by a device or the offline pipeline.
struct PpgFeatureBatch {
    std::int64_t t_ms = 0;
    std::optional<ppg::HrvFeatures> features;
    std::optional<double> reactivity;
    bool reactivity_stale = false;
    std::optional<fusion::EmotionDistribution> dist;

    fusion::PpgEvidence to_evidence() const { return {t_ms, reactivity, reactivity_stale, dist}; }
    nlohmann::json to_json() const;
    static PpgFeatureBatch from_json(const nlohmann::json& j);
};

enum class EventKind { SessionStart, PpgFeatures, SpeechEmotion, EmotionUpdate, Alert, AlertAck, SessionEnd };
std::string_view to_string(EventKind k);
EventKind parse_event_kind(std::string_view name);

struct SessionEvent {
    std::int64_t seq = 0;
    std::int64_t t_ms = 0;
    EventKind kind = EventKind::SessionStart;
    nlohmann::json payload;

    nlohmann::json to_json() const;
    static SessionEvent from_json(const nlohmann::json& j);
};

struct SessionSummary {
    std::string session_id;
    std::string counselor_id;
    std::string client_pseudonym;
    Modality modality = Modality::PpgOnly;
    std::int64_t first_t_ms = 0;
    std::int64_t last_t_ms = 0;
    std::int64_t duration_ms = 0;
    std::array<int, 3> label_counts{0, 0, 0};  // sad, neutral, positive
    int sustained_alerts = 0;
    int abrupt_alerts = 0;
    double final_s_p = 0.0;
    std::vector<fusion::EmotionUpdate> updates;

    int count(fusion::Emotion e) const { return label_counts[static_cast<std::size_t>(e)]; }
    /// Most frequent label; ties resolve sad > neutral > positive. Neutral when empty.
    fusion::Emotion dominant_label() const;

    nlohmann::json to_json() const;
    static SessionSummary from_json(const nlohmann::json& j);
};

SessionSummary summarize(const SessionConfig& config, std::span<const fusion::EmotionUpdate> updates,
                         std::span<const fusion::Alert> alerts, double final_s_p);

/// Reads events.jsonl; throws CorruptLog on unparsable lines or seq gaps.
std::vector<SessionEvent> read_log(const std::filesystem::path& path);

struct ReplayOutput {
    std::vector<fusion::EmotionUpdate> updates;
    std::vector<fusion::Alert> alerts;
    fusion::FusionState final_state;
};

/// Re-runs fusion over the logged inputs. Throws CorruptLog on seq gaps,
/// a missing session_start or unreadable payloads.
ReplayOutput replay(std::span<const SessionEvent> log);

struct ReplayCheck {
    bool identical = true;
    std::size_t recorded_updates = 0;
    std::size_t recorded_alerts = 0;
    std::vector<std::string> mismatches;
};

/// Compares the serialized replay output against the recorded records.
ReplayCheck verify_replay(std::span<const SessionEvent> log);

class Session {
public:
    Session(SessionConfig config, std::filesystem::path dir);
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    const SessionConfig& config() const { return config_; }
    const std::filesystem::path& dir() const { return dir_; }

    void set_classifier(std::shared_ptr<const models::TrainedModel> model);

    /// Logs the inputs, runs one fusion tick and logs the update and alerts in
    /// a single append. Throws SessionClosed and ConsentViolation.
    std::vector<SessionEvent> append_and_tick(const fusion::IntervalInputs& inputs,
                                              const std::optional<PpgFeatureBatch>& ppg_batch = std::nullopt);

    /// Interval-buffered ingestion: evidence is keyed to the nearest interval
    /// boundary; a tick runs once every enabled modality has arrived for that
    /// interval or a later interval shows up.
    std::vector<SessionEvent> submit_ppg(PpgFeatureBatch batch);
    std::vector<SessionEvent> submit_speech(const speech::SpeechEmotionEvent& event);
    /// Ticks every pending interval.
    std::vector<SessionEvent> flush();

    /// Appends an alert_ack once per alert id. Throws AlertNotFound.
    std::optional<SessionEvent> acknowledge(const std::string& alert_id, std::int64_t t_ms);

    SessionSummary end_session();
    bool closed() const;

    /// Writes raw samples only when debug_retain_raw is set.
    void retain_raw_ppg(std::span<const ppg::PpgSample> samples);

    std::vector<SessionEvent> events_since(std::int64_t after_seq) const;
    std::int64_t last_seq() const;
    /// Blocks until an event newer than after_seq exists, the session closes,
    /// or the timeout passes. Returns the new events.
    std::vector<SessionEvent> wait_for_events(std::int64_t after_seq, std::chrono::milliseconds timeout) const;

    std::vector<fusion::EmotionUpdate> updates() const;
    /// Alerts with their acknowledgement state.
    std::vector<fusion::Alert> alerts() const;
    fusion::FusionState state() const;

    /// Rebuilds an existing session from its log directory.
    static std::unique_ptr<Session> restore(const std::filesystem::path& dir);

private:
    friend class SessionStore;

    struct Pending {
        std::optional<PpgFeatureBatch> ppg;
        std::optional<speech::SpeechEmotionEvent> speech;
    };

    std::vector<SessionEvent> tick_locked(const fusion::IntervalInputs& inputs,
                                          const std::optional<PpgFeatureBatch>& ppg_batch);
    std::vector<SessionEvent> flush_before_locked(std::int64_t key);
    std::vector<SessionEvent> tick_pending_locked(std::int64_t key);
    bool pending_complete(const Pending& p) const;
    std::int64_t interval_key(std::int64_t t_ms) const;
    void append_locked(std::vector<SessionEvent>& batch);
    SessionEvent make_event(EventKind kind, std::int64_t t_ms, nlohmann::json payload);
    void check_open_locked() const;
    void write_start();
    void load(std::vector<SessionEvent> log);

    SessionConfig config_;
    std::filesystem::path dir_;
    std::shared_ptr<const models::TrainedModel> classifier_;

    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::ofstream log_;
    fusion::FusionEngine engine_;
    std::vector<SessionEvent> events_;
    std::vector<fusion::Alert> alerts_;
    std::map<std::int64_t, Pending> pending_;
    std::int64_t next_seq_ = 1;
    std::optional<std::int64_t> last_ticked_key_;
    bool closed_ = false;
};

/// Directory-backed registry of sessions under one store root.
class SessionStore {
public:
    /// Creates the root if needed; throws StoreUnwritable.
    explicit SessionStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }

    /// Throws DuplicateSession and ConsentViolation.
    std::shared_ptr<Session> create(const SessionConfig& config);
    /// In-memory handle, restoring from disk when needed. Throws SessionNotFound.
    std::shared_ptr<Session> get(const std::string& session_id);
    std::vector<std::string> list() const;

private:
    std::filesystem::path root_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace counsel::session
