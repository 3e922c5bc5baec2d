#pragma once

// Decision-level fusion of speech and PPG emotion evidence, trend and alert
// evaluation. Everything here is deterministic and wall-clock free.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace counsel::fusion {

enum class Emotion { Sad = 0, Neutral = 1, Positive = 2 };

inline constexpr std::array<Emotion, 3> kEmotions = {Emotion::Sad, Emotion::Neutral, Emotion::Positive};

std::string_view to_string(Emotion e);
Emotion parse_emotion(std::string_view name);
/// -1 sad, 0 neutral, +1 positive.
int valence(Emotion e);
/// Display contract: sad blue, neutral green, positive yellow.
std::string_view color(Emotion e);

/// Probability vector over {sad, neutral, positive}.
struct EmotionDistribution {
    static constexpr double kSumTolerance = 1e-6;

    std::array<double, 3> p{0.0, 1.0, 0.0};

    double operator[](Emotion e) const { return p[static_cast<std::size_t>(e)]; }
    double sad() const { return p[0]; }
    double neutral() const { return p[1]; }
    double positive() const { return p[2]; }

    bool is_valid() const;
    /// Throws InvalidDistribution unless components are finite, >= 0 and sum to 1.
    void validate() const;
    /// Highest-probability class; ties resolve sad > neutral > positive.
    Emotion argmax() const;

    static EmotionDistribution from(std::span<const double> values);
    /// Rescales non-negative weights to sum to one.
    static EmotionDistribution normalized(std::array<double, 3> weights);

    bool operator==(const EmotionDistribution&) const = default;
};

/// Maps a classifier's label-set distribution onto the three emotion classes.
/// "relax" is read as the neutral baseline; unknown labels are rejected.
EmotionDistribution to_emotion_distribution(std::span<const std::string> label_set, std::span<const double> probs);

enum class SpeechQuality { High, Low };
std::string_view to_string(SpeechQuality q);
SpeechQuality parse_speech_quality(std::string_view name);

struct FusionConfig {
    double lambda = 0.5;
    double theta = 0.3;
    double delta1 = 1.0;
    double alpha_high = 0.7;
    double alpha_low = 0.3;
    double sad_override_epsilon = 0.0;
    std::int64_t interval_ms = 60000;
    double initial_confidence = 0.5;

    /// Throws InvalidArgument on out-of-range constants.
    void validate() const;
};

struct AlertConfig {
    int sustained_n = 3;
    int abrupt_delta = 2;
    int trend_k = 3;
};

struct FusionState {
    double s_p = 0.0;
    std::optional<double> prev_mu;
    double m = 0.5;
    std::int64_t tick = 0;
};

// --- the three fusion conditions -----------------------------------------

Emotion speech_only_decision(const EmotionDistribution& p_s, double epsilon = 0.0);

struct PpgUpdateResult {
    FusionState state;
    Emotion label;
    double delta;  // 0 on the first observation
};

/// Cumulative-score update from the reactivity mean. Throws NegativeMu.
PpgUpdateResult ppg_only_update(const FusionState& state, double mu_t, const FusionConfig& config);

/// Label from the cumulative score against +/- delta1 (strict).
Emotion label_from_score(double s_p, double delta1);

struct FuseResult {
    EmotionDistribution p_f;
    Emotion label;
    double alpha;
};

FuseResult fuse(const EmotionDistribution& p_s, const EmotionDistribution& p_p, SpeechQuality quality,
                const FusionConfig& config);

// --- per-interval dispatch -------------------------------------------------

enum class FusionMode { SpeechOnly, PpgOnly, Multimodal, None };
std::string_view to_string(FusionMode m);
FusionMode parse_fusion_mode(std::string_view name);

/// Which modalities a session may use (fixed by client consent).
struct ModalityPermissions {
    bool speech = true;
    bool ppg = true;
};

struct SpeechEvidence {
    std::int64_t t_ms = 0;
    EmotionDistribution dist;
    SpeechQuality quality = SpeechQuality::High;
};

struct PpgEvidence {
    std::int64_t t_ms = 0;
    /// Reactivity mean for the cumulative score; absent if not computed.
    std::optional<double> mu;
    bool mu_stale = false;
    /// Classifier posterior for the window; feeds multimodal fusion and m.
    std::optional<EmotionDistribution> classifier_dist;
};

struct IntervalInputs {
    std::int64_t t_ms = 0;
    std::optional<SpeechEvidence> speech;
    std::optional<PpgEvidence> ppg;
};

enum class Trend { Up, Down, Flat };
std::string_view to_string(Trend t);
Trend parse_trend(std::string_view name);

struct EmotionUpdate {
    std::int64_t t_ms = 0;
    std::int64_t tick = 0;
    Emotion label = Emotion::Neutral;
    std::optional<EmotionDistribution> dist;
    FusionMode mode = FusionMode::None;
    Trend trend = Trend::Flat;
    double s_p = 0.0;
    bool stale = false;

    int valence() const { return fusion::valence(label); }
};

nlohmann::json to_json(const EmotionUpdate& u);
EmotionUpdate update_from_json(const nlohmann::json& j);

enum class AlertKind { SustainedLowValence, AbruptShift };
std::string_view to_string(AlertKind k);
AlertKind parse_alert_kind(std::string_view name);

struct AlertEvidence {
    std::int64_t t_ms;
    Emotion label;
};

struct Alert {
    std::string alert_id;
    std::int64_t t_ms = 0;
    std::int64_t tick = 0;
    AlertKind kind = AlertKind::SustainedLowValence;
    std::vector<AlertEvidence> evidence;
    bool acknowledged = false;
};

nlohmann::json to_json(const Alert& a);
Alert alert_from_json(const nlohmann::json& j);

/// Selects the fusion mode from what arrived and what consent allows.
FusionMode select_mode(const IntervalInputs& inputs, const ModalityPermissions& permissions);

struct TickResult {
    EmotionUpdate update;  // trend left Flat; the engine fills it from history
    FusionState state;
};

/// One interval of fusion: mode dispatch, cumulative-score upkeep and label.
TickResult tick(const IntervalInputs& inputs, const FusionState& state, const FusionConfig& config,
                const ModalityPermissions& permissions = {});

/// sign(valence_last - valence_oldest) over the last k updates.
Trend compute_trend(std::span<const EmotionUpdate> history, int k = 3);
Trend compute_trend_valences(std::span<const int> valences, int k = 3);

/// Every alert implied by the full history: a sustained alert when a sad run
/// reaches exactly sustained_n (re-armed by any non-sad update) and an abrupt
/// alert whenever consecutive valences differ by at least abrupt_delta.
std::vector<Alert> evaluate_alerts(std::span<const EmotionUpdate> history, const AlertConfig& config = {});

/// Alerts whose triggering update is the last one in `history`.
std::vector<Alert> alerts_at_latest(std::span<const EmotionUpdate> history, const AlertConfig& config = {});

/// Stateful per-session wrapper: ticks, trend and alerts in one call.
class FusionEngine {
public:
    FusionEngine(FusionConfig config, AlertConfig alerts = {}, ModalityPermissions permissions = {});

    struct Step {
        EmotionUpdate update;
        std::vector<Alert> alerts;
    };

    Step step(const IntervalInputs& inputs);

    const FusionState& state() const { return state_; }
    const std::vector<EmotionUpdate>& history() const { return history_; }
    const FusionConfig& config() const { return config_; }

private:
    FusionConfig config_;
    AlertConfig alert_config_;
    ModalityPermissions permissions_;
    FusionState state_;
    std::vector<EmotionUpdate> history_;
};

}  // namespace counsel::fusion
