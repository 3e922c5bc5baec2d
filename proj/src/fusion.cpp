#include "counsel/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "counsel/error.hpp"

namespace counsel::fusion {

using json = nlohmann::json;

std::string_view to_string(Emotion e) {
    switch (e) {
        case Emotion::Sad: return "sad";
        case Emotion::Neutral: return "neutral";
        case Emotion::Positive: return "positive";
    }
    return "neutral";
}

Emotion parse_emotion(std::string_view name) {
    for (auto e : kEmotions) {
        if (to_string(e) == name) return e;
    }
    fail(ErrorCode::ParseError, "unknown emotion label '" + std::string(name) + "'");
}

int valence(Emotion e) { return static_cast<int>(e) - 1; }

std::string_view color(Emotion e) {
    switch (e) {
        case Emotion::Sad: return "blue";
        case Emotion::Neutral: return "green";
        case Emotion::Positive: return "yellow";
    }
    return "green";
}

bool EmotionDistribution::is_valid() const {
    double sum = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0.0) return false;
        sum += v;
    }
    return std::abs(sum - 1.0) <= kSumTolerance;
}

void EmotionDistribution::validate() const {
    if (!is_valid()) {
        fail(ErrorCode::InvalidDistribution, "emotion distribution (" + std::to_string(p[0]) + ", " +
                                                 std::to_string(p[1]) + ", " + std::to_string(p[2]) +
                                                 ") is not a probability vector");
    }
}

Emotion EmotionDistribution::argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
        if (p[i] > p[best]) best = i;
    }
    return static_cast<Emotion>(best);
}

EmotionDistribution EmotionDistribution::from(std::span<const double> values) {
    if (values.size() != 3) {
        fail(ErrorCode::InvalidDistribution, "emotion distribution needs 3 components, got " +
                                                 std::to_string(values.size()));
    }
    EmotionDistribution d;
    std::copy(values.begin(), values.end(), d.p.begin());
    d.validate();
    return d;
}

EmotionDistribution EmotionDistribution::normalized(std::array<double, 3> weights) {
    double sum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) fail(ErrorCode::InvalidDistribution, "negative or non-finite weight");
        sum += w;
    }
    if (!(sum > 0.0)) fail(ErrorCode::InvalidDistribution, "all-zero weights cannot be normalized");
    EmotionDistribution d;
    for (std::size_t i = 0; i < 3; ++i) d.p[i] = weights[i] / sum;
    return d;
}

EmotionDistribution to_emotion_distribution(std::span<const std::string> label_set, std::span<const double> probs) {
    if (label_set.size() != probs.size()) {
        fail(ErrorCode::DimensionMismatch, "label set and probability vector differ in length");
    }
    std::array<double, 3> w{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < label_set.size(); ++i) {
        const auto& name = label_set[i];
        const Emotion e = name == "relax" ? Emotion::Neutral : parse_emotion(name);
        w[static_cast<std::size_t>(e)] += probs[i];
    }
    return EmotionDistribution::normalized(w);
}

std::string_view to_string(SpeechQuality q) { return q == SpeechQuality::High ? "high" : "low"; }

SpeechQuality parse_speech_quality(std::string_view name) {
    if (name == "high") return SpeechQuality::High;
    if (name == "low") return SpeechQuality::Low;
    fail(ErrorCode::ParseError, "unknown speech quality '" + std::string(name) + "'");
}

void FusionConfig::validate() const {
    auto check = [](bool ok, const char* what) {
        if (!ok) fail(ErrorCode::InvalidArgument, std::string("FusionConfig: ") + what);
    };
    check(lambda > 0.0, "lambda must be > 0");
    check(theta > 0.0 && theta < 1.0, "theta must lie in (0, 1)");
    check(delta1 > 0.0, "delta1 must be > 0");
    check(alpha_high >= 0.0 && alpha_high <= 1.0, "alpha_high must lie in [0, 1]");
    check(alpha_low >= 0.0 && alpha_low <= 1.0, "alpha_low must lie in [0, 1]");
    check(sad_override_epsilon >= 0.0, "sad_override_epsilon must be >= 0");
    check(interval_ms > 0, "interval_ms must be > 0");
    check(initial_confidence >= 0.0 && initial_confidence <= 1.0, "initial_confidence must lie in [0, 1]");
}

Emotion speech_only_decision(const EmotionDistribution& p_s, double epsilon) {
    p_s.validate();
    const Emotion top = p_s.argmax();
    if (top == Emotion::Neutral && p_s.sad() > epsilon) return Emotion::Sad;
    return top;
}

Emotion label_from_score(double s_p, double delta1) {
    if (s_p > delta1) return Emotion::Positive;
    if (s_p < -delta1) return Emotion::Sad;
    return Emotion::Neutral;
}

PpgUpdateResult ppg_only_update(const FusionState& state, double mu_t, const FusionConfig& config) {
    if (!std::isfinite(mu_t) || mu_t < 0.0) {
        fail(ErrorCode::NegativeMu, "reactivity mean must be finite and >= 0, got " + std::to_string(mu_t));
    }
    PpgUpdateResult r{state, Emotion::Neutral, 0.0};
    if (!state.prev_mu) {
        r.state.prev_mu = mu_t;
        return r;
    }
    const double prev = *state.prev_mu;
    const double denom = std::max(mu_t, prev);
    r.delta = denom > 0.0 ? (mu_t - prev) / denom : 0.0;
    if (r.delta > config.theta) {
        r.state.s_p += config.lambda * state.m;
    } else if (r.delta < -config.theta) {
        r.state.s_p -= config.lambda * (1.0 - state.m);
    }
    r.state.prev_mu = mu_t;
    r.label = label_from_score(r.state.s_p, config.delta1);
    return r;
}

FuseResult fuse(const EmotionDistribution& p_s, const EmotionDistribution& p_p, SpeechQuality quality,
                const FusionConfig& config) {
    p_s.validate();
    p_p.validate();
    const double alpha = quality == SpeechQuality::High ? config.alpha_high : config.alpha_low;
    FuseResult r;
    r.alpha = alpha;
    for (std::size_t c = 0; c < 3; ++c) r.p_f.p[c] = alpha * p_s.p[c] + (1.0 - alpha) * p_p.p[c];
    r.label = r.p_f.argmax();
    return r;
}

std::string_view to_string(FusionMode m) {
    switch (m) {
        case FusionMode::SpeechOnly: return "speech_only";
        case FusionMode::PpgOnly: return "ppg_only";
        case FusionMode::Multimodal: return "multimodal";
        case FusionMode::None: return "none";
    }
    return "none";
}

FusionMode parse_fusion_mode(std::string_view name) {
    for (auto m : {FusionMode::SpeechOnly, FusionMode::PpgOnly, FusionMode::Multimodal, FusionMode::None}) {
        if (to_string(m) == name) return m;
    }
    fail(ErrorCode::ParseError, "unknown fusion mode '" + std::string(name) + "'");
}

std::string_view to_string(Trend t) {
    switch (t) {
        case Trend::Up: return "up";
        case Trend::Down: return "down";
        case Trend::Flat: return "flat";
    }
    return "flat";
}

Trend parse_trend(std::string_view name) {
    for (auto t : {Trend::Up, Trend::Down, Trend::Flat}) {
        if (to_string(t) == name) return t;
    }
    fail(ErrorCode::ParseError, "unknown trend '" + std::string(name) + "'");
}

std::string_view to_string(AlertKind k) {
    return k == AlertKind::SustainedLowValence ? "sustained_low_valence" : "abrupt_shift";
}

AlertKind parse_alert_kind(std::string_view name) {
    if (name == "sustained_low_valence") return AlertKind::SustainedLowValence;
    if (name == "abrupt_shift") return AlertKind::AbruptShift;
    fail(ErrorCode::ParseError, "unknown alert kind '" + std::string(name) + "'");
}

json to_json(const EmotionUpdate& u) {
    json j;
    j["t_ms"] = u.t_ms;
    j["tick"] = u.tick;
    j["mode"] = to_string(u.mode);
    j["label"] = to_string(u.label);
    j["valence"] = u.valence();
    j["trend"] = to_string(u.trend);
    j["s_p"] = u.s_p;
    j["dist"] = u.dist ? json(u.dist->p) : json(nullptr);
    j["stale"] = u.stale;
    return j;
}

EmotionUpdate update_from_json(const json& j) {
    try {
        EmotionUpdate u;
        u.t_ms = j.at("t_ms").get<std::int64_t>();
        u.tick = j.value("tick", std::int64_t{0});
        u.mode = parse_fusion_mode(j.at("mode").get<std::string>());
        u.label = parse_emotion(j.at("label").get<std::string>());
        u.trend = parse_trend(j.at("trend").get<std::string>());
        u.s_p = j.at("s_p").get<double>();
        if (!j.at("dist").is_null()) u.dist = EmotionDistribution::from(j.at("dist").get<std::vector<double>>());
        u.stale = j.value("stale", false);
        return u;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("emotion update: ") + e.what());
    }
}

json to_json(const Alert& a) {
    json evidence = json::array();
    for (const auto& e : a.evidence) evidence.push_back({{"t_ms", e.t_ms}, {"label", to_string(e.label)}});
    return {{"alert_id", a.alert_id}, {"t_ms", a.t_ms},         {"tick", a.tick},
            {"kind", to_string(a.kind)}, {"evidence", evidence}, {"acknowledged", a.acknowledged}};
}

Alert alert_from_json(const json& j) {
    try {
        Alert a;
        a.alert_id = j.at("alert_id").get<std::string>();
        a.t_ms = j.at("t_ms").get<std::int64_t>();
        a.tick = j.at("tick").get<std::int64_t>();
        a.kind = parse_alert_kind(j.at("kind").get<std::string>());
        for (const auto& e : j.at("evidence")) {
            a.evidence.push_back({e.at("t_ms").get<std::int64_t>(), parse_emotion(e.at("label").get<std::string>())});
        }
        a.acknowledged = j.value("acknowledged", false);
        return a;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("alert: ") + e.what());
    }
}

FusionMode select_mode(const IntervalInputs& inputs, const ModalityPermissions& permissions) {
    const bool speech = permissions.speech && inputs.speech.has_value();
    const bool ppg = permissions.ppg && inputs.ppg.has_value();
    if (speech && ppg && inputs.ppg->classifier_dist) return FusionMode::Multimodal;
    if (speech) return FusionMode::SpeechOnly;
    if (ppg) return FusionMode::PpgOnly;
    return FusionMode::None;
}

TickResult tick(const IntervalInputs& inputs, const FusionState& state, const FusionConfig& config,
                const ModalityPermissions& permissions) {
    TickResult r;
    r.state = state;
    r.state.tick = state.tick + 1;

    const FusionMode mode = select_mode(inputs, permissions);
    const PpgEvidence* ppg = permissions.ppg && inputs.ppg ? &*inputs.ppg : nullptr;
    Emotion ppg_label = label_from_score(state.s_p, config.delta1);

    // The cumulative score tracks every reactivity observation, so that
    // mu_{t-1} always refers to the previous interval whatever the mode.
    if (ppg) {
        if (ppg->classifier_dist) {
            ppg->classifier_dist->validate();
            const auto& p = ppg->classifier_dist->p;
            r.state.m = *std::max_element(p.begin(), p.end());
        }
        if (ppg->mu) {
            const auto updated = ppg_only_update(r.state, *ppg->mu, config);
            r.state = updated.state;
            ppg_label = updated.label;
        }
    }

    EmotionUpdate& u = r.update;
    u.t_ms = inputs.t_ms;
    u.tick = r.state.tick;
    u.mode = mode;
    u.s_p = r.state.s_p;

    switch (mode) {
        case FusionMode::SpeechOnly:
            u.label = speech_only_decision(inputs.speech->dist, config.sad_override_epsilon);
            u.dist = inputs.speech->dist;
            break;
        case FusionMode::Multimodal: {
            const auto fused = fuse(inputs.speech->dist, *ppg->classifier_dist, inputs.speech->quality, config);
            u.label = fused.label;
            u.dist = fused.p_f;
            break;
        }
        case FusionMode::PpgOnly:
            u.label = ppg_label;
            u.stale = !ppg->mu || ppg->mu_stale;
            break;
        case FusionMode::None:
            u.label = Emotion::Neutral;
            u.stale = true;
            break;
    }
    return r;
}

Trend compute_trend_valences(std::span<const int> valences, int k) {
    const std::size_t n = valences.size();
    if (n < 2 || k < 2) return Trend::Flat;
    const std::size_t span = std::min<std::size_t>(n, static_cast<std::size_t>(k));
    const int d = valences[n - 1] - valences[n - span];
    return d > 0 ? Trend::Up : d < 0 ? Trend::Down : Trend::Flat;
}

Trend compute_trend(std::span<const EmotionUpdate> history, int k) {
    std::vector<int> v;
    v.reserve(history.size());
    for (const auto& u : history) v.push_back(u.valence());
    return compute_trend_valences(v, k);
}

namespace {

Alert make_alert(AlertKind kind, std::span<const EmotionUpdate> window) {
    Alert a;
    a.kind = kind;
    a.t_ms = window.back().t_ms;
    a.tick = window.back().tick;
    a.alert_id = std::string(to_string(kind)) + "-" + std::to_string(a.tick);
    for (const auto& u : window) a.evidence.push_back({u.t_ms, u.label});
    return a;
}

void alerts_at(std::span<const EmotionUpdate> history, std::size_t i, std::size_t sad_run, const AlertConfig& config,
               std::vector<Alert>& out) {
    const auto n = static_cast<std::size_t>(std::max(config.sustained_n, 1));
    if (sad_run == n) out.push_back(make_alert(AlertKind::SustainedLowValence, history.subspan(i + 1 - n, n)));
    if (i >= 1 && std::abs(history[i].valence() - history[i - 1].valence()) >= config.abrupt_delta) {
        out.push_back(make_alert(AlertKind::AbruptShift, history.subspan(i - 1, 2)));
    }
}

}  // namespace

std::vector<Alert> evaluate_alerts(std::span<const EmotionUpdate> history, const AlertConfig& config) {
    std::vector<Alert> out;
    std::size_t sad_run = 0;
    for (std::size_t i = 0; i < history.size(); ++i) {
        sad_run = history[i].label == Emotion::Sad ? sad_run + 1 : 0;
        alerts_at(history, i, sad_run, config, out);
    }
    return out;
}

std::vector<Alert> alerts_at_latest(std::span<const EmotionUpdate> history, const AlertConfig& config) {
    std::vector<Alert> out;
    if (history.empty()) return out;
    std::size_t sad_run = 0;
    for (auto it = history.rbegin(); it != history.rend() && it->label == Emotion::Sad; ++it) ++sad_run;
    alerts_at(history, history.size() - 1, sad_run, config, out);
    return out;
}

FusionEngine::FusionEngine(FusionConfig config, AlertConfig alerts, ModalityPermissions permissions)
    : config_(config), alert_config_(alerts), permissions_(permissions) {
    config_.validate();
    state_.m = config_.initial_confidence;
}

FusionEngine::Step FusionEngine::step(const IntervalInputs& inputs) {
    auto r = tick(inputs, state_, config_, permissions_);
    state_ = r.state;
    history_.push_back(r.update);
    history_.back().trend = compute_trend(history_, alert_config_.trend_k);
    return {history_.back(), alerts_at_latest(history_, alert_config_)};
}

}  // namespace counsel::fusion
