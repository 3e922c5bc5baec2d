#include "counsel/session.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "counsel/error.hpp"

namespace counsel::session {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool safe_token(const std::string& s) {
    if (s.empty() || s.size() > 128 || s.front() == '.') return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
               c == '.';
    });
}

std::optional<fusion::EmotionDistribution> dist_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return fusion::EmotionDistribution::from(j.get<std::vector<double>>());
}

void write_file_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::IoError, "cannot write '" + tmp.string() + "'");
        out << text;
        if (!out.flush()) fail(ErrorCode::IoError, "write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) fail(ErrorCode::IoError, "cannot rename '" + tmp.string() + "': " + ec.message());
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

}  // namespace

// --- config ------------------------------------------------------------------

json fusion_config_json(const fusion::FusionConfig& c) {
    return {{"lambda", c.lambda},
            {"theta", c.theta},
            {"delta1", c.delta1},
            {"alpha_high", c.alpha_high},
            {"alpha_low", c.alpha_low},
            {"sad_override_epsilon", c.sad_override_epsilon},
            {"interval_ms", c.interval_ms},
            {"initial_confidence", c.initial_confidence}};
}

fusion::FusionConfig fusion_config_from_json(const json& j, fusion::FusionConfig c) {
    c.lambda = j.value("lambda", c.lambda);
    c.theta = j.value("theta", c.theta);
    c.delta1 = j.value("delta1", c.delta1);
    c.alpha_high = j.value("alpha_high", c.alpha_high);
    c.alpha_low = j.value("alpha_low", c.alpha_low);
    c.sad_override_epsilon = j.value("sad_override_epsilon", c.sad_override_epsilon);
    c.interval_ms = j.value("interval_ms", c.interval_ms);
    c.initial_confidence = j.value("initial_confidence", c.initial_confidence);
    return c;
}


std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::SpeechOnly: return "speech_only";
        case Modality::PpgOnly: return "ppg_only";
        case Modality::Multimodal: return "multimodal";
    }
    return "ppg_only";
}

Modality parse_modality(std::string_view name) {
    if (name == "speech_only") return Modality::SpeechOnly;
    if (name == "ppg_only") return Modality::PpgOnly;
    if (name == "multimodal") return Modality::Multimodal;
    fail(ErrorCode::InvalidArgument, "unknown modality '" + std::string(name) + "'");
}

void SessionConfig::validate() const {
    if (!safe_token(session_id) || session_id == "clients") {
        fail(ErrorCode::InvalidArgument, "session_id must be 1-128 chars of [A-Za-z0-9._-], not 'clients'");
    }
    if (!client_pseudonym.empty() && !safe_token(client_pseudonym)) {
        fail(ErrorCode::InvalidArgument, "client_pseudonym must be an opaque token of [A-Za-z0-9._-]");
    }
    fusion.validate();
    const auto perms = permissions();
    if (perms.speech && !consent.speech) {
        fail(ErrorCode::ConsentViolation,
             std::string(to_string(modality)) + " session requested without speech consent");
    }
    if (perms.ppg && !consent.ppg) {
        fail(ErrorCode::ConsentViolation, std::string(to_string(modality)) + " session requested without PPG consent");
    }
}

fusion::ModalityPermissions SessionConfig::permissions() const {
    return {modality != Modality::PpgOnly, modality != Modality::SpeechOnly};
}

json SessionConfig::to_json() const {
    return {{"session_id", session_id},
            {"modality", to_string(modality)},
            {"consent", {{"speech", consent.speech}, {"ppg", consent.ppg}}},
            {"fusion", fusion_config_json(fusion)},
            {"alerts",
             {{"sustained_n", alerts.sustained_n}, {"abrupt_delta", alerts.abrupt_delta}, {"trend_k", alerts.trend_k}}},
            {"counselor_id", counselor_id},
            {"client_pseudonym", client_pseudonym},
            {"debug_retain_raw", debug_retain_raw},
            {"model_path", model_path}};
}

SessionConfig SessionConfig::from_json(const json& j) {
    try {
        SessionConfig c;
        c.session_id = j.at("session_id").get<std::string>();
        const std::string key = j.contains("modality") ? "modality" : "modalities";
        c.modality = parse_modality(j.at(key).get<std::string>());
        if (j.contains("consent")) {
            c.consent.speech = j["consent"].value("speech", false);
            c.consent.ppg = j["consent"].value("ppg", false);
        }
        if (j.contains("fusion")) c.fusion = fusion_config_from_json(j["fusion"]);
        if (j.contains("alerts")) {
            const auto& a = j["alerts"];
            c.alerts.sustained_n = a.value("sustained_n", c.alerts.sustained_n);
            c.alerts.abrupt_delta = a.value("abrupt_delta", c.alerts.abrupt_delta);
            c.alerts.trend_k = a.value("trend_k", c.alerts.trend_k);
        }
        c.counselor_id = j.value("counselor_id", std::string());
        c.client_pseudonym = j.value("client_pseudonym", std::string());
        c.debug_retain_raw = j.value("debug_retain_raw", false);
        c.model_path = j.value("model_path", std::string());
        return c;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("session config: ") + e.what());
    }
}

// --- wire records --------------------------------------------------------------

json PpgFeatureBatch::to_json() const {
    json j = {{"t_ms", t_ms}, {"reactivity_stale", reactivity_stale}};
    j["features"] = features ? ppg::to_json(*features) : json(nullptr);
    j["reactivity"] = reactivity ? json(*reactivity) : json(nullptr);
    j["dist"] = dist ? json(dist->p) : json(nullptr);
    return j;
}

PpgFeatureBatch PpgFeatureBatch::from_json(const json& j) {
    try {
        PpgFeatureBatch b;
        b.t_ms = j.at("t_ms").get<std::int64_t>();
        if (j.contains("features") && !j["features"].is_null()) b.features = ppg::hrv_from_json(j["features"]);
        if (j.contains("reactivity") && !j["reactivity"].is_null()) {
            b.reactivity = j["reactivity"].get<double>();
            if (!std::isfinite(*b.reactivity)) fail(ErrorCode::ParseError, "reactivity must be finite");
        }
        b.reactivity_stale = j.value("reactivity_stale", false);
        if (j.contains("dist")) b.dist = dist_from(j["dist"]);
        return b;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("ppg batch: ") + e.what());
    }
}

std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::SessionStart: return "session_start";
        case EventKind::PpgFeatures: return "ppg_features";
        case EventKind::SpeechEmotion: return "speech_emotion";
        case EventKind::EmotionUpdate: return "emotion_update";
        case EventKind::Alert: return "alert";
        case EventKind::AlertAck: return "alert_ack";
        case EventKind::SessionEnd: return "session_end";
    }
    return "session_start";
}

EventKind parse_event_kind(std::string_view name) {
    for (auto k : {EventKind::SessionStart, EventKind::PpgFeatures, EventKind::SpeechEmotion, EventKind::EmotionUpdate,
                   EventKind::Alert, EventKind::AlertAck, EventKind::SessionEnd}) {
        if (to_string(k) == name) return k;
    }
    fail(ErrorCode::ParseError, "unknown event kind '" + std::string(name) + "'");
}

json SessionEvent::to_json() const {
    return {{"seq", seq}, {"t_ms", t_ms}, {"kind", to_string(kind)}, {"payload", payload}};
}

SessionEvent SessionEvent::from_json(const json& j) {
    try {
        SessionEvent e;
        e.seq = j.at("seq").get<std::int64_t>();
        e.t_ms = j.at("t_ms").get<std::int64_t>();
        e.kind = parse_event_kind(j.at("kind").get<std::string>());
        e.payload = j.at("payload");
        return e;
    } catch (const json::exception& ex) {
        fail(ErrorCode::ParseError, std::string("session event: ") + ex.what());
    }
}

// --- summary -----------------------------------------------------------------

fusion::Emotion SessionSummary::dominant_label() const {
    fusion::Emotion best = fusion::Emotion::Neutral;
    int best_count = 0;
    for (auto e : fusion::kEmotions) {
        if (count(e) > best_count) {
            best = e;
            best_count = count(e);
        }
    }
    return best;
}

json SessionSummary::to_json() const {
    json ups = json::array();
    for (const auto& u : updates) ups.push_back(fusion::to_json(u));
    return {{"session_id", session_id},
            {"counselor_id", counselor_id},
            {"client_pseudonym", client_pseudonym},
            {"modality", to_string(modality)},
            {"first_t_ms", first_t_ms},
            {"last_t_ms", last_t_ms},
            {"duration_ms", duration_ms},
            {"label_counts", {{"sad", label_counts[0]}, {"neutral", label_counts[1]}, {"positive", label_counts[2]}}},
            {"alert_counts", {{"sustained_low_valence", sustained_alerts}, {"abrupt_shift", abrupt_alerts}}},
            {"final_s_p", final_s_p},
            {"n_updates", updates.size()},
            {"updates", ups}};
}

SessionSummary SessionSummary::from_json(const json& j) {
    try {
        SessionSummary s;
        s.session_id = j.value("session_id", std::string());
        s.counselor_id = j.value("counselor_id", std::string());
        s.client_pseudonym = j.value("client_pseudonym", std::string());
        s.modality = parse_modality(j.value("modality", std::string("ppg_only")));
        s.first_t_ms = j.value("first_t_ms", std::int64_t{0});
        s.last_t_ms = j.value("last_t_ms", std::int64_t{0});
        s.duration_ms = j.value("duration_ms", std::int64_t{0});
        const auto& lc = j.at("label_counts");
        s.label_counts = {lc.value("sad", 0), lc.value("neutral", 0), lc.value("positive", 0)};
        if (j.contains("alert_counts")) {
            s.sustained_alerts = j["alert_counts"].value("sustained_low_valence", 0);
            s.abrupt_alerts = j["alert_counts"].value("abrupt_shift", 0);
        }
        s.final_s_p = j.value("final_s_p", 0.0);
        if (j.contains("updates")) {
            for (const auto& u : j["updates"]) s.updates.push_back(fusion::update_from_json(u));
        }
        return s;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("session summary: ") + e.what());
    }
}

SessionSummary summarize(const SessionConfig& config, std::span<const fusion::EmotionUpdate> updates,
                         std::span<const fusion::Alert> alerts, double final_s_p) {
    SessionSummary s;
    s.session_id = config.session_id;
    s.counselor_id = config.counselor_id;
    s.client_pseudonym = config.client_pseudonym;
    s.modality = config.modality;
    if (!updates.empty()) {
        s.first_t_ms = updates.front().t_ms;
        s.last_t_ms = updates.back().t_ms;
        s.duration_ms = s.last_t_ms - s.first_t_ms;
    }
    for (const auto& u : updates) ++s.label_counts[static_cast<std::size_t>(u.label)];
    for (const auto& a : alerts) {
        if (a.kind == fusion::AlertKind::SustainedLowValence) ++s.sustained_alerts;
        else ++s.abrupt_alerts;
    }
    s.final_s_p = final_s_p;
    s.updates.assign(updates.begin(), updates.end());
    return s;
}

// --- log + replay ------------------------------------------------------------

std::vector<SessionEvent> read_log(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open log '" + path.string() + "'");
    std::vector<SessionEvent> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        SessionEvent e;
        try {
            e = SessionEvent::from_json(json::parse(line));
        } catch (const json::exception& ex) {
            fail(ErrorCode::CorruptLog, path.string() + ":" + std::to_string(line_no) + ": bad record: " + ex.what());
        } catch (const Error& ex) {
            fail(ErrorCode::CorruptLog, path.string() + ":" + std::to_string(line_no) + ": bad record: " + ex.what());
        }
        const std::int64_t expected = out.empty() ? 1 : out.back().seq + 1;
        if (e.seq != expected) {
            fail(ErrorCode::CorruptLog, path.string() + ": seq gap, expected " + std::to_string(expected) + " got " +
                                            std::to_string(e.seq));
        }
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

// Walks a log, feeding logged interval inputs back through an engine.
class LogWalker {
public:
    explicit LogWalker(const SessionConfig& config)
        : engine_(config.fusion, config.alerts, config.permissions()) {}

    // Returns the step result when the event closes an interval.
    std::optional<fusion::FusionEngine::Step> feed(const SessionEvent& e) {
        switch (e.kind) {
            case EventKind::PpgFeatures: ppg_ = PpgFeatureBatch::from_json(e.payload); break;
            case EventKind::SpeechEmotion: speech_ = speech::speech_event_from_json(e.payload); break;
            case EventKind::EmotionUpdate: {
                fusion::IntervalInputs in;
                in.t_ms = e.t_ms;
                if (ppg_) in.ppg = ppg_->to_evidence();
                if (speech_) in.speech = speech_->to_evidence();
                ppg_.reset();
                speech_.reset();
                return engine_.step(in);
            }
            default: break;
        }
        return std::nullopt;
    }

    fusion::FusionEngine& engine() { return engine_; }

private:
    fusion::FusionEngine engine_;
    std::optional<PpgFeatureBatch> ppg_;
    std::optional<speech::SpeechEmotionEvent> speech_;
};

SessionConfig config_from_log(std::span<const SessionEvent> log) {
    if (log.empty() || log.front().kind != EventKind::SessionStart) {
        fail(ErrorCode::CorruptLog, "log does not begin with session_start");
    }
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (log[i].seq != static_cast<std::int64_t>(i) + 1) {
            fail(ErrorCode::CorruptLog, "seq gap: expected " + std::to_string(i + 1) + " got " +
                                            std::to_string(log[i].seq));
        }
    }
    try {
        return SessionConfig::from_json(log.front().payload);
    } catch (const Error& e) {
        fail(ErrorCode::CorruptLog, std::string("bad session_start payload: ") + e.what());
    }
}

}  // namespace

ReplayOutput replay(std::span<const SessionEvent> log) {
    const SessionConfig config = config_from_log(log);
    LogWalker walker(config);
    ReplayOutput out;
    for (const auto& e : log) {
        std::optional<fusion::FusionEngine::Step> step;
        try {
            step = walker.feed(e);
        } catch (const Error& ex) {
            if (ex.code() == ErrorCode::CorruptLog) throw;
            fail(ErrorCode::CorruptLog, "seq " + std::to_string(e.seq) + ": bad record: " + ex.what());
        }
        if (!step) continue;
        out.updates.push_back(step->update);
        for (auto& a : step->alerts) out.alerts.push_back(std::move(a));
    }
    out.final_state = walker.engine().state();
    return out;
}

ReplayCheck verify_replay(std::span<const SessionEvent> log) {
    const auto out = replay(log);
    ReplayCheck check;
    std::vector<std::string> rec_updates, rec_alerts;
    for (const auto& e : log) {
        if (e.kind == EventKind::EmotionUpdate) rec_updates.push_back(e.payload.dump());
        if (e.kind == EventKind::Alert) rec_alerts.push_back(e.payload.dump());
    }
    check.recorded_updates = rec_updates.size();
    check.recorded_alerts = rec_alerts.size();
    auto compare = [&](const std::vector<std::string>& recorded, const std::vector<std::string>& replayed,
                       const char* what) {
        if (recorded.size() != replayed.size()) {
            check.identical = false;
            check.mismatches.push_back(std::string(what) + " count: recorded " + std::to_string(recorded.size()) +
                                       ", replayed " + std::to_string(replayed.size()));
        }
        for (std::size_t i = 0; i < std::min(recorded.size(), replayed.size()); ++i) {
            if (recorded[i] != replayed[i]) {
                check.identical = false;
                check.mismatches.push_back(std::string(what) + " #" + std::to_string(i) + ": recorded " + recorded[i] +
                                           " replayed " + replayed[i]);
            }
        }
    };
    std::vector<std::string> rep_updates, rep_alerts;
    for (const auto& u : out.updates) rep_updates.push_back(fusion::to_json(u).dump());
    for (const auto& a : out.alerts) rep_alerts.push_back(fusion::to_json(a).dump());
    compare(rec_updates, rep_updates, "update");
    compare(rec_alerts, rep_alerts, "alert");
    return check;
}

// --- session -----------------------------------------------------------------

Session::Session(SessionConfig config, fs::path dir)
    : config_(std::move(config)),
      dir_(std::move(dir)),
      engine_(config_.fusion, config_.alerts, config_.permissions()) {
    log_.open(dir_ / "events.jsonl", std::ios::binary | std::ios::app);
    if (!log_) fail(ErrorCode::IoError, "cannot open log in '" + dir_.string() + "'");
}

void Session::set_classifier(std::shared_ptr<const models::TrainedModel> model) {
    std::lock_guard lock(mu_);
    classifier_ = std::move(model);
}

SessionEvent Session::make_event(EventKind kind, std::int64_t t_ms, json payload) {
    return {next_seq_++, t_ms, kind, std::move(payload)};
}

void Session::append_locked(std::vector<SessionEvent>& batch) {
    if (batch.empty()) return;
    std::string text;
    for (const auto& e : batch) {
        text += e.to_json().dump();
        text += '\n';
    }
    log_.write(text.data(), static_cast<std::streamsize>(text.size()));
    log_.flush();
    if (!log_) fail(ErrorCode::IoError, "log append failed in '" + dir_.string() + "'");
    for (const auto& e : batch) {
        if (e.kind == EventKind::Alert) alerts_.push_back(fusion::alert_from_json(e.payload));
        events_.push_back(e);
    }
    cv_.notify_all();
}

void Session::check_open_locked() const {
    if (closed_) fail(ErrorCode::SessionClosed, "session '" + config_.session_id + "' is closed");
}

void Session::write_start() {
    std::lock_guard lock(mu_);
    std::vector<SessionEvent> batch{make_event(EventKind::SessionStart, 0, config_.to_json())};
    append_locked(batch);
}

std::vector<SessionEvent> Session::tick_locked(const fusion::IntervalInputs& inputs,
                                               const std::optional<PpgFeatureBatch>& ppg_batch) {
    check_open_locked();
    const auto perms = config_.permissions();
    if (inputs.speech && !perms.speech) {
        fail(ErrorCode::ConsentViolation, "speech evidence rejected: session '" + config_.session_id + "' is " +
                                              std::string(to_string(config_.modality)));
    }
    std::optional<PpgFeatureBatch> batch = ppg_batch;
    if (!batch && inputs.ppg) {
        batch = PpgFeatureBatch{inputs.ppg->t_ms, std::nullopt, inputs.ppg->mu, inputs.ppg->mu_stale,
                                inputs.ppg->classifier_dist};
    }
    if (batch && !perms.ppg) {
        fail(ErrorCode::ConsentViolation, "PPG evidence rejected: session '" + config_.session_id + "' is " +
                                              std::string(to_string(config_.modality)));
    }
    if (batch && batch->reactivity && *batch->reactivity < 0.0) {
        fail(ErrorCode::NegativeMu, "reactivity must be >= 0");
    }
    if (batch && !batch->dist && batch->features && classifier_) {
        const auto v = batch->features->to_vector();
        const auto probs = classifier_->predict_distribution(v);
        batch->dist = fusion::to_emotion_distribution(classifier_->label_set(), probs);
    }
    if (inputs.speech) inputs.speech->dist.validate();
    if (batch && batch->dist) batch->dist->validate();

    fusion::IntervalInputs in = inputs;
    if (batch) in.ppg = batch->to_evidence();
    const auto step = engine_.step(in);

    std::vector<SessionEvent> out;
    if (batch) out.push_back(make_event(EventKind::PpgFeatures, in.t_ms, batch->to_json()));
    if (in.speech) {
        speech::SpeechEmotionEvent se{in.speech->t_ms, in.speech->dist, in.speech->quality};
        out.push_back(make_event(EventKind::SpeechEmotion, in.t_ms, speech::to_json(se)));
    }
    out.push_back(make_event(EventKind::EmotionUpdate, in.t_ms, fusion::to_json(step.update)));
    for (const auto& a : step.alerts) out.push_back(make_event(EventKind::Alert, in.t_ms, fusion::to_json(a)));
    append_locked(out);
    return out;
}

std::vector<SessionEvent> Session::append_and_tick(const fusion::IntervalInputs& inputs,
                                                   const std::optional<PpgFeatureBatch>& ppg_batch) {
    std::lock_guard lock(mu_);
    return tick_locked(inputs, ppg_batch);
}

std::int64_t Session::interval_key(std::int64_t t_ms) const {
    const auto i = config_.fusion.interval_ms;
    const auto shifted = t_ms + i / 2;
    return shifted >= 0 ? shifted / i : -((-shifted + i - 1) / i);
}

bool Session::pending_complete(const Pending& p) const {
    const auto perms = config_.permissions();
    return (!perms.ppg || p.ppg) && (!perms.speech || p.speech);
}

std::vector<SessionEvent> Session::tick_pending_locked(std::int64_t key) {
    auto node = pending_.extract(key);
    fusion::IntervalInputs in;
    in.t_ms = key * config_.fusion.interval_ms;
    if (node.mapped().speech) in.speech = node.mapped().speech->to_evidence();
    last_ticked_key_ = key;
    return tick_locked(in, node.mapped().ppg);
}

std::vector<SessionEvent> Session::flush_before_locked(std::int64_t key) {
    std::vector<SessionEvent> out;
    while (!pending_.empty() && pending_.begin()->first < key) {
        auto events = tick_pending_locked(pending_.begin()->first);
        out.insert(out.end(), events.begin(), events.end());
    }
    return out;
}

std::vector<SessionEvent> Session::submit_ppg(PpgFeatureBatch batch) {
    std::lock_guard lock(mu_);
    check_open_locked();
    if (!config_.permissions().ppg) {
        fail(ErrorCode::ConsentViolation, "PPG evidence rejected: session '" + config_.session_id + "' is " +
                                              std::string(to_string(config_.modality)));
    }
    const auto key = interval_key(batch.t_ms);
    if (last_ticked_key_ && key <= *last_ticked_key_) {
        fail(ErrorCode::InvalidArgument, "PPG batch at t_ms " + std::to_string(batch.t_ms) +
                                             " belongs to an interval that has already ticked");
    }
    if (pending_.count(key) && pending_[key].ppg) {
        fail(ErrorCode::InvalidArgument, "duplicate PPG batch for interval ending " +
                                             std::to_string(key * config_.fusion.interval_ms));
    }
    auto out = flush_before_locked(key);
    pending_[key].ppg = std::move(batch);
    if (pending_complete(pending_[key])) {
        auto events = tick_pending_locked(key);
        out.insert(out.end(), events.begin(), events.end());
    }
    return out;
}

std::vector<SessionEvent> Session::submit_speech(const speech::SpeechEmotionEvent& event) {
    std::lock_guard lock(mu_);
    check_open_locked();
    if (!config_.permissions().speech) {
        fail(ErrorCode::ConsentViolation, "speech evidence rejected: session '" + config_.session_id + "' is " +
                                              std::string(to_string(config_.modality)));
    }
    event.dist.validate();
    const auto key = interval_key(event.t_ms);
    if (last_ticked_key_ && key <= *last_ticked_key_) {
        fail(ErrorCode::InvalidArgument, "speech event at t_ms " + std::to_string(event.t_ms) +
                                             " belongs to an interval that has already ticked");
    }
    if (pending_.count(key) && pending_[key].speech) {
        fail(ErrorCode::InvalidArgument, "duplicate speech event for interval ending " +
                                             std::to_string(key * config_.fusion.interval_ms));
    }
    auto out = flush_before_locked(key);
    pending_[key].speech = event;
    if (pending_complete(pending_[key])) {
        auto events = tick_pending_locked(key);
        out.insert(out.end(), events.begin(), events.end());
    }
    return out;
}

std::vector<SessionEvent> Session::flush() {
    std::lock_guard lock(mu_);
    check_open_locked();
    return flush_before_locked(std::numeric_limits<std::int64_t>::max());
}

std::optional<SessionEvent> Session::acknowledge(const std::string& alert_id, std::int64_t t_ms) {
    std::lock_guard lock(mu_);
    auto it = std::find_if(alerts_.begin(), alerts_.end(), [&](const fusion::Alert& a) { return a.alert_id == alert_id; });
    if (it == alerts_.end()) {
        fail(ErrorCode::AlertNotFound, "no alert '" + alert_id + "' in session '" + config_.session_id + "'");
    }
    if (it->acknowledged) return std::nullopt;
    check_open_locked();
    std::vector<SessionEvent> batch{make_event(EventKind::AlertAck, t_ms, {{"alert_id", alert_id}})};
    append_locked(batch);
    it = std::find_if(alerts_.begin(), alerts_.end(), [&](const fusion::Alert& a) { return a.alert_id == alert_id; });
    it->acknowledged = true;
    return batch.front();
}

SessionSummary Session::end_session() {
    std::lock_guard lock(mu_);
    check_open_locked();
    flush_before_locked(std::numeric_limits<std::int64_t>::max());
    const auto summary = summarize(config_, engine_.history(), alerts_, engine_.state().s_p);
    write_file_atomic(dir_ / "summary.json", summary.to_json().dump(2) + "\n");
    json payload = summary.to_json();
    payload.erase("updates");
    const std::int64_t t_end = events_.empty() ? 0 : events_.back().t_ms;
    std::vector<SessionEvent> batch{make_event(EventKind::SessionEnd, t_end, std::move(payload))};
    append_locked(batch);
    closed_ = true;
    cv_.notify_all();
    return summary;
}

bool Session::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

void Session::retain_raw_ppg(std::span<const ppg::PpgSample> samples) {
    if (!config_.debug_retain_raw) return;
    std::lock_guard lock(mu_);
    std::ofstream out(dir_ / "raw_ppg.jsonl", std::ios::app);
    if (!out) fail(ErrorCode::IoError, "cannot write raw PPG in '" + dir_.string() + "'");
    for (const auto& s : samples) out << json{{"t_ms", s.t_ms}, {"value", s.value}}.dump() << '\n';
}

std::vector<SessionEvent> Session::events_since(std::int64_t after_seq) const {
    std::lock_guard lock(mu_);
    const auto from = static_cast<std::size_t>(std::clamp<std::int64_t>(after_seq, 0, static_cast<std::int64_t>(events_.size())));
    return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
}

std::int64_t Session::last_seq() const {
    std::lock_guard lock(mu_);
    return events_.empty() ? 0 : events_.back().seq;
}

std::vector<SessionEvent> Session::wait_for_events(std::int64_t after_seq, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return static_cast<std::int64_t>(events_.size()) > after_seq || closed_; });
    const auto from = static_cast<std::size_t>(std::clamp<std::int64_t>(after_seq, 0, static_cast<std::int64_t>(events_.size())));
    return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
}

std::vector<fusion::EmotionUpdate> Session::updates() const {
    std::lock_guard lock(mu_);
    return engine_.history();
}

std::vector<fusion::Alert> Session::alerts() const {
    std::lock_guard lock(mu_);
    return alerts_;
}

fusion::FusionState Session::state() const {
    std::lock_guard lock(mu_);
    return engine_.state();
}

void Session::load(std::vector<SessionEvent> log) {
    std::lock_guard lock(mu_);
    LogWalker walker(config_);
    for (const auto& e : log) {
        try {
            walker.feed(e);
        } catch (const Error& ex) {
            fail(ErrorCode::CorruptLog, "seq " + std::to_string(e.seq) + ": bad record: " + ex.what());
        }
        if (e.kind == EventKind::Alert) alerts_.push_back(fusion::alert_from_json(e.payload));
        if (e.kind == EventKind::AlertAck) {
            const auto id = e.payload.value("alert_id", std::string());
            for (auto& a : alerts_) {
                if (a.alert_id == id) a.acknowledged = true;
            }
        }
        if (e.kind == EventKind::SessionEnd) closed_ = true;
        if (e.kind == EventKind::EmotionUpdate) last_ticked_key_ = interval_key(e.t_ms);
    }
    engine_ = walker.engine();
    next_seq_ = log.empty() ? 1 : log.back().seq + 1;
    events_ = std::move(log);
}

std::unique_ptr<Session> Session::restore(const fs::path& dir) {
    auto log = read_log(dir / "events.jsonl");
    auto config = config_from_log(log);
    auto s = std::make_unique<Session>(std::move(config), dir);
    s->load(std::move(log));
    return s;
}

// --- store -------------------------------------------------------------------

SessionStore::SessionStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) fail(ErrorCode::StoreUnwritable, "cannot create store root '" + root_.string() + "': " + ec.message());
    const fs::path probe = root_ / ".write_probe";
    {
        std::ofstream out(probe);
        if (!out || !(out << "ok")) fail(ErrorCode::StoreUnwritable, "store root '" + root_.string() + "' is not writable");
    }
    fs::remove(probe, ec);
}

namespace {

std::shared_ptr<const models::TrainedModel> load_classifier(const std::string& path) {
    if (path.empty()) return nullptr;
    return std::make_shared<const models::TrainedModel>(models::TrainedModel::from_json(read_json_file(path)));
}

}  // namespace

std::shared_ptr<Session> SessionStore::create(const SessionConfig& config) {
    config.validate();
    std::lock_guard lock(mu_);
    const fs::path dir = root_ / config.session_id;
    if (sessions_.count(config.session_id) || fs::exists(dir)) {
        fail(ErrorCode::DuplicateSession, "session '" + config.session_id + "' already exists");
    }
    auto classifier = load_classifier(config.model_path);
    std::error_code ec;
    fs::create_directory(dir, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message());
    write_file_atomic(dir / "config.json", config.to_json().dump(2) + "\n");
    auto session = std::make_shared<Session>(config, dir);
    session->set_classifier(std::move(classifier));
    session->write_start();
    sessions_[config.session_id] = session;
    return session;
}

std::shared_ptr<Session> SessionStore::get(const std::string& session_id) {
    std::lock_guard lock(mu_);
    if (auto it = sessions_.find(session_id); it != sessions_.end()) return it->second;
    const fs::path dir = root_ / session_id;
    if (!safe_token(session_id) || session_id == "clients" || !fs::exists(dir / "events.jsonl")) {
        fail(ErrorCode::SessionNotFound, "no session '" + session_id + "'");
    }
    std::shared_ptr<Session> session = Session::restore(dir);
    session->set_classifier(load_classifier(session->config().model_path));
    sessions_[session_id] = session;
    return session;
}

std::vector<std::string> SessionStore::list() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root_, ec)) {
        if (entry.is_directory() && fs::exists(entry.path() / "events.jsonl")) out.push_back(entry.path().filename());
    }
    for (const auto& [id, _] : sessions_) {
        if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace counsel::session
