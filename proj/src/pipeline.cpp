#include "counsel/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "counsel/error.hpp"
#include "counsel/numeric.hpp"

namespace counsel::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(json::parse(line));
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            fail(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text) || !out.flush()) fail(ErrorCode::IoError, "cannot write '" + path + "'");
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::vector<ppg::PpgSample> load_ppg_jsonl(const std::string& path) {
    std::vector<ppg::PpgSample> out;
    for_each_json_line(path, [&](const json& j) {
        out.push_back({j.at("t_ms").get<std::int64_t>(), j.at("value").get<double>()});
    });
    return out;
}

void save_ppg_jsonl(const std::vector<ppg::PpgSample>& samples, const std::string& path) {
    std::string text;
    for (const auto& s : samples) text += json{{"t_ms", s.t_ms}, {"value", s.value}}.dump() + "\n";
    write_text(path, text);
}

std::vector<speech::SpeechEmotionEvent> load_speech_events_jsonl(const std::string& path) {
    std::vector<speech::SpeechEmotionEvent> out;
    for_each_json_line(path, [&](const json& j) { out.push_back(speech::speech_event_from_json(j)); });
    return out;
}

void save_speech_events_jsonl(const std::vector<speech::SpeechEmotionEvent>& events, const std::string& path) {
    std::string text;
    for (const auto& e : events) text += speech::to_json(e).dump() + "\n";
    write_text(path, text);
}

void save_transcript_jsonl(const std::vector<report::TranscriptTurn>& turns, const std::string& path) {
    std::string text;
    for (const auto& t : turns) {
        text += json{{"t_ms", t.t_ms}, {"role", report::to_string(t.role)}, {"text", t.text}}.dump() + "\n";
    }
    write_text(path, text);
}

std::shared_ptr<const models::TrainedModel> load_model(const std::string& path) {
    const std::string text = read_text(path);
    try {
        return std::make_shared<const models::TrainedModel>(models::TrainedModel::from_json(json::parse(text)));
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, path + ": " + e.what());
    }
}

void save_model(const models::TrainedModel& model, const std::string& path) {
    write_text(path, model.to_json().dump() + "\n");
}

session::PpgFeatureBatch batch_from_window(const ppg::WindowResult& w, const models::TrainedModel* classifier) {
    session::PpgFeatureBatch b;
    b.t_ms = w.window.end_ms;
    b.features = w.features;
    b.reactivity = w.reactivity.mu;
    b.reactivity_stale = w.reactivity.stale;
    if (w.reactivity.stale && w.reactivity.mu == 0.0) b.reactivity.reset();
    if (classifier && w.features) {
        const auto v = w.features->to_vector();
        b.dist = fusion::to_emotion_distribution(classifier->label_set(), classifier->predict_distribution(v));
    }
    return b;
}

// --- synthetic session ---------------------------------------------------------

SessionFixture synthesize_session_fixture(std::uint64_t seed, int blocks, double block_s) {
    synth::ElicitationOptions opt;
    opt.n_participants = 1;
    opt.blocks_per_participant = blocks;
    opt.block_s = block_s;
    auto streams = synth::generate_synthetic_elicitation(seed, opt);
    SessionFixture f;
    f.ppg = std::move(streams.front().samples);
    f.blocks = std::move(streams.front().blocks);

    Rng rng(seed ^ 0x5eed5eedULL);
    auto label_at = [&](std::int64_t t) -> std::string {
        for (const auto& b : f.blocks) {
            if (t >= b.start_ms && t < b.end_ms) return b.label;
        }
        return "relax";
    };
    const std::int64_t interval = 60000;
    const std::int64_t end = f.blocks.empty() ? 0 : f.blocks.back().end_ms;

    static const char* kSadLines[] = {
        "I keep waking up at four and lying there going over everything that went wrong at work.",
        "My sister called and I just could not bring myself to answer the phone.",
        "Honestly most days I feel like I am letting everyone down, especially my kids.",
        "The apartment is a mess and I cannot find the energy to start cleaning.",
        "Since the layoff rumours started I have barely eaten lunch.",
        "I cancelled dinner with friends again because I did not want them to see me like this."};
    static const char* kRelaxLines[] = {
        "I tried the breathing exercise on the train and it actually helped a little.",
        "We went hiking on Sunday and I noticed I was laughing for the first time in weeks.",
        "My manager said the presentation went well, which surprised me.",
        "I have been sleeping better since I stopped checking email after nine.",
        "I started painting again, just small watercolours in the evening.",
        "Talking to my neighbour about gardening was easier than I expected."};
    static const char* kCounselorLines[] = {
        "How has the past week been for you?", "What did you notice in your body when that happened?",
        "That sounds really hard. Can you tell me more?", "What helped you get through that moment?",
        "How would you describe your mood right now?", "What would you like to focus on today?"};

    for (std::int64_t k = 1; k * interval <= end; ++k) {
        const std::int64_t lo = (k - 1) * interval;
        const std::string label = label_at(lo + interval / 2);
        const bool sad = label == "sad";
        std::array<double, 3> p = sad ? std::array<double, 3>{0.62, 0.28, 0.10} : std::array<double, 3>{0.08, 0.37, 0.55};
        for (auto& v : p) v = std::max(0.01, v + 0.05 * (rng.uniform() - 0.5));
        speech::SpeechEmotionEvent e;
        e.t_ms = k * interval;
        e.dist = fusion::EmotionDistribution::normalized(p);
        e.quality = fusion::SpeechQuality::High;
        f.speech.push_back(e);

        f.transcript.push_back({lo + 5000, report::Role::Counselor, kCounselorLines[rng.index(6)]});
        const char* const* bank = sad ? kSadLines : kRelaxLines;
        f.transcript.push_back({lo + 20000, report::Role::Client, bank[rng.index(6)]});
        f.transcript.push_back({lo + 40000, report::Role::Client, bank[rng.index(6)]});
    }
    return f;
}

// --- offline session -----------------------------------------------------------

OfflineResult run_offline_session(session::SessionStore& store, followup::ClientDirectory* clients,
                                  const session::SessionConfig& config, const OfflineInputs& inputs,
                                  std::shared_ptr<const models::TrainedModel> classifier) {
    auto s = store.create(config);
    if (classifier) s->set_classifier(classifier);
    const auto perms = config.permissions();
    OfflineResult result;

    std::vector<session::PpgFeatureBatch> batches;
    if (perms.ppg && !inputs.ppg.empty()) {
        s->retain_raw_ppg(inputs.ppg);
        for (const auto& w : ppg::ingest_ppg_stream(inputs.ppg, inputs.ingest, &result.ingest)) {
            batches.push_back(batch_from_window(w, classifier.get()));
        }
    }
    std::vector<speech::SpeechEmotionEvent> speech_events;
    if (perms.speech) speech_events = inputs.speech;

    std::size_t i = 0, j = 0;
    while (i < batches.size() || j < speech_events.size()) {
        const bool take_ppg =
            j >= speech_events.size() || (i < batches.size() && batches[i].t_ms <= speech_events[j].t_ms);
        if (take_ppg) {
            s->submit_ppg(batches[i++]);
            ++result.ppg_batches;
        } else {
            s->submit_speech(speech_events[j++]);
            ++result.speech_events;
        }
    }
    if (!inputs.transcript.empty()) save_transcript_jsonl(inputs.transcript, (s->dir() / "transcript.jsonl").string());
    result.summary = s->end_session();
    if (clients && !config.client_pseudonym.empty()) clients->register_session(config.client_pseudonym, config.session_id);
    return result;
}

report::StructuredReport write_session_report(session::SessionStore& store, followup::ClientDirectory& clients,
                                              const std::string& session_id,
                                              std::optional<std::vector<report::TranscriptTurn>> transcript,
                                              TextGenerator* generator, const report::PromptTemplate& prompt) {
    auto s = store.get(session_id);
    report::ReportInputs in;
    if (transcript) {
        in.transcript = std::move(*transcript);
    } else if (fs::exists(s->dir() / "transcript.jsonl")) {
        in.transcript = report::load_transcript_jsonl((s->dir() / "transcript.jsonl").string());
    }
    if (in.transcript.empty()) fail(ErrorCode::EmptyTranscript, "no transcript for session '" + session_id + "'");

    const auto& config = s->config();
    if (s->closed() && fs::exists(s->dir() / "summary.json")) {
        in.summary = session::SessionSummary::from_json(json::parse(read_text(s->dir() / "summary.json")));
    } else {
        in.summary = session::summarize(config, s->updates(), s->alerts(), s->state().s_p);
    }

    if (!config.client_pseudonym.empty()) {
        const auto history = clients.sessions(config.client_pseudonym);
        auto it = std::find(history.begin(), history.end(), session_id);
        if (it != history.begin()) {
            const auto prev = it == history.end() ? history.back() : *(it - 1);
            const fs::path dir = store.root() / prev;
            if (prev != session_id && fs::exists(dir / "summary.json")) {
                in.prior_summary = session::SessionSummary::from_json(json::parse(read_text(dir / "summary.json")));
            }
            if (prev != session_id && fs::exists(dir / "report.md")) in.prior_reports = read_text(dir / "report.md");
        }
    }

    auto r = report::generate_report(in, generator, prompt);
    r.session_id = session_id;
    write_text((s->dir() / "report.json").string(), r.to_json().dump(2) + "\n");
    write_text((s->dir() / "report.md").string(), r.to_markdown());
    return r;
}

}  // namespace counsel::pipeline
