#pragma once

// Offline glue shared by the CLI and the service: file formats, window to
// batch conversion, full-session replay of recorded inputs and report writing.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "counsel/followup.hpp"
#include "counsel/models.hpp"
#include "counsel/ppg.hpp"
#include "counsel/report.hpp"
#include "counsel/session.hpp"
#include "counsel/speech.hpp"
#include "counsel/synthetic.hpp"

namespace counsel::pipeline {

/// {"t_ms", "value"} per line.
std::vector<ppg::PpgSample> load_ppg_jsonl(const std::string& path);
void save_ppg_jsonl(const std::vector<ppg::PpgSample>& samples, const std::string& path);

std::vector<speech::SpeechEmotionEvent> load_speech_events_jsonl(const std::string& path);
void save_speech_events_jsonl(const std::vector<speech::SpeechEmotionEvent>& events, const std::string& path);

void save_transcript_jsonl(const std::vector<report::TranscriptTurn>& turns, const std::string& path);

std::shared_ptr<const models::TrainedModel> load_model(const std::string& path);
void save_model(const models::TrainedModel& model, const std::string& path);

/// Interval batch from one PPG window: HRV features when available, the
/// reactivity mean, and the classifier posterior when a model is given.
session::PpgFeatureBatch batch_from_window(const ppg::WindowResult& window, const models::TrainedModel* classifier);

/// A synthetic single-client session: raw PPG over alternating sad/relax
/// blocks, matching per-interval speech events and a scripted transcript.
struct SessionFixture {
    std::vector<ppg::PpgSample> ppg;
    std::vector<speech::SpeechEmotionEvent> speech;
    std::vector<report::TranscriptTurn> transcript;
    std::vector<synth::LabeledBlock> blocks;
};

SessionFixture synthesize_session_fixture(std::uint64_t seed, int blocks = 8, double block_s = 120.0);

struct OfflineInputs {
    std::vector<ppg::PpgSample> ppg;
    std::vector<speech::SpeechEmotionEvent> speech;
    std::vector<report::TranscriptTurn> transcript;
    ppg::IngestOptions ingest;
};

struct OfflineResult {
    session::SessionSummary summary;
    ppg::IngestStats ingest;
    std::size_t ppg_batches = 0;
    std::size_t speech_events = 0;
};

/// Creates the session, feeds every consented input in time order, ends it
/// and registers it with the client's history.
OfflineResult run_offline_session(session::SessionStore& store, followup::ClientDirectory* clients,
                                  const session::SessionConfig& config, const OfflineInputs& inputs,
                                  std::shared_ptr<const models::TrainedModel> classifier);

/// Builds the report for a stored session from the given transcript (or the
/// session's transcript.jsonl), conditioning on the client's previous session,
/// and writes report.json and report.md next to the log.
report::StructuredReport write_session_report(session::SessionStore& store, followup::ClientDirectory& clients,
                                              const std::string& session_id,
                                              std::optional<std::vector<report::TranscriptTurn>> transcript,
                                              TextGenerator* generator,
                                              const report::PromptTemplate& prompt = report::PromptTemplate::default_template());

}  // namespace counsel::pipeline
