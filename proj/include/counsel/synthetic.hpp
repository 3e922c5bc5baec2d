#pragma once

// Synthetic PPG generation: pulse trains for tests and the two-condition
// elicitation corpus used by the benchmark.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "counsel/models.hpp"
#include "counsel/numeric.hpp"
#include "counsel/ppg.hpp"

namespace counsel::synth {

struct PulseShape {
    double systolic_width_ms = 50.0;
    double diastolic_ratio = 0.35;
    double diastolic_width_ms = 60.0;
    /// Diastolic wave lag: min(max_lag, lag_fraction * IBI). Stays inside the
    /// detector's refractory period.
    double diastolic_max_lag_ms = 220.0;
    double diastolic_lag_fraction = 0.35;
};

struct PulseTrainOptions {
    double rate_hz = 100.0;
    std::int64_t start_ms = 0;
    std::int64_t duration_ms = 60000;
    double baseline = 0.0;
    double wander_amplitude = 0.0;
    double wander_hz = 0.05;
    double noise_sd = 0.0;
    PulseShape shape;
};

/// Renders beats at `beat_times_ms` with per-beat `amplitudes` onto a uniform
/// sample grid. `rng` is only needed when noise_sd > 0.
std::vector<ppg::PpgSample> render_pulse_train(std::span<const double> beat_times_ms,
                                               std::span<const double> amplitudes,
                                               const PulseTrainOptions& options, Rng* rng = nullptr);

/// Beat times for a constant rate, first beat half a period after start.
std::vector<double> constant_rate_beats(double bpm, std::int64_t start_ms, std::int64_t duration_ms);

struct LabeledBlock {
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;
    std::string label;
};

struct ParticipantStream {
    int participant = 0;
    std::vector<ppg::PpgSample> samples;
    std::vector<LabeledBlock> blocks;
};

struct ElicitationOptions {
    int n_participants = 30;
    int blocks_per_participant = 8;
    double block_s = 120.0;
    double rate_hz = 100.0;

    double sad_hr_bpm = 85.0;
    double relax_hr_bpm = 65.0;
    double sad_rmssd_ms = 20.0;
    double relax_rmssd_ms = 60.0;
    double sad_amplitude = 0.6;
    double relax_amplitude = 1.0;

    double participant_hr_sd = 4.0;
    double participant_rmssd_sd = 4.0;
    double block_hr_sd = 2.0;
    double block_rmssd_sd = 3.0;
};

/// Alternating sad/relax blocks per simulated participant, rendered to raw
/// PPG so that feature extraction runs on the real signal path.
std::vector<ParticipantStream> generate_synthetic_elicitation(std::uint64_t seed,
                                                              const ElicitationOptions& options = {});

/// Windows each stream, extracts HRV features and labels every window lying
/// entirely inside one block. Windows without features are skipped.
models::Dataset dataset_from_streams(const std::vector<ParticipantStream>& streams,
                                     const ppg::IngestOptions& ingest = {});

}  // namespace counsel::synth
