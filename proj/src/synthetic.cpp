#include "counsel/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "counsel/error.hpp"

namespace counsel::synth {

std::vector<ppg::PpgSample> render_pulse_train(std::span<const double> beat_times_ms,
                                               std::span<const double> amplitudes,
                                               const PulseTrainOptions& options, Rng* rng) {
    if (beat_times_ms.size() != amplitudes.size()) {
        fail(ErrorCode::InvalidArgument, "render_pulse_train: beats/amplitudes length mismatch");
    }
    const double period = 1000.0 / options.rate_hz;
    const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(options.duration_ms) / period + 1e-9));
    std::vector<ppg::PpgSample> out(n);
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ts = options.start_ms + static_cast<std::int64_t>(std::llround(static_cast<double>(i) * period));
        out[i].t_ms = ts;
        t[i] = static_cast<double>(ts);
        const double phase = 2.0 * std::numbers::pi * options.wander_hz * t[i] / 1000.0;
        out[i].value = options.baseline + options.wander_amplitude * std::sin(phase);
    }

    const auto& shape = options.shape;
    const double reach = 5.0 * std::max(shape.systolic_width_ms, shape.diastolic_width_ms) + shape.diastolic_max_lag_ms;
    for (std::size_t b = 0; b < beat_times_ms.size(); ++b) {
        const double tb = beat_times_ms[b];
        const double ibi = b + 1 < beat_times_ms.size() ? beat_times_ms[b + 1] - tb
                           : b > 0                      ? tb - beat_times_ms[b - 1]
                                                        : 1000.0;
        const double lag = std::min(shape.diastolic_max_lag_ms, shape.diastolic_lag_fraction * ibi);
        const auto first = std::lower_bound(t.begin(), t.end(), tb - reach) - t.begin();
        for (auto i = static_cast<std::size_t>(first); i < n && t[i] <= tb + reach; ++i) {
            const double ds = (t[i] - tb) / shape.systolic_width_ms;
            const double dd = (t[i] - tb - lag) / shape.diastolic_width_ms;
            out[i].value += amplitudes[b] * (std::exp(-0.5 * ds * ds) + shape.diastolic_ratio * std::exp(-0.5 * dd * dd));
        }
    }

    if (options.noise_sd > 0.0) {
        if (!rng) fail(ErrorCode::InvalidArgument, "render_pulse_train: noise requires an Rng");
        for (auto& s : out) s.value += rng->normal(0.0, options.noise_sd);
    }
    return out;
}

std::vector<double> constant_rate_beats(double bpm, std::int64_t start_ms, std::int64_t duration_ms) {
    const double ibi = 60000.0 / bpm;
    std::vector<double> beats;
    for (double tb = static_cast<double>(start_ms) + ibi / 2.0; tb < static_cast<double>(start_ms + duration_ms);
         tb += ibi) {
        beats.push_back(tb);
    }
    return beats;
}

namespace {

struct BlockParams {
    double mean_ibi_ms;
    double ibi_sd_ms;
    double amplitude;
};

}  // namespace

std::vector<ParticipantStream> generate_synthetic_elicitation(std::uint64_t seed, const ElicitationOptions& options) {
    if (options.n_participants < 1) fail(ErrorCode::InvalidArgument, "n_participants must be >= 1");
    if (options.blocks_per_participant < 1) fail(ErrorCode::InvalidArgument, "blocks_per_participant must be >= 1");

    Rng rng(seed);
    const auto block_ms = static_cast<std::int64_t>(std::llround(options.block_s * 1000.0));
    const std::int64_t total_ms = block_ms * options.blocks_per_participant;

    std::vector<ParticipantStream> streams;
    for (int p = 0; p < options.n_participants; ++p) {
        ParticipantStream stream;
        stream.participant = p;

        const double hr_offset = rng.normal(0.0, options.participant_hr_sd);
        const double rmssd_offset = rng.normal(0.0, options.participant_rmssd_sd);
        const double amp_scale = rng.uniform(0.8, 1.2);
        const bool sad_first = rng.uniform() < 0.5;

        std::vector<BlockParams> params;
        for (int b = 0; b < options.blocks_per_participant; ++b) {
            const bool sad = (b % 2 == 0) == sad_first;
            stream.blocks.push_back({b * block_ms, (b + 1) * block_ms, sad ? "sad" : "relax"});
            const double hr = (sad ? options.sad_hr_bpm : options.relax_hr_bpm) + hr_offset +
                              rng.normal(0.0, options.block_hr_sd);
            const double rmssd = std::max(5.0, (sad ? options.sad_rmssd_ms : options.relax_rmssd_ms) + rmssd_offset +
                                                   rng.normal(0.0, options.block_rmssd_sd));
            // White IBI noise with sd s gives successive differences with sd s*sqrt(2).
            params.push_back({60000.0 / hr, rmssd / std::numbers::sqrt2,
                              (sad ? options.sad_amplitude : options.relax_amplitude) * amp_scale});
        }

        std::vector<double> beats, amps;
        double tb = rng.uniform(200.0, 800.0);
        while (tb < static_cast<double>(total_ms)) {
            const auto block = std::min<std::size_t>(static_cast<std::size_t>(tb / static_cast<double>(block_ms)),
                                                     params.size() - 1);
            const auto& bp = params[block];
            beats.push_back(tb);
            amps.push_back(bp.amplitude * (1.0 + rng.normal(0.0, 0.03)));
            tb += std::clamp(bp.mean_ibi_ms + rng.normal(0.0, bp.ibi_sd_ms), 350.0, 1900.0);
        }

        PulseTrainOptions render;
        render.rate_hz = options.rate_hz;
        render.start_ms = 0;
        render.duration_ms = total_ms;
        render.wander_amplitude = 0.15;
        render.wander_hz = rng.uniform(0.03, 0.08);
        render.noise_sd = 0.01;
        stream.samples = render_pulse_train(beats, amps, render, &rng);
        streams.push_back(std::move(stream));
    }
    return streams;
}

models::Dataset dataset_from_streams(const std::vector<ParticipantStream>& streams, const ppg::IngestOptions& ingest) {
    std::vector<std::vector<double>> features;
    std::vector<std::string> labels;
    std::vector<int> participants;
    for (const auto& stream : streams) {
        for (const auto& w : ppg::ingest_ppg_stream(stream.samples, ingest)) {
            if (!w.features) continue;
            const auto block = std::find_if(stream.blocks.begin(), stream.blocks.end(), [&](const LabeledBlock& b) {
                return b.start_ms <= w.window.start_ms && w.window.end_ms <= b.end_ms;
            });
            if (block == stream.blocks.end()) continue;
            const auto v = w.features->to_vector();
            features.emplace_back(v.begin(), v.end());
            labels.push_back(block->label);
            participants.push_back(stream.participant);
        }
    }
    return models::Dataset::from_named(features, labels, participants);
}

}  // namespace counsel::synth
