#pragma once

// PPG windowing, pulse detection and time-domain HRV.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace counsel::ppg {

struct PpgSample {
    std::int64_t t_ms = 0;
    double value = 0.0;
};

struct PpgWindow {
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;
    std::vector<PpgSample> samples;
    double window_len_s = 60.0;
    /// Samples synthesized by zero-order hold across stream gaps.
    std::size_t filled = 0;
};

/// Inter-beat intervals after the [300, 2000] ms physiological gate.
struct IbiSeries {
    static constexpr double kMinIbiMs = 300.0;
    static constexpr double kMaxIbiMs = 2000.0;

    std::vector<double> ibis_ms;
    std::size_t rejected = 0;

    static IbiSeries gate(std::span<const double> raw_ibis_ms);
    static IbiSeries from_peaks(std::span<const std::int64_t> peak_times_ms);

    double rejection_ratio() const;
};

struct HrvFeatures {
    static constexpr std::size_t kVectorSize = 5;

    double mean_hr_bpm = 0.0;
    double mean_ibi_ms = 0.0;
    double sdnn_ms = 0.0;
    double rmssd_ms = 0.0;
    double pnn50 = 0.0;
    std::size_t n_beats = 0;
    double artifact_ratio = 0.0;

    /// Fixed-order classifier input: hr, ibi, sdnn, rmssd, pnn50.
    std::array<double, kVectorSize> to_vector() const {
        return {mean_hr_bpm, mean_ibi_ms, sdnn_ms, rmssd_ms, pnn50};
    }
    static const std::array<const char*, kVectorSize>& vector_names();
};

struct ReactivitySample {
    std::int64_t t_ms = 0;
    double mu = 0.0;
    /// Set when no beat was found and mu was carried over.
    bool stale = false;
};

struct PeakDetection {
    std::vector<std::size_t> indices;
    std::vector<std::int64_t> times_ms;
    /// No peak found over the window (FlatSignal, reported not thrown).
    bool flat = false;
};

/// Strict local maxima (plateaus collapse to their first sample) above
/// rolling median + 0.5 * rolling IQR over a centred 5 s horizon, then a
/// refractory filter that keeps the higher of two peaks closer than
/// `refractory_ms`. Throws EmptyWindow on an empty window.
PeakDetection detect_pulse_peaks(const PpgWindow& window, int refractory_ms = 300);

/// Per-sample adaptive threshold used by detect_pulse_peaks.
std::vector<double> adaptive_threshold(const PpgWindow& window, std::int64_t horizon_ms = 5000);

/// Throws InsufficientBeats when fewer than two IBIs survive gating.
HrvFeatures compute_hrv_features(const IbiSeries& ibis);

nlohmann::json to_json(const HrvFeatures& f);
HrvFeatures hrv_from_json(const nlohmann::json& j);

/// Least-squares linear detrend of the window values.
PpgWindow detrend(const PpgWindow& window);

/// Mean (peak - preceding trough) amplitude over detected beats after linear
/// detrending. With no beats (or no samples) the previous mu is carried over
/// and the sample is marked stale.
ReactivitySample reactivity_envelope(const PpgWindow& window,
                                     std::optional<double> previous_mu = std::nullopt,
                                     int refractory_ms = 300);

struct IngestOptions {
    double declared_rate_hz = 100.0;
    double window_len_s = 60.0;
    int refractory_ms = 300;
    /// Relative tolerance on the declared rate before RateMismatch is logged.
    double rate_tolerance = 0.05;
};

struct WindowResult {
    PpgWindow window;
    std::vector<std::int64_t> peak_times_ms;
    std::optional<HrvFeatures> features;
    ReactivitySample reactivity;
    bool flat = false;
    double artifact_ratio = 0.0;
    std::vector<std::string> warnings;
};

struct IngestStats {
    std::size_t total_samples = 0;
    std::size_t windowed_samples = 0;
    std::size_t rejected_nonmonotone = 0;
    std::size_t discarded_tail = 0;
    std::size_t filled_samples = 0;
    std::size_t windows = 0;
    std::vector<std::string> warnings;
};

/// Single-consumer streaming windower. Samples are pushed in time order and
/// complete non-overlapping windows come out; gaps wider than two sample
/// periods are filled by zero-order hold.
class PpgStreamIngester {
public:
    explicit PpgStreamIngester(IngestOptions options = {});

    std::vector<WindowResult> push(const PpgSample& sample);
    /// Emits the trailing window if it is complete; otherwise its samples
    /// are counted as discarded.
    std::optional<WindowResult> finish();

    const IngestStats& stats() const { return stats_; }

private:
    void append(const PpgSample& sample, bool filled, std::vector<WindowResult>& out);
    WindowResult close_window();

    IngestOptions options_;
    IngestStats stats_;
    double period_ms_;
    std::int64_t window_len_ms_;
    std::optional<PpgSample> last_;
    PpgWindow current_;
    bool started_ = false;
    std::optional<double> previous_mu_;
};

std::vector<WindowResult> ingest_ppg_stream(std::span<const PpgSample> samples,
                                            const IngestOptions& options = {},
                                            IngestStats* stats = nullptr);

}  // namespace counsel::ppg
