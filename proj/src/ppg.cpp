#include "counsel/ppg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "counsel/error.hpp"
#include "counsel/numeric.hpp"

namespace counsel::ppg {

namespace {

// Sliding sorted multiset of values, kept as a sorted vector. The horizon is a
// few hundred samples, so memmove-based insert/erase beats a tree here.
class SortedWindow {
public:
    void insert(double v) { values_.insert(std::upper_bound(values_.begin(), values_.end(), v), v); }
    void erase(double v) {
        auto it = std::lower_bound(values_.begin(), values_.end(), v);
        if (it != values_.end() && *it == v) values_.erase(it);
    }
    std::span<const double> view() const { return values_; }

private:
    std::vector<double> values_;
};

bool is_local_max(const std::vector<PpgSample>& s, std::size_t i) {
    if (i == 0 || i + 1 >= s.size()) return false;
    const double v = s[i].value;
    if (!(v > s[i - 1].value)) return false;
    std::size_t j = i + 1;
    while (j < s.size() && s[j].value == v) ++j;
    return j < s.size() && s[j].value < v;
}

}  // namespace

IbiSeries IbiSeries::gate(std::span<const double> raw_ibis_ms) {
    IbiSeries out;
    out.ibis_ms.reserve(raw_ibis_ms.size());
    for (double ibi : raw_ibis_ms) {
        if (std::isfinite(ibi) && ibi >= kMinIbiMs && ibi <= kMaxIbiMs) {
            out.ibis_ms.push_back(ibi);
        } else {
            ++out.rejected;
        }
    }
    return out;
}

IbiSeries IbiSeries::from_peaks(std::span<const std::int64_t> peak_times_ms) {
    std::vector<double> raw;
    for (std::size_t i = 1; i < peak_times_ms.size(); ++i) {
        raw.push_back(static_cast<double>(peak_times_ms[i] - peak_times_ms[i - 1]));
    }
    return gate(raw);
}

double IbiSeries::rejection_ratio() const {
    const std::size_t total = ibis_ms.size() + rejected;
    return total == 0 ? 0.0 : static_cast<double>(rejected) / static_cast<double>(total);
}

const std::array<const char*, HrvFeatures::kVectorSize>& HrvFeatures::vector_names() {
    static const std::array<const char*, kVectorSize> names = {"mean_hr_bpm", "mean_ibi_ms", "sdnn_ms",
                                                               "rmssd_ms", "pnn50"};
    return names;
}

std::vector<double> adaptive_threshold(const PpgWindow& window, std::int64_t horizon_ms) {
    const auto& s = window.samples;
    const std::int64_t half = horizon_ms / 2;
    std::vector<double> out(s.size());
    SortedWindow sorted;
    std::size_t lo = 0;
    std::size_t hi = 0;  // one past the last inserted sample
    for (std::size_t i = 0; i < s.size(); ++i) {
        while (hi < s.size() && s[hi].t_ms <= s[i].t_ms + half) sorted.insert(s[hi++].value);
        while (s[lo].t_ms < s[i].t_ms - half) sorted.erase(s[lo++].value);
        const auto view = sorted.view();
        const double median = sorted_quantile(view, 0.5);
        const double iqr = sorted_quantile(view, 0.75) - sorted_quantile(view, 0.25);
        out[i] = median + 0.5 * iqr;
    }
    return out;
}

PeakDetection detect_pulse_peaks(const PpgWindow& window, int refractory_ms) {
    if (window.samples.empty()) fail(ErrorCode::EmptyWindow, "detect_pulse_peaks: window has no samples");
    if (refractory_ms <= 0) fail(ErrorCode::InvalidArgument, "detect_pulse_peaks: refractory_ms must be > 0");

    const auto& s = window.samples;
    const auto threshold = adaptive_threshold(window);

    PeakDetection out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        if (!is_local_max(s, i) || !(s[i].value > threshold[i])) continue;
        if (!out.indices.empty()) {
            const std::size_t last = out.indices.back();
            if (s[i].t_ms - s[last].t_ms < refractory_ms) {
                if (s[i].value > s[last].value) {
                    out.indices.back() = i;
                    out.times_ms.back() = s[i].t_ms;
                }
                continue;
            }
        }
        out.indices.push_back(i);
        out.times_ms.push_back(s[i].t_ms);
    }
    out.flat = out.indices.empty();
    return out;
}

HrvFeatures compute_hrv_features(const IbiSeries& ibis) {
    const auto& x = ibis.ibis_ms;
    if (x.size() < 2) {
        fail(ErrorCode::InsufficientBeats,
             "compute_hrv_features: " + std::to_string(x.size()) + " IBI(s) after gating, need at least 2");
    }
    const double n = static_cast<double>(x.size());
    double sum = 0.0;
    for (double v : x) sum += v;
    const double mean_ibi = sum / n;

    double ss = 0.0;
    for (double v : x) ss += (v - mean_ibi) * (v - mean_ibi);

    double sq_diff = 0.0;
    std::size_t over50 = 0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        const double d = x[i] - x[i - 1];
        sq_diff += d * d;
        if (std::abs(d) > 50.0) ++over50;
    }
    const double n_diff = static_cast<double>(x.size() - 1);

    HrvFeatures f;
    f.mean_ibi_ms = mean_ibi;
    f.mean_hr_bpm = 60000.0 / mean_ibi;
    f.sdnn_ms = std::sqrt(ss / n);
    f.rmssd_ms = std::sqrt(sq_diff / n_diff);
    f.pnn50 = static_cast<double>(over50) / n_diff;
    f.n_beats = x.size() + 1;
    f.artifact_ratio = ibis.rejection_ratio();
    return f;
}

PpgWindow detrend(const PpgWindow& window) {
    PpgWindow out = window;
    const auto& s = window.samples;
    if (s.size() < 2) {
        for (auto& p : out.samples) p.value = 0.0;
        return out;
    }
    const double n = static_cast<double>(s.size());
    // Time relative to the first sample keeps the sums well conditioned.
    const double t0 = static_cast<double>(s.front().t_ms);
    double st = 0.0, sv = 0.0;
    for (const auto& p : s) {
        st += static_cast<double>(p.t_ms) - t0;
        sv += p.value;
    }
    const double mt = st / n;
    const double mv = sv / n;
    double stt = 0.0, stv = 0.0;
    for (const auto& p : s) {
        const double dt = static_cast<double>(p.t_ms) - t0 - mt;
        stt += dt * dt;
        stv += dt * (p.value - mv);
    }
    const double slope = stt > 0.0 ? stv / stt : 0.0;
    for (auto& p : out.samples) {
        const double dt = static_cast<double>(p.t_ms) - t0 - mt;
        p.value = p.value - (mv + slope * dt);
    }
    return out;
}

namespace {

double envelope_from_peaks(const PpgWindow& detrended, const PeakDetection& peaks) {
    const auto& s = detrended.samples;
    double total = 0.0;
    std::size_t from = 0;
    for (std::size_t idx : peaks.indices) {
        double trough = s[from].value;
        for (std::size_t j = from; j < idx; ++j) trough = std::min(trough, s[j].value);
        total += s[idx].value - trough;
        from = idx + 1;
    }
    return total / static_cast<double>(peaks.indices.size());
}

}  // namespace

ReactivitySample reactivity_envelope(const PpgWindow& window, std::optional<double> previous_mu,
                                     int refractory_ms) {
    ReactivitySample out;
    out.t_ms = window.end_ms;
    if (window.samples.empty()) {
        out.mu = previous_mu.value_or(0.0);
        out.stale = true;
        return out;
    }
    const PpgWindow detrended = detrend(window);
    const PeakDetection peaks = detect_pulse_peaks(detrended, refractory_ms);
    if (peaks.flat) {
        out.mu = previous_mu.value_or(0.0);
        out.stale = true;
        return out;
    }
    out.mu = envelope_from_peaks(detrended, peaks);
    return out;
}

PpgStreamIngester::PpgStreamIngester(IngestOptions options)
    : options_(options),
      period_ms_(1000.0 / options.declared_rate_hz),
      window_len_ms_(static_cast<std::int64_t>(std::llround(options.window_len_s * 1000.0))) {
    if (!(options.declared_rate_hz > 0.0) || !(options.window_len_s > 0.0)) {
        fail(ErrorCode::InvalidArgument, "PpgStreamIngester: rate and window length must be positive");
    }
}

WindowResult PpgStreamIngester::close_window() {
    WindowResult r;
    r.window = std::move(current_);
    current_ = PpgWindow{};
    current_.window_len_s = options_.window_len_s;

    const auto& w = r.window;
    const std::size_t real = w.samples.size() - w.filled;
    stats_.windowed_samples += real;
    ++stats_.windows;

    const double expected = options_.window_len_s * options_.declared_rate_hz;
    const double observed = static_cast<double>(w.samples.size());
    if (std::abs(observed - expected) > options_.rate_tolerance * expected) {
        std::ostringstream msg;
        msg << "RateMismatch: window [" << w.start_ms << ", " << w.end_ms << ") has " << w.samples.size()
            << " samples, declared rate implies " << expected;
        r.warnings.push_back(msg.str());
        stats_.warnings.push_back(msg.str());
    }

    const double filled_ratio =
        w.samples.empty() ? 0.0 : static_cast<double>(w.filled) / static_cast<double>(w.samples.size());

    if (w.samples.empty()) {
        r.flat = true;
        r.reactivity = reactivity_envelope(w, previous_mu_, options_.refractory_ms);
        r.artifact_ratio = 1.0;
        return r;
    }

    const PpgWindow detrended = detrend(w);
    const PeakDetection peaks = detect_pulse_peaks(detrended, options_.refractory_ms);
    r.peak_times_ms = peaks.times_ms;
    r.flat = peaks.flat;
    if (peaks.flat) {
        r.reactivity = {w.end_ms, previous_mu_.value_or(0.0), true};
        r.warnings.push_back("FlatSignal: no pulse peaks in window");
    } else {
        r.reactivity = {w.end_ms, envelope_from_peaks(detrended, peaks), false};
        previous_mu_ = r.reactivity.mu;
    }

    const IbiSeries ibis = IbiSeries::from_peaks(peaks.times_ms);
    r.artifact_ratio = std::max(ibis.rejection_ratio(), filled_ratio);
    try {
        HrvFeatures f = compute_hrv_features(ibis);
        f.artifact_ratio = r.artifact_ratio;
        r.features = f;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::InsufficientBeats) throw;
        r.warnings.push_back(e.what());
    }
    return r;
}

void PpgStreamIngester::append(const PpgSample& sample, bool filled, std::vector<WindowResult>& out) {
    if (!started_) {
        started_ = true;
        current_.start_ms = sample.t_ms;
        current_.end_ms = sample.t_ms + window_len_ms_;
        current_.window_len_s = options_.window_len_s;
    }
    while (sample.t_ms >= current_.end_ms) {
        const std::int64_t next_start = current_.end_ms;
        out.push_back(close_window());
        current_.start_ms = next_start;
        current_.end_ms = next_start + window_len_ms_;
    }
    current_.samples.push_back(sample);
    if (filled) {
        ++current_.filled;
        ++stats_.filled_samples;
    }
}

std::vector<WindowResult> PpgStreamIngester::push(const PpgSample& sample) {
    ++stats_.total_samples;
    std::vector<WindowResult> out;
    if (last_ && sample.t_ms <= last_->t_ms) {
        ++stats_.rejected_nonmonotone;
        std::ostringstream msg;
        msg << "NonMonotoneTimestamp: sample at " << sample.t_ms << " ms after " << last_->t_ms
            << " ms rejected";
        stats_.warnings.push_back(msg.str());
        return out;
    }
    if (last_ && static_cast<double>(sample.t_ms - last_->t_ms) > 2.0 * period_ms_) {
        for (int k = 1;; ++k) {
            const auto t = last_->t_ms + static_cast<std::int64_t>(std::llround(k * period_ms_));
            if (t >= sample.t_ms) break;
            append({t, last_->value}, true, out);
        }
    }
    append(sample, false, out);
    last_ = sample;
    return out;
}

std::optional<WindowResult> PpgStreamIngester::finish() {
    if (!started_ || current_.samples.empty()) return std::nullopt;
    const double last_t = static_cast<double>(current_.samples.back().t_ms);
    if (last_t >= static_cast<double>(current_.end_ms) - 1.5 * period_ms_) {
        const std::int64_t next_start = current_.end_ms;
        WindowResult r = close_window();
        current_.start_ms = next_start;
        current_.end_ms = next_start + window_len_ms_;
        return r;
    }
    const std::size_t real = current_.samples.size() - current_.filled;
    stats_.discarded_tail += real;
    current_.samples.clear();
    current_.filled = 0;
    return std::nullopt;
}

std::vector<WindowResult> ingest_ppg_stream(std::span<const PpgSample> samples, const IngestOptions& options,
                                            IngestStats* stats) {
    PpgStreamIngester ingester(options);
    std::vector<WindowResult> out;
    for (const auto& s : samples) {
        for (auto& w : ingester.push(s)) out.push_back(std::move(w));
    }
    if (auto tail = ingester.finish()) out.push_back(std::move(*tail));
    if (stats) *stats = ingester.stats();
    return out;
}

nlohmann::json to_json(const HrvFeatures& f) {
    return {{"mean_hr_bpm", f.mean_hr_bpm}, {"mean_ibi_ms", f.mean_ibi_ms}, {"sdnn_ms", f.sdnn_ms},
            {"rmssd_ms", f.rmssd_ms},       {"pnn50", f.pnn50},             {"n_beats", f.n_beats},
            {"artifact_ratio", f.artifact_ratio}};
}

HrvFeatures hrv_from_json(const nlohmann::json& j) {
    try {
        HrvFeatures f;
        f.mean_hr_bpm = j.at("mean_hr_bpm").get<double>();
        f.mean_ibi_ms = j.at("mean_ibi_ms").get<double>();
        f.sdnn_ms = j.at("sdnn_ms").get<double>();
        f.rmssd_ms = j.at("rmssd_ms").get<double>();
        f.pnn50 = j.at("pnn50").get<double>();
        f.n_beats = j.value("n_beats", std::size_t{0});
        f.artifact_ratio = j.value("artifact_ratio", 0.0);
        return f;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("hrv features: ") + e.what());
    }
}

}  // namespace counsel::ppg
