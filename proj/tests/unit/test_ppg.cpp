#include <doctest.h>

#include <cmath>
#include <vector>

#include "counsel/numeric.hpp"
#include "counsel/ppg.hpp"
#include "counsel/synthetic.hpp"
#include "test_support.hpp"

using namespace counsel;
using namespace counsel::ppg;

namespace {

// Welford for the mean and spread; a different route to the same numbers.
struct DirectHrv {
    double mean = 0, sdnn = 0, rmssd = 0, pnn50 = 0;
};

DirectHrv direct_hrv(const std::vector<double>& x) {
    DirectHrv d;
    double m = 0, m2 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double delta = x[i] - m;
        m += delta / static_cast<double>(i + 1);
        m2 += delta * (x[i] - m);
    }
    d.mean = m;
    d.sdnn = std::sqrt(m2 / static_cast<double>(x.size()));
    double sq = 0;
    int big = 0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        const double diff = x[i + 1] - x[i];
        sq += diff * diff;
        big += std::fabs(diff) > 50.0 ? 1 : 0;
    }
    d.rmssd = std::sqrt(sq / static_cast<double>(x.size() - 1));
    d.pnn50 = big / static_cast<double>(x.size() - 1);
    return d;
}

PpgWindow window_of(std::vector<PpgSample> s, double len_s = 60.0) {
    PpgWindow w;
    w.start_ms = s.empty() ? 0 : s.front().t_ms;
    w.end_ms = w.start_ms + static_cast<std::int64_t>(len_s * 1000);
    w.window_len_s = len_s;
    w.samples = std::move(s);
    return w;
}

std::vector<PpgSample> pulse_train(double bpm, std::int64_t duration_ms = 60000, double noise = 0.0,
                                   std::uint64_t seed = 1) {
    const auto beats = synth::constant_rate_beats(bpm, 0, duration_ms);
    std::vector<double> amps(beats.size(), 1.0);
    synth::PulseTrainOptions opt;
    opt.duration_ms = duration_ms;
    opt.noise_sd = noise;
    Rng rng(seed);
    return synth::render_pulse_train(beats, amps, opt, noise > 0 ? &rng : nullptr);
}

}  // namespace

TEST_CASE("hrv matches direct formulas on random series") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.index(120);
        std::vector<double> x(n);
        for (auto& v : x) v = rng.uniform(310.0, 1990.0);
        const auto f = compute_hrv_features(IbiSeries::gate(x));
        const auto d = direct_hrv(x);
        CHECK(std::fabs(f.mean_ibi_ms - d.mean) < 1e-9);
        CHECK(std::fabs(f.sdnn_ms - d.sdnn) < 1e-9);
        CHECK(std::fabs(f.rmssd_ms - d.rmssd) < 1e-9);
        CHECK(std::fabs(f.pnn50 - d.pnn50) < 1e-12);
        CHECK(f.mean_hr_bpm == doctest::Approx(60000.0 / d.mean));
        CHECK(f.n_beats == n + 1);
    }
}

TEST_CASE("hand-worked hrv example") {
    // diffs +100, -40, +60: rmssd sqrt((10000+1600+3600)/3), two of three exceed 50
    const std::vector<double> x{800, 900, 860, 920};
    const auto f = compute_hrv_features(IbiSeries::gate(x));
    CHECK(f.mean_ibi_ms == doctest::Approx(870.0));
    CHECK(f.rmssd_ms == doctest::Approx(std::sqrt(15200.0 / 3.0)));
    CHECK(f.pnn50 == doctest::Approx(2.0 / 3.0));
    CHECK(f.sdnn_ms == doctest::Approx(std::sqrt((4900.0 + 900 + 100 + 2500) / 4.0)));
}

TEST_CASE("ibi gate drops implausible intervals") {
    const std::vector<double> raw{250, 300, 800, 2000, 2100, NAN};
    const auto g = IbiSeries::gate(raw);
    CHECK(g.ibis_ms == std::vector<double>{300, 800, 2000});
    CHECK(g.rejected == 3);
    CHECK(g.rejection_ratio() == doctest::Approx(0.5));
}

TEST_CASE("too few beats") {
    CHECK_FAILS_WITH(compute_hrv_features(IbiSeries::gate(std::vector<double>{800})), ErrorCode::InsufficientBeats);
    CHECK_FAILS_WITH(compute_hrv_features(IbiSeries::gate(std::vector<double>{100, 800})),
                     ErrorCode::InsufficientBeats);
}

TEST_CASE("detected peaks are local maxima above the adaptive threshold") {
    for (double bpm : {45.0, 72.0, 110.0, 170.0}) {
        const auto w = window_of(pulse_train(bpm, 60000, 0.02, 9));
        const auto det = detect_pulse_peaks(w);
        const auto thr = adaptive_threshold(w);
        REQUIRE_FALSE(det.flat);
        for (std::size_t k = 0; k < det.indices.size(); ++k) {
            const std::size_t i = det.indices[k];
            REQUIRE(i > 0);
            REQUIRE(i + 1 < w.samples.size());
            CHECK(w.samples[i].value > w.samples[i - 1].value);
            CHECK(w.samples[i].value >= w.samples[i + 1].value);
            CHECK(w.samples[i].value > thr[i]);
            CHECK(det.times_ms[k] == w.samples[i].t_ms);
            if (k > 0) CHECK(det.times_ms[k] - det.times_ms[k - 1] >= 300);
        }
        // every rendered beat has a detection nearby; noise moves the top of
        // a 50 ms wide pulse by up to two samples
        const auto beats = synth::constant_rate_beats(bpm, 0, 60000);
        for (double b : beats) {
            if (b < 100 || b > 59900) continue;
            bool hit = false;
            double nearest = 1e9;
            for (auto t : det.times_ms) nearest = std::min(nearest, std::fabs(static_cast<double>(t) - b));
            hit = nearest <= 25.0;
            CHECK_MESSAGE(hit, "beat at " << b << " nearest " << nearest << " at " << bpm << " bpm");
        }
    }
}

TEST_CASE("heart rate recovered across 40-180 bpm") {
    for (double bpm = 40.0; bpm <= 180.0; bpm += 10.0) {
        const auto w = window_of(pulse_train(bpm));
        const auto det = detect_pulse_peaks(w);
        const auto f = compute_hrv_features(IbiSeries::from_peaks(det.times_ms));
        CHECK_MESSAGE(std::fabs(f.mean_hr_bpm - bpm) < 1.0, "bpm " << bpm << " got " << f.mean_hr_bpm);
    }
}

TEST_CASE("flat and empty windows") {
    std::vector<PpgSample> flat;
    for (int i = 0; i < 6000; ++i) flat.push_back({i * 10, 0.5});
    const auto det = detect_pulse_peaks(window_of(flat));
    CHECK(det.flat);
    CHECK(det.indices.empty());
    CHECK_FAILS_WITH(detect_pulse_peaks(window_of({})), ErrorCode::EmptyWindow);

    const auto r = reactivity_envelope(window_of(flat), 0.8);
    CHECK(r.stale);
    CHECK(r.mu == 0.8);
}

TEST_CASE("reactivity tracks pulse amplitude") {
    const auto beats = synth::constant_rate_beats(70, 0, 60000);
    synth::PulseTrainOptions opt;
    std::vector<double> small(beats.size(), 0.5), large(beats.size(), 1.5);
    const auto a = reactivity_envelope(window_of(synth::render_pulse_train(beats, small, opt)));
    const auto b = reactivity_envelope(window_of(synth::render_pulse_train(beats, large, opt)));
    CHECK_FALSE(a.stale);
    CHECK(b.mu / a.mu == doctest::Approx(3.0).epsilon(0.02));
}

TEST_CASE("detrend removes a linear ramp") {
    std::vector<PpgSample> s;
    for (int i = 0; i < 100; ++i) s.push_back({i * 10, 2.0 + 0.01 * i});
    const auto d = detrend(window_of(s, 1.0));
    for (const auto& p : d.samples) CHECK(std::fabs(p.value) < 1e-9);
}

TEST_CASE("stream ingestion windows, gaps and ordering") {
    auto samples = pulse_train(75, 180000);
    SUBCASE("three full windows") {
        IngestStats st;
        const auto ws = ingest_ppg_stream(samples, {}, &st);
        REQUIRE(ws.size() == 3);
        CHECK(ws[0].window.start_ms == 0);
        CHECK(ws[2].window.end_ms == 180000);
        CHECK(st.windowed_samples == samples.size());
        for (const auto& w : ws) {
            REQUIRE(w.features);
            CHECK(w.features->mean_hr_bpm == doctest::Approx(75).epsilon(0.01));
            CHECK(w.warnings.empty());
        }
    }
    SUBCASE("out-of-order samples are dropped and counted") {
        std::swap(samples[500], samples[501]);
        IngestStats st;
        ingest_ppg_stream(samples, {}, &st);
        CHECK(st.rejected_nonmonotone == 1);
    }
    SUBCASE("gaps are zero-order held") {
        samples.erase(samples.begin() + 1000, samples.begin() + 1050);
        IngestStats st;
        const auto ws = ingest_ppg_stream(samples, {}, &st);
        CHECK(st.filled_samples == 50);
        REQUIRE(ws.size() == 3);
        CHECK(ws[0].window.filled == 50);
        CHECK(ws[0].window.samples.size() == 6000);
    }
    SUBCASE("a partial tail is discarded") {
        samples.resize(samples.size() - 3000);
        IngestStats st;
        const auto ws = ingest_ppg_stream(samples, {}, &st);
        CHECK(ws.size() == 2);
        CHECK(st.discarded_tail == 3000);
    }
    SUBCASE("rate mismatch is reported") {
        IngestOptions opt;
        opt.declared_rate_hz = 50.0;
        const auto ws = ingest_ppg_stream(samples, opt);
        REQUIRE_FALSE(ws.empty());
        CHECK_FALSE(ws[0].warnings.empty());
    }
}

TEST_CASE("hrv features json round-trip") {
    const auto f = compute_hrv_features(IbiSeries::gate(std::vector<double>{800, 900, 860, 920}));
    const auto back = hrv_from_json(to_json(f));
    CHECK(back.to_vector() == f.to_vector());
    CHECK(back.n_beats == f.n_beats);
}
