#include <doctest.h>

#include <cmath>
#include <fstream>

#include "counsel/numeric.hpp"
#include "counsel/speech.hpp"
#include "test_support.hpp"

using namespace counsel;
using namespace counsel::speech;

namespace {

// 10 ms frames; energy 1 everywhere except the voiced [from, to) spans.
std::vector<AudioFrameFeatures> frames_with(std::int64_t total_ms,
                                            std::vector<std::tuple<std::int64_t, std::int64_t, double, Embedding>> spans) {
    std::vector<AudioFrameFeatures> f;
    for (std::int64_t t = 0; t < total_ms; t += 10) {
        AudioFrameFeatures a{t, 1.0, {0.0, 0.0}};
        for (const auto& [lo, hi, e, emb] : spans) {
            if (t >= lo && t < hi) {
                a.energy = e;
                a.embedding = emb;
            }
        }
        f.push_back(a);
    }
    return f;
}

SpeechSegment seg(std::int64_t a, std::int64_t b, SpeakerRole role, double energy = 10.0) {
    SpeechSegment s;
    s.start_ms = a;
    s.end_ms = b;
    s.role = role;
    s.mean_energy = energy;
    return s;
}

}  // namespace

TEST_CASE("vad finds voiced spans above factor times the noise floor") {
    const auto f = frames_with(5000, {{1000, 2000, 50.0, {1, 0}}, {3000, 3500, 20.0, {0, 1}}});
    const auto r = detect_voice_activity(f);
    CHECK(r.noise_floor == doctest::Approx(1.0));
    CHECK(r.threshold == doctest::Approx(3.0));
    CHECK(r.frame_hop_ms == 10);
    REQUIRE(r.segments.size() == 2);
    CHECK(r.segments[0].start_ms == 1000);
    CHECK(r.segments[0].end_ms == 2000);
    CHECK(r.segments[0].mean_energy == doctest::Approx(50.0));
    CHECK(r.segments[0].voiced_frames == 100);
    CHECK(r.segments[0].centroid_embedding == Embedding{1, 0});
    CHECK(r.segments[1].start_ms == 3000);
    CHECK(r.segments[1].end_ms == 3500);
}

TEST_CASE("vad merges short gaps and drops short blips") {
    // 200 ms gap merges (< 300), 100 ms blip is dropped (< 250)
    const auto f = frames_with(6000, {{1000, 1500, 50.0, {1, 0}}, {1700, 2200, 50.0, {1, 0}}, {4000, 4100, 50.0, {1, 0}}});
    const auto r = detect_voice_activity(f);
    REQUIRE(r.segments.size() == 1);
    CHECK(r.segments[0].start_ms == 1000);
    CHECK(r.segments[0].end_ms == 2200);
    CHECK(r.segments[0].voiced_frames == 100);  // gap frames are not counted

    VadOptions wide;
    wide.min_gap_ms = 100;
    CHECK(detect_voice_activity(f, wide).segments.size() == 2);
    CHECK(detect_voice_activity(std::vector<AudioFrameFeatures>{}).segments.empty());
}

TEST_CASE("kmeans++ objective never increases") {
    Rng rng(4);
    std::vector<Embedding> pts;
    for (int i = 0; i < 90; ++i) {
        const double cx = (i % 3) * 5.0;
        pts.push_back({cx + rng.normal(0, 1), rng.normal(0, 1)});
    }
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto r = kmeanspp_cluster(pts, 3, seed);
        REQUIRE(r.wcss_history.size() >= 2);
        for (std::size_t i = 1; i < r.wcss_history.size(); ++i) CHECK(r.wcss_history[i] <= r.wcss_history[i - 1] + 1e-9);
        CHECK(r.wcss_history.back() == doctest::Approx(within_cluster_ss(pts, r.assignments, r.centroids)));
        // the three blobs come out as three clusters
        for (int i = 3; i < 90; ++i) CHECK(r.assignments[i] == r.assignments[i % 3]);
    }
    const auto a = kmeanspp_cluster(pts, 3, 7), b = kmeanspp_cluster(pts, 3, 7);
    CHECK(a.assignments == b.assignments);
}

TEST_CASE("kmeans edge cases") {
    const std::vector<Embedding> same(5, Embedding{1.0, 1.0});
    const auto r = kmeanspp_cluster(same, 2, 1);
    CHECK(r.degenerate);
    CHECK_FAILS_WITH(kmeanspp_cluster(same, 6, 1), ErrorCode::KTooLarge);
    CHECK_FAILS_WITH(kmeanspp_cluster(same, 0, 1), ErrorCode::InvalidArgument);
    const std::vector<Embedding> ragged{{1.0, 2.0}, {1.0}};
    CHECK_FAILS_WITH(kmeanspp_cluster(ragged, 1, 1), ErrorCode::DimensionMismatch);
}

TEST_CASE("cosine distance") {
    CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == doctest::Approx(1.0));
    CHECK(cosine_distance(std::vector<double>{1, 1}, std::vector<double>{2, 2}) == doctest::Approx(0.0));
    CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{-1, 0}) == doctest::Approx(2.0));
}

TEST_CASE("attribution marks the nearest matching cluster as counselor") {
    std::vector<SpeechSegment> segs{seg(0, 1000, SpeakerRole::Unknown), seg(1000, 2000, SpeakerRole::Unknown)};
    segs[0].cluster_id = 0;
    segs[1].cluster_id = 1;
    const std::vector<Embedding> centroids{{0.1, 1.0}, {1.0, 0.05}};
    const std::vector<CounselorProfile> profiles{CounselorProfile("c-1", {1.0, 0.0}, 0.3)};
    const auto r = attribute_speakers(segs, centroids, profiles);
    CHECK(r.cluster_roles == std::vector<SpeakerRole>{SpeakerRole::Client, SpeakerRole::Counselor});
    CHECK(r.segments[0].role == SpeakerRole::Client);
    CHECK(r.segments[1].role == SpeakerRole::Counselor);

    const auto none = attribute_speakers(segs, centroids, {});
    CHECK(none.cluster_roles == std::vector<SpeakerRole>{SpeakerRole::Client, SpeakerRole::Client});
    CHECK_FALSE(none.warnings.empty());

    const std::vector<CounselorProfile> far{CounselorProfile("c-2", {-1.0, 0.0}, 0.3)};
    CHECK(attribute_speakers(segs, centroids, far).cluster_roles[1] == SpeakerRole::Client);
    CHECK_FAILS_WITH(CounselorProfile("x", {0.0, 0.0}), ErrorCode::InvalidArgument);
}

TEST_CASE("speech emotion events are duration weighted per interval") {
    std::vector<EmotionAnnotation> ann{{0, 30000, {0.8, 0.1, 0.1}}, {40000, 50000, {0.0, 0.5, 0.5}},
                                       {70000, 75000, {0.2, 0.2, 0.6}}};
    AnnotationEmotionSource src(ann);
    // the counselor segment has no annotation and must not be looked up
    const std::vector<SpeechSegment> segs{seg(0, 30000, SpeakerRole::Client), seg(40000, 50000, SpeakerRole::Client),
                                          seg(70000, 75000, SpeakerRole::Client, 0.5),
                                          seg(30000, 40000, SpeakerRole::Counselor)};
    EmitOptions opt;
    opt.vad_threshold = 3.0;
    const auto ev = emit_speech_emotion(segs, src, opt);
    REQUIRE(ev.size() == 2);
    CHECK(ev[0].t_ms == 60000);
    // (30 s * 0.8 + 10 s * 0.0) / 40 s
    CHECK(ev[0].dist.sad() == doctest::Approx(0.6));
    CHECK(ev[0].dist.neutral() == doctest::Approx((30 * 0.1 + 10 * 0.5) / 40.0));
    CHECK(ev[0].quality == fusion::SpeechQuality::High);
    CHECK(ev[1].t_ms == 120000);
    CHECK(ev[1].quality == fusion::SpeechQuality::Low);  // 5 s of 60 and quiet
    CHECK(ev[1].dist.positive() == doctest::Approx(0.6));
}

TEST_CASE("missing annotation") {
    AnnotationEmotionSource src({{0, 1000, {1, 0, 0}}});
    CHECK_FAILS_WITH(src.probabilities(seg(5000, 6000, SpeakerRole::Client)), ErrorCode::MissingAnnotation);
}

TEST_CASE("speech event json round-trip") {
    SpeechEmotionEvent e;
    e.t_ms = 60000;
    e.dist = fusion::EmotionDistribution::normalized({1, 2, 1});
    e.quality = fusion::SpeechQuality::Low;
    const auto back = speech_event_from_json(to_json(e));
    CHECK(back.t_ms == 60000);
    CHECK(back.dist == e.dist);
    CHECK(back.quality == fusion::SpeechQuality::Low);
}

TEST_CASE("frame features from audio separate tone from silence") {
    std::vector<float> audio(16000, 0.0f);
    for (int i = 8000; i < 16000; ++i) audio[i] = static_cast<float>(0.5 * std::sin(2 * M_PI * 220 * i / 16000.0));
    const auto f = extract_frame_features(audio, 16000);
    REQUIRE(f.size() > 50);
    CHECK(f.front().energy < 1e-9);
    CHECK(f.back().energy > 0.01);
    CHECK(f.back().embedding.size() == 13);  // log energy + 12 bands
}

TEST_CASE("profiles load from json") {
    test::TempDir dir;
    std::ofstream(dir / "p.json") << R"([{"counselor_id":"c-1","embedding":[3,4],"threshold":0.2}])";
    const auto p = load_profiles_json((dir / "p.json").string());
    REQUIRE(p.size() == 1);
    CHECK(p[0].reference_embedding[0] == doctest::Approx(0.6));
    CHECK(p[0].match_threshold == 0.2);
}
