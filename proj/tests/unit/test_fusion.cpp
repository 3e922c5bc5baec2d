#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "counsel/fusion.hpp"
#include "counsel/numeric.hpp"
#include "test_support.hpp"

using namespace counsel;
using namespace counsel::fusion;

namespace {

EmotionDistribution dist(double s, double n, double p) { return EmotionDistribution::from(std::vector<double>{s, n, p}); }

EmotionDistribution random_dist(Rng& rng) {
    const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform() + 1e-3;
    const double t = a + b + c;
    return dist(a / t, b / t, c / t);
}

// Plain restatement of the PPG cumulative-score rule, kept separate from the
// engine so the two can disagree.
struct ScoreOracle {
    double lambda = 0.5, theta = 0.3, delta1 = 1.0;
    double s = 0.0, m = 0.5;
    std::optional<double> prev;

    const char* step(double mu) {
        if (prev) {
            const double hi = mu > *prev ? mu : *prev;
            const double d = hi > 0 ? (mu - *prev) / hi : 0.0;
            if (d > theta) s = s + lambda * m;
            if (d < -theta) s = s - lambda * (1 - m);
        }
        prev = mu;
        if (s > delta1) return "positive";
        if (s < -delta1) return "sad";
        return "neutral";
    }
};

std::vector<Emotion> labels(std::initializer_list<Emotion> l) { return l; }

std::vector<EmotionUpdate> history_of(const std::vector<Emotion>& ls) {
    std::vector<EmotionUpdate> h;
    for (std::size_t i = 0; i < ls.size(); ++i) {
        EmotionUpdate u;
        u.label = ls[i];
        u.tick = static_cast<std::int64_t>(i + 1);
        u.t_ms = u.tick * 60000;
        h.push_back(u);
    }
    return h;
}

}  // namespace

TEST_CASE("fuse is a per-class weighted average") {
    // 0.7*0.6+0.3*0.2, 0.7*0.3+0.3*0.5, 0.7*0.1+0.3*0.3
    const auto r = fuse(dist(0.6, 0.3, 0.1), dist(0.2, 0.5, 0.3), SpeechQuality::High, {});
    CHECK(r.alpha == 0.7);
    CHECK(r.p_f.sad() == doctest::Approx(0.48).epsilon(1e-12));
    CHECK(r.p_f.neutral() == doctest::Approx(0.36).epsilon(1e-12));
    CHECK(r.p_f.positive() == doctest::Approx(0.16).epsilon(1e-12));
    CHECK(r.label == Emotion::Sad);

    const auto low = fuse(dist(0.6, 0.3, 0.1), dist(0.2, 0.5, 0.3), SpeechQuality::Low, {});
    CHECK(low.alpha == 0.3);
    CHECK(low.p_f.neutral() == doctest::Approx(0.3 * 0.3 + 0.7 * 0.5));
    CHECK(low.label == Emotion::Neutral);
}

TEST_CASE("fuse matches the oracle on random inputs") {
    Rng rng(11);
    for (int i = 0; i < 500; ++i) {
        const auto ps = random_dist(rng), pp = random_dist(rng);
        FusionConfig cfg;
        cfg.alpha_high = rng.uniform();
        const auto r = fuse(ps, pp, SpeechQuality::High, cfg);
        int best = 0;
        for (int c = 0; c < 3; ++c) {
            const double want = cfg.alpha_high * ps.p[c] + (1 - cfg.alpha_high) * pp.p[c];
            CHECK(std::abs(r.p_f.p[c] - want) < 1e-12);
            if (want > cfg.alpha_high * ps.p[best] + (1 - cfg.alpha_high) * pp.p[best]) best = c;
        }
        CHECK(static_cast<int>(r.label) == best);
    }
}

TEST_CASE("speech-only decision and the neutral-to-sad override") {
    CHECK(speech_only_decision(dist(0.3, 0.4, 0.3)) == Emotion::Sad);
    CHECK(speech_only_decision(dist(1e-9, 0.6, 0.4 - 1e-9)) == Emotion::Sad);
    CHECK(speech_only_decision(dist(0.0, 0.6, 0.4)) == Emotion::Neutral);
    CHECK(speech_only_decision(dist(0.05, 0.6, 0.35), 0.1) == Emotion::Neutral);
    CHECK(speech_only_decision(dist(0.1, 0.2, 0.7)) == Emotion::Positive);
    CHECK(speech_only_decision(dist(0.5, 0.3, 0.2)) == Emotion::Sad);
}

TEST_CASE("argmax ties resolve toward sad") {
    CHECK(dist(0.4, 0.4, 0.2).argmax() == Emotion::Sad);
    CHECK(dist(0.2, 0.4, 0.4).argmax() == Emotion::Neutral);
}

TEST_CASE("invalid distributions are rejected") {
    CHECK_FAILS_WITH(dist(0.5, 0.5, 0.5), ErrorCode::InvalidDistribution);
    CHECK_FAILS_WITH(dist(-0.1, 0.6, 0.5), ErrorCode::InvalidDistribution);
    CHECK_FAILS_WITH(dist(NAN, 0.5, 0.5), ErrorCode::InvalidDistribution);
    EmotionDistribution bad;
    bad.p = {0.9, 0.9, 0.0};
    CHECK_FAILS_WITH(fuse(bad, dist(0.2, 0.5, 0.3), SpeechQuality::High, {}), ErrorCode::InvalidDistribution);
}

TEST_CASE("label thresholds are strict") {
    CHECK(label_from_score(1.0, 1.0) == Emotion::Neutral);
    CHECK(label_from_score(1.0000001, 1.0) == Emotion::Positive);
    CHECK(label_from_score(-1.0, 1.0) == Emotion::Neutral);
    CHECK(label_from_score(-1.5, 1.0) == Emotion::Sad);
}

TEST_CASE("cumulative score follows the rule oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        FusionConfig cfg;
        FusionState st;
        st.m = cfg.initial_confidence;
        ScoreOracle oracle;
        double mu = rng.uniform(0.5, 2.0);
        for (int t = 0; t < 40; ++t) {
            mu = std::max(0.0, mu * rng.uniform(0.4, 1.8));
            const auto r = ppg_only_update(st, mu, cfg);
            const char* want = oracle.step(mu);
            CHECK(std::abs(r.state.s_p - oracle.s) < 1e-12);
            CHECK(to_string(r.label) == want);
            st = r.state;
        }
    }
}

TEST_CASE("score uses the confidence m asymmetrically") {
    FusionConfig cfg;
    FusionState st;
    st.m = 0.9;
    st = ppg_only_update(st, 1.0, cfg).state;
    auto up = ppg_only_update(st, 2.0, cfg);  // delta 0.5
    CHECK(up.delta == doctest::Approx(0.5));
    CHECK(up.state.s_p == doctest::Approx(0.45));
    auto down = ppg_only_update(up.state, 1.0, cfg);  // delta -0.5
    CHECK(down.state.s_p == doctest::Approx(0.45 - 0.05));
    auto small = ppg_only_update(down.state, 1.2, cfg);  // delta 1/6, inside theta
    CHECK(small.state.s_p == down.state.s_p);
}

TEST_CASE("negative or non-finite mu is rejected") {
    CHECK_FAILS_WITH(ppg_only_update({}, -0.1, {}), ErrorCode::NegativeMu);
    CHECK_FAILS_WITH(ppg_only_update({}, INFINITY, {}), ErrorCode::NegativeMu);
}

TEST_CASE("zero reactivity does not divide by zero") {
    FusionState st;
    st = ppg_only_update(st, 0.0, {}).state;
    const auto r = ppg_only_update(st, 0.0, {});
    CHECK(r.delta == 0.0);
    CHECK(r.state.s_p == 0.0);
}

TEST_CASE("mode selection honours consent") {
    IntervalInputs in;
    in.speech = SpeechEvidence{60000, dist(0.2, 0.3, 0.5), SpeechQuality::High};
    in.ppg = PpgEvidence{60000, 1.0, false, dist(0.1, 0.8, 0.1)};
    CHECK(select_mode(in, {true, true}) == FusionMode::Multimodal);
    CHECK(select_mode(in, {true, false}) == FusionMode::SpeechOnly);
    CHECK(select_mode(in, {false, true}) == FusionMode::PpgOnly);
    CHECK(select_mode(in, {false, false}) == FusionMode::None);
    in.ppg->classifier_dist.reset();
    CHECK(select_mode(in, {true, true}) == FusionMode::SpeechOnly);
}

TEST_CASE("ppg-only tick without mu is stale and keeps the label") {
    FusionEngine engine({}, {}, {false, true});
    IntervalInputs in;
    in.t_ms = 60000;
    in.ppg = PpgEvidence{60000, std::nullopt, false, std::nullopt};
    const auto step = engine.step(in);
    CHECK(step.update.mode == FusionMode::PpgOnly);
    CHECK(step.update.stale);
    CHECK(step.update.label == Emotion::Neutral);
}

TEST_CASE("alert rules") {
    SUBCASE("four sads give one sustained alert") {
        const auto h = history_of(labels({Emotion::Sad, Emotion::Sad, Emotion::Sad, Emotion::Sad}));
        const auto a = evaluate_alerts(h);
        REQUIRE(a.size() == 1);
        CHECK(a[0].kind == AlertKind::SustainedLowValence);
        CHECK(a[0].tick == 3);
        CHECK(a[0].evidence.size() == 3);
    }
    SUBCASE("sad then positive is abrupt") {
        const auto a = evaluate_alerts(history_of(labels({Emotion::Sad, Emotion::Positive})));
        REQUIRE(a.size() == 1);
        CHECK(a[0].kind == AlertKind::AbruptShift);
        CHECK(a[0].evidence.size() == 2);
    }
    SUBCASE("single steps are quiet") {
        CHECK(evaluate_alerts(history_of(labels({Emotion::Neutral, Emotion::Sad, Emotion::Neutral}))).empty());
    }
    SUBCASE("run re-arms after a break") {
        const auto a = evaluate_alerts(history_of(labels({Emotion::Sad, Emotion::Sad, Emotion::Sad, Emotion::Neutral,
                                                          Emotion::Sad, Emotion::Sad, Emotion::Sad})));
        CHECK(std::count_if(a.begin(), a.end(), [](const Alert& x) { return x.kind == AlertKind::SustainedLowValence; }) ==
              2);
    }
    SUBCASE("latest-only matches the full scan") {
        Rng rng(3);
        std::vector<Emotion> ls;
        std::vector<Alert> incremental;
        for (int i = 0; i < 200; ++i) {
            ls.push_back(kEmotions[rng.index(3)]);
            const auto h = history_of(ls);
            for (auto& x : alerts_at_latest(h)) incremental.push_back(x);
        }
        const auto full = evaluate_alerts(history_of(ls));
        REQUIRE(full.size() == incremental.size());
        for (std::size_t i = 0; i < full.size(); ++i) CHECK(full[i].alert_id == incremental[i].alert_id);
    }
}

TEST_CASE("trend over the last k updates") {
    CHECK(compute_trend_valences(std::vector<int>{-1, 0, 1}) == Trend::Up);
    CHECK(compute_trend_valences(std::vector<int>{1, 1, -1, 0, 0}) == Trend::Up);
    CHECK(compute_trend_valences(std::vector<int>{1, 0, 0}) == Trend::Down);
    CHECK(compute_trend_valences(std::vector<int>{0, 1, 0}) == Trend::Flat);
    CHECK(compute_trend_valences(std::vector<int>{0}) == Trend::Flat);
    CHECK(compute_trend_valences(std::vector<int>{-1, 1}) == Trend::Up);
}

TEST_CASE("updates and alerts round-trip through json") {
    EmotionUpdate u;
    u.t_ms = 120000;
    u.tick = 2;
    u.label = Emotion::Positive;
    u.dist = dist(0.1, 0.2, 0.7);
    u.mode = FusionMode::Multimodal;
    u.trend = Trend::Up;
    u.s_p = 0.25;
    const auto back = update_from_json(to_json(u));
    CHECK(to_json(back).dump() == to_json(u).dump());
    CHECK(to_json(u)["valence"] == 1);

    const auto alerts = evaluate_alerts(history_of(labels({Emotion::Sad, Emotion::Positive})));
    CHECK(to_json(alert_from_json(to_json(alerts[0]))).dump() == to_json(alerts[0]).dump());
}

TEST_CASE("display colours") {
    CHECK(color(Emotion::Sad) == "blue");
    CHECK(color(Emotion::Neutral) == "green");
    CHECK(color(Emotion::Positive) == "yellow");
}

TEST_CASE("classifier labels map onto emotions") {
    const std::vector<std::string> ls{"sad", "relax"};
    const auto d = to_emotion_distribution(ls, std::vector<double>{0.3, 0.7});
    CHECK(d.sad() == doctest::Approx(0.3));
    CHECK(d.neutral() == doctest::Approx(0.7));
    CHECK(d.positive() == 0.0);
    const std::vector<std::string> bad{"angry", "sad"};
    CHECK_THROWS(to_emotion_distribution(bad, std::vector<double>{0.5, 0.5}));
}

TEST_CASE("config validation") {
    FusionConfig c;
    c.alpha_high = 1.5;
    CHECK_FAILS_WITH(c.validate(), ErrorCode::InvalidArgument);
    c = {};
    c.interval_ms = 0;
    CHECK_FAILS_WITH(c.validate(), ErrorCode::InvalidArgument);
}
