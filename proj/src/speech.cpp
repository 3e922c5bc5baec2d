#include "counsel/speech.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "counsel/error.hpp"
#include "counsel/numeric.hpp"

namespace counsel::speech {

using json = nlohmann::json;

std::string_view to_string(SpeakerRole r) {
    switch (r) {
        case SpeakerRole::Counselor: return "counselor";
        case SpeakerRole::Client: return "client";
        case SpeakerRole::Unknown: return "unknown";
    }
    return "unknown";
}

// --- VAD ---------------------------------------------------------------------

VadResult detect_voice_activity(std::span<const AudioFrameFeatures> frames, const VadOptions& options) {
    VadResult out;
    if (frames.empty()) return out;

    std::vector<double> energies;
    energies.reserve(frames.size());
    for (const auto& f : frames) energies.push_back(f.energy);
    out.noise_floor = quantile(energies, options.noise_floor_quantile);
    out.threshold = options.energy_threshold_factor * out.noise_floor;

    if (frames.size() >= 2) {
        std::vector<double> steps;
        for (std::size_t i = 1; i < frames.size(); ++i) steps.push_back(static_cast<double>(frames[i].t_ms - frames[i - 1].t_ms));
        out.frame_hop_ms = std::max<std::int64_t>(1, std::llround(quantile(steps, 0.5)));
    }

    struct Run {
        std::size_t first, last;  // frame indices, inclusive
    };
    std::vector<Run> runs;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (!(frames[i].energy > out.threshold)) continue;
        if (!runs.empty() && runs.back().last + 1 == i) {
            runs.back().last = i;
        } else {
            runs.push_back({i, i});
        }
    }

    const auto run_start = [&](const Run& r) { return frames[r.first].t_ms; };
    const auto run_end = [&](const Run& r) { return frames[r.last].t_ms + out.frame_hop_ms; };

    std::vector<Run> merged;
    for (const auto& r : runs) {
        if (!merged.empty() && run_start(r) - run_end(merged.back()) < options.min_gap_ms) {
            merged.back().last = r.last;
        } else {
            merged.push_back(r);
        }
    }

    for (const auto& r : merged) {
        SpeechSegment seg;
        seg.start_ms = run_start(r);
        seg.end_ms = run_end(r);
        if (seg.duration_ms() < options.min_segment_ms) continue;
        const std::size_t dim = frames[r.first].embedding.size();
        seg.centroid_embedding.assign(dim, 0.0);
        double energy = 0.0;
        for (std::size_t i = r.first; i <= r.last; ++i) {
            if (!(frames[i].energy > out.threshold)) continue;
            ++seg.voiced_frames;
            energy += frames[i].energy;
            for (std::size_t d = 0; d < dim && d < frames[i].embedding.size(); ++d) {
                seg.centroid_embedding[d] += frames[i].embedding[d];
            }
        }
        const double nv = static_cast<double>(seg.voiced_frames);
        for (auto& v : seg.centroid_embedding) v /= nv;
        seg.mean_energy = energy / nv;
        out.segments.push_back(std::move(seg));
    }
    return out;
}

// --- clustering --------------------------------------------------------------

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Returns true when any assignment changed.
bool assign_nearest(std::span<const Embedding> points, std::span<const Embedding> centroids, std::vector<int>& assignments) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
        int best = 0;
        double best_d = squared_distance(points[i], centroids[0]);
        for (std::size_t c = 1; c < centroids.size(); ++c) {
            const double d = squared_distance(points[i], centroids[c]);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        if (assignments[i] != best) {
            assignments[i] = best;
            changed = true;
        }
    }
    return changed;
}

}  // namespace

double within_cluster_ss(std::span<const Embedding> points, std::span<const int> assignments,
                         std::span<const Embedding> centroids) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        total += squared_distance(points[i], centroids[static_cast<std::size_t>(assignments[i])]);
    }
    return total;
}

ClusterResult kmeanspp_cluster(std::span<const Embedding> points, int k, std::uint64_t seed, int max_iters) {
    if (k < 1) fail(ErrorCode::InvalidArgument, "kmeanspp_cluster: k must be >= 1");
    const std::size_t n = points.size();
    if (static_cast<std::size_t>(k) > n) {
        fail(ErrorCode::KTooLarge, "kmeanspp_cluster: k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
    }
    const std::size_t dim = points[0].size();
    for (const auto& p : points) {
        if (p.size() != dim) fail(ErrorCode::DimensionMismatch, "kmeanspp_cluster: embeddings differ in dimension");
    }

    ClusterResult out;
    out.assignments.assign(n, -1);

    const bool all_identical = std::all_of(points.begin(), points.end(), [&](const Embedding& p) { return p == points[0]; });
    if (all_identical && k > 1) {
        out.degenerate = true;
        out.centroids.assign(static_cast<std::size_t>(k), points[0]);
        out.assignments.assign(n, 0);
        out.wcss_history.push_back(0.0);
        return out;
    }

    // D^2 seeding.
    Rng rng(seed);
    std::vector<std::size_t> chosen{rng.index(n)};
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points[i], points[chosen[0]]);
    while (chosen.size() < static_cast<std::size_t>(k)) {
        double total = 0.0;
        for (double v : d2) total += v;
        std::size_t pick = n;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double cum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                cum += d2[i];
                if (cum > r) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) {
                for (std::size_t i = n; i-- > 0;) {
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        } else {
            // Fewer distinct points than k: duplicate the lowest unused index.
            for (std::size_t i = 0; i < n; ++i) {
                if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) {
                    pick = i;
                    break;
                }
            }
        }
        chosen.push_back(pick);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points[i], points[pick]));
    }
    for (auto idx : chosen) out.centroids.push_back(points[idx]);

    assign_nearest(points, out.centroids, out.assignments);
    out.wcss_history.push_back(within_cluster_ss(points, out.assignments, out.centroids));

    for (int iter = 0; iter < max_iters; ++iter) {
        std::vector<Embedding> sums(static_cast<std::size_t>(k), Embedding(dim, 0.0));
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(out.assignments[i]);
            ++counts[c];
            for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
        }
        for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            for (std::size_t d = 0; d < dim; ++d) out.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
        }
        ++out.iterations;
        out.wcss_history.push_back(within_cluster_ss(points, out.assignments, out.centroids));
        const bool changed = assign_nearest(points, out.centroids, out.assignments);
        out.wcss_history.push_back(within_cluster_ss(points, out.assignments, out.centroids));
        if (!changed) break;
    }
    return out;
}

ClusterResult cluster_segments(std::vector<SpeechSegment>& segments, int k, std::uint64_t seed) {
    std::vector<Embedding> points;
    points.reserve(segments.size());
    for (const auto& s : segments) points.push_back(s.centroid_embedding);
    auto result = kmeanspp_cluster(points, k, seed);
    for (std::size_t i = 0; i < segments.size(); ++i) segments[i].cluster_id = result.assignments[i];
    return result;
}

// --- attribution -------------------------------------------------------------

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail(ErrorCode::DimensionMismatch, "cosine_distance: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

CounselorProfile::CounselorProfile(std::string id, Embedding embedding, double threshold)
    : counselor_id(std::move(id)), reference_embedding(std::move(embedding)), match_threshold(threshold) {
    if (threshold < 0.0 || threshold > 2.0) {
        fail(ErrorCode::InvalidArgument, "counselor profile threshold must lie in [0, 2]");
    }
    double norm = 0.0;
    for (double v : reference_embedding) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) fail(ErrorCode::InvalidArgument, "counselor profile embedding has zero norm");
    for (auto& v : reference_embedding) v /= norm;
}

std::vector<CounselorProfile> load_profiles_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open profile store '" + path + "'");
    try {
        const auto j = json::parse(in);
        std::vector<CounselorProfile> out;
        for (const auto& p : j) {
            out.emplace_back(p.at("counselor_id").get<std::string>(), p.at("embedding").get<Embedding>(),
                             p.value("threshold", 0.3));
        }
        return out;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, path + ": " + e.what());
    }
}

AttributionResult attribute_speakers(std::vector<SpeechSegment> segments, std::span<const Embedding> cluster_centroids,
                                     std::span<const CounselorProfile> profiles) {
    AttributionResult out;
    if (profiles.empty()) out.warnings.push_back("EmptyProfiles: no counselor profiles enrolled; all speech treated as client");
    for (const auto& centroid : cluster_centroids) {
        SpeakerRole role = SpeakerRole::Client;
        const CounselorProfile* nearest = nullptr;
        double best = 0.0;
        for (const auto& p : profiles) {
            const double d = cosine_distance(centroid, p.reference_embedding);
            if (!nearest || d < best) {
                nearest = &p;
                best = d;
            }
        }
        if (nearest && best <= nearest->match_threshold) role = SpeakerRole::Counselor;
        out.cluster_roles.push_back(role);
    }
    for (auto& s : segments) {
        if (s.cluster_id && *s.cluster_id >= 0 && static_cast<std::size_t>(*s.cluster_id) < out.cluster_roles.size()) {
            s.role = out.cluster_roles[static_cast<std::size_t>(*s.cluster_id)];
        }
    }
    out.segments = std::move(segments);
    return out;
}

// --- emotion events ----------------------------------------------------------

AnnotationEmotionSource::AnnotationEmotionSource(std::vector<EmotionAnnotation> annotations)
    : annotations_(std::move(annotations)) {}

AnnotationEmotionSource AnnotationEmotionSource::from_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open annotations '" + path + "'");
    std::vector<EmotionAnnotation> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            EmotionAnnotation a;
            a.seg_start_ms = j.at("seg_start_ms").get<std::int64_t>();
            a.seg_end_ms = j.at("seg_end_ms").get<std::int64_t>();
            const auto p = j.at("p").get<std::vector<double>>();
            if (p.size() != 3) fail(ErrorCode::ParseError, "annotation p must have 3 entries");
            std::copy(p.begin(), p.end(), a.p.begin());
            out.push_back(a);
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return AnnotationEmotionSource(std::move(out));
}

std::array<double, 3> AnnotationEmotionSource::probabilities(const SpeechSegment& segment) {
    const EmotionAnnotation* best = nullptr;
    std::int64_t best_overlap = 0;
    for (const auto& a : annotations_) {
        const auto overlap = std::min(a.seg_end_ms, segment.end_ms) - std::max(a.seg_start_ms, segment.start_ms);
        if (overlap > best_overlap) {
            best_overlap = overlap;
            best = &a;
        }
    }
    if (!best) {
        fail(ErrorCode::MissingAnnotation, "no annotation overlaps segment [" + std::to_string(segment.start_ms) + ", " +
                                               std::to_string(segment.end_ms) + ")");
    }
    return fusion::EmotionDistribution::normalized(best->p).p;
}

json to_json(const SpeechEmotionEvent& e) {
    return {{"t_ms", e.t_ms}, {"dist", e.dist.p}, {"quality", fusion::to_string(e.quality)}};
}

SpeechEmotionEvent speech_event_from_json(const json& j) {
    try {
        SpeechEmotionEvent e;
        e.t_ms = j.at("t_ms").get<std::int64_t>();
        e.dist = fusion::EmotionDistribution::from(j.at("dist").get<std::vector<double>>());
        e.quality = fusion::parse_speech_quality(j.value("quality", std::string("high")));
        return e;
    } catch (const json::exception& ex) {
        fail(ErrorCode::ParseError, std::string("speech event: ") + ex.what());
    }
}

std::vector<SpeechEmotionEvent> emit_speech_emotion(std::span<const SpeechSegment> segments,
                                                    EmotionProbabilitySource& source, const EmitOptions& options) {
    if (options.interval_ms <= 0) fail(ErrorCode::InvalidArgument, "emit_speech_emotion: interval must be positive");
    std::vector<const SpeechSegment*> client;
    std::int64_t last_end = 0;
    for (const auto& s : segments) {
        if (s.role != SpeakerRole::Client) continue;
        client.push_back(&s);
        last_end = std::max(last_end, s.end_ms);
    }
    std::vector<std::array<double, 3>> probs;
    probs.reserve(client.size());
    for (const auto* s : client) probs.push_back(fusion::EmotionDistribution::normalized(source.probabilities(*s)).p);

    std::vector<SpeechEmotionEvent> out;
    const std::int64_t n_intervals = (last_end + options.interval_ms - 1) / options.interval_ms;
    for (std::int64_t k = 0; k < n_intervals; ++k) {
        const std::int64_t lo = k * options.interval_ms;
        const std::int64_t hi = lo + options.interval_ms;
        std::array<double, 3> acc{0.0, 0.0, 0.0};
        double covered = 0.0;
        double energy = 0.0;
        for (std::size_t i = 0; i < client.size(); ++i) {
            const auto overlap = std::min(hi, client[i]->end_ms) - std::max(lo, client[i]->start_ms);
            if (overlap <= 0) continue;
            const double w = static_cast<double>(overlap);
            for (std::size_t c = 0; c < 3; ++c) acc[c] += w * probs[i][c];
            covered += w;
            energy += w * client[i]->mean_energy;
        }
        if (covered <= 0.0) continue;  // NoClientSpeech
        SpeechEmotionEvent e;
        e.t_ms = hi;
        e.dist = fusion::EmotionDistribution::normalized(acc);
        const double coverage = covered / static_cast<double>(options.interval_ms);
        const double mean_energy = energy / covered;
        e.quality = coverage >= options.min_voiced_coverage && mean_energy > options.vad_threshold
                        ? fusion::SpeechQuality::High
                        : fusion::SpeechQuality::Low;
        out.push_back(e);
    }
    return out;
}

// --- reference features ------------------------------------------------------

std::vector<AudioFrameFeatures> extract_frame_features(std::span<const float> audio, int sample_rate_hz, int frame_ms,
                                                       int hop_ms) {
    if (sample_rate_hz <= 0 || frame_ms <= 0 || hop_ms <= 0) {
        fail(ErrorCode::InvalidArgument, "extract_frame_features: rates and frame sizes must be positive");
    }
    constexpr std::size_t kBands = 12;
    const auto frame_len = static_cast<std::size_t>(sample_rate_hz) * static_cast<std::size_t>(frame_ms) / 1000;
    const auto hop = static_cast<std::size_t>(sample_rate_hz) * static_cast<std::size_t>(hop_ms) / 1000;
    std::vector<AudioFrameFeatures> out;
    if (frame_len < 2 * kBands || audio.size() < frame_len) return out;

    const std::size_t n_bins = frame_len / 2;
    for (std::size_t start = 0; start + frame_len <= audio.size(); start += hop) {
        const auto frame = audio.subspan(start, frame_len);
        AudioFrameFeatures f;
        f.t_ms = static_cast<std::int64_t>(start * 1000 / static_cast<std::size_t>(sample_rate_hz));
        double energy = 0.0;
        for (float s : frame) energy += static_cast<double>(s) * s;
        f.energy = energy / static_cast<double>(frame_len);

        std::array<double, kBands> bands{};
        for (std::size_t k = 1; k <= n_bins; ++k) {
            double re = 0.0, im = 0.0;
            const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(frame_len);
            for (std::size_t i = 0; i < frame_len; ++i) {
                re += frame[i] * std::cos(w * static_cast<double>(i));
                im -= frame[i] * std::sin(w * static_cast<double>(i));
            }
            const std::size_t band = std::min(kBands - 1, (k - 1) * kBands / n_bins);
            bands[band] += (re * re + im * im) / static_cast<double>(frame_len);
        }
        f.embedding.push_back(std::log(f.energy + 1e-10));
        for (double b : bands) f.embedding.push_back(std::log(b + 1e-10));
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<AudioFrameFeatures> load_frames_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open frames '" + path + "'");
    std::vector<AudioFrameFeatures> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            AudioFrameFeatures f;
            f.t_ms = j.at("t_ms").get<std::int64_t>();
            f.energy = j.at("energy").get<double>();
            f.embedding = j.value("emb", Embedding{});
            if (f.energy < 0.0) fail(ErrorCode::ParseError, "frame energy must be >= 0");
            if (!out.empty() && f.embedding.size() != out.front().embedding.size()) {
                fail(ErrorCode::DimensionMismatch, "frame embeddings differ in dimension");
            }
            out.push_back(std::move(f));
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace counsel::speech
