#pragma once

// Speech front end: energy VAD, KMeans++ speaker clustering, counselor
// attribution and interval-level client emotion events.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "counsel/fusion.hpp"

namespace counsel::speech {

using Embedding = std::vector<double>;

struct AudioFrameFeatures {
    std::int64_t t_ms = 0;
    double energy = 0.0;
    Embedding embedding;
};

enum class SpeakerRole { Counselor, Client, Unknown };
std::string_view to_string(SpeakerRole r);

struct SpeechSegment {
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;
    Embedding centroid_embedding;
    std::optional<int> cluster_id;
    SpeakerRole role = SpeakerRole::Unknown;
    double mean_energy = 0.0;
    std::size_t voiced_frames = 0;

    std::int64_t duration_ms() const { return end_ms - start_ms; }
};

struct VadOptions {
    double energy_threshold_factor = 3.0;
    std::int64_t min_gap_ms = 300;
    std::int64_t min_segment_ms = 250;
    double noise_floor_quantile = 0.10;
};

struct VadResult {
    std::vector<SpeechSegment> segments;
    double noise_floor = 0.0;
    double threshold = 0.0;
    std::int64_t frame_hop_ms = 10;
};

/// A frame is voiced iff energy > factor * (10th-percentile energy). Voiced
/// runs separated by less than min_gap_ms merge; shorter than min_segment_ms
/// drop. Segment ends are the last voiced frame time plus one hop.
VadResult detect_voice_activity(std::span<const AudioFrameFeatures> frames, const VadOptions& options = {});

struct ClusterResult {
    std::vector<int> assignments;
    std::vector<Embedding> centroids;
    int iterations = 0;
    /// All points identical with k > 1 (DegenerateInput, reported not thrown).
    bool degenerate = false;
    /// Within-cluster sum of squares after seeding and after each Lloyd pass.
    std::vector<double> wcss_history;
};

/// KMeans++ (D^2 seeding) followed by Lloyd iterations to an assignment
/// fixpoint or max_iters. Ties go to the lowest centroid index. Throws
/// KTooLarge when k exceeds the number of points.
ClusterResult kmeanspp_cluster(std::span<const Embedding> points, int k, std::uint64_t seed, int max_iters = 100);

double within_cluster_ss(std::span<const Embedding> points, std::span<const int> assignments,
                         std::span<const Embedding> centroids);

struct CounselorProfile {
    std::string counselor_id;
    Embedding reference_embedding;  // unit-normalized on construction
    double match_threshold = 0.3;

    CounselorProfile(std::string id, Embedding embedding, double threshold = 0.3);
};

std::vector<CounselorProfile> load_profiles_json(const std::string& path);

/// 1 - cosine similarity; 1 when either vector has zero norm.
double cosine_distance(std::span<const double> a, std::span<const double> b);

struct AttributionResult {
    std::vector<SpeechSegment> segments;
    std::vector<SpeakerRole> cluster_roles;
    std::vector<std::string> warnings;
};

/// A cluster is counselor iff its centroid is within the nearest profile's
/// match threshold; every other cluster is client.
AttributionResult attribute_speakers(std::vector<SpeechSegment> segments, std::span<const Embedding> cluster_centroids,
                                     std::span<const CounselorProfile> profiles);

/// Clusters segment embeddings and writes cluster ids into the segments.
ClusterResult cluster_segments(std::vector<SpeechSegment>& segments, int k, std::uint64_t seed);

/// Adapter contract for the external speech-emotion model.
class EmotionProbabilitySource {
public:
    virtual ~EmotionProbabilitySource() = default;
    /// (p_sad, p_neutral, p_positive) for one client segment.
    virtual std::array<double, 3> probabilities(const SpeechSegment& segment) = 0;
};

struct EmotionAnnotation {
    std::int64_t seg_start_ms = 0;
    std::int64_t seg_end_ms = 0;
    std::array<double, 3> p{};
};

/// Reference stub: answers from per-segment annotations, picking the
/// annotation with the largest time overlap and renormalizing it.
class AnnotationEmotionSource : public EmotionProbabilitySource {
public:
    explicit AnnotationEmotionSource(std::vector<EmotionAnnotation> annotations);
    static AnnotationEmotionSource from_jsonl(const std::string& path);

    std::array<double, 3> probabilities(const SpeechSegment& segment) override;

private:
    std::vector<EmotionAnnotation> annotations_;
};

struct SpeechEmotionEvent {
    std::int64_t t_ms = 0;  // interval end
    fusion::EmotionDistribution dist;
    fusion::SpeechQuality quality = fusion::SpeechQuality::High;

    fusion::SpeechEvidence to_evidence() const { return {t_ms, dist, quality}; }
};

nlohmann::json to_json(const SpeechEmotionEvent& e);
SpeechEmotionEvent speech_event_from_json(const nlohmann::json& j);

struct EmitOptions {
    std::int64_t interval_ms = 60000;
    double min_voiced_coverage = 0.20;
    /// Energy threshold from VAD; quality is high only above it.
    double vad_threshold = 0.0;
};

/// Per interval [k*I, (k+1)*I): duration-weighted average of overlapping
/// client-segment distributions, renormalized. Intervals without client speech
/// emit nothing. Counselor segments are skipped.
std::vector<SpeechEmotionEvent> emit_speech_emotion(std::span<const SpeechSegment> segments,
                                                    EmotionProbabilitySource& source, const EmitOptions& options = {});

/// Reference frame-feature extractor: mean-square energy plus an embedding of
/// log-energy and 12 log band energies from a naive DFT.
std::vector<AudioFrameFeatures> extract_frame_features(std::span<const float> audio, int sample_rate_hz,
                                                       int frame_ms = 25, int hop_ms = 10);

std::vector<AudioFrameFeatures> load_frames_jsonl(const std::string& path);

}  // namespace counsel::speech
