#pragma once

// Structured session reports: prompt templates, a strict section parser and a
// deterministic extractive fallback.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "counsel/fusion.hpp"
#include "counsel/generator.hpp"
#include "counsel/session.hpp"

namespace counsel::report {

enum class Role { Counselor, Client };
std::string_view to_string(Role r);
Role parse_role(std::string_view name);

struct TranscriptTurn {
    std::int64_t t_ms = 0;
    Role role = Role::Client;
    std::string text;
};

/// JSONL of {"t_ms", "role", "text"}; throws ParseError on bad lines or
/// out-of-order timestamps.
std::vector<TranscriptTurn> load_transcript_jsonl(const std::string& path);
std::vector<TranscriptTurn> parse_transcript_jsonl(std::string_view text);

enum class SectionId { SessionContext, ExplorationHighlights, ObservedProgress, FollowupSuggestions, Summary };
inline constexpr std::array<SectionId, 5> kSectionOrder = {SectionId::SessionContext, SectionId::ExplorationHighlights,
                                                           SectionId::ObservedProgress, SectionId::FollowupSuggestions,
                                                           SectionId::Summary};
std::string_view key(SectionId id);    // session_context, ...
std::string_view title(SectionId id);  // Session Context, ...
std::optional<SectionId> section_from_key(std::string_view key);

struct ReportSection {
    SectionId id;
    std::string text;
};

struct Provenance {
    std::string generator;
    std::string template_id;
    std::string template_version;
    int attempts = 0;
    bool schema_parse_failure = false;
    bool generator_unavailable = false;
};

struct EmotionalMarker {
    std::int64_t t_ms;
    fusion::Emotion label;
};

struct StructuredReport {
    std::string session_id;
    std::vector<ReportSection> sections;
    Provenance provenance;
    std::vector<EmotionalMarker> emotional_markers;

    const ReportSection* section(SectionId id) const;
    std::string to_markdown() const;
    nlohmann::json to_json() const;
    static StructuredReport from_json(const nlohmann::json& j);
};

/// Violations of the five-section schema and provenance; empty means valid.
std::vector<std::string> validate_report(const StructuredReport& report);

struct PromptSlots {
    std::string transcript;
    std::string session_summary;
    std::string prior_reports;
};

struct PromptTemplate {
    std::string template_id;
    std::string version;
    /// Body with {{transcript}}, {{session_summary}} and {{prior_reports}} placeholders.
    std::string body;

    /// Empty slots render as an explicit "(none)". Throws InvalidArgument when a
    /// placeholder is missing from the body.
    std::string render(const PromptSlots& slots) const;

    static PromptTemplate default_template();
    static PromptTemplate from_json(const nlohmann::json& j);
};

/// "[mm:ss] role: text" per line.
std::string format_transcript(std::span<const TranscriptTurn> turns);
std::string format_summary(const session::SessionSummary& summary);
std::string format_timestamp(std::int64_t t_ms);

/// Strict scanner: exactly the five "## <Title>" headers in order, each with a
/// non-empty body. Text before the first header is ignored.
std::optional<std::vector<ReportSection>> parse_sections(std::string_view text);

struct ReportInputs {
    std::vector<TranscriptTurn> transcript;
    std::optional<session::SessionSummary> summary;
    std::optional<session::SessionSummary> prior_summary;
    std::string prior_reports;
};

StructuredReport fallback_summarize(const ReportInputs& inputs);

/// Generator path with one format-repair retry, then the extractive fallback.
/// Throws EmptyTranscript; never fails otherwise.
StructuredReport generate_report(const ReportInputs& inputs, TextGenerator* generator,
                                 const PromptTemplate& prompt = PromptTemplate::default_template());

/// Client turns chosen as highlights, by index into the transcript, time-ordered.
std::vector<std::size_t> select_highlights(std::span<const TranscriptTurn> turns, std::size_t top_n = 5);

/// Lowercased alphanumeric tokens of length >= 3 that are not stopwords.
std::vector<std::string> content_terms(std::string_view text);

}  // namespace counsel::report
