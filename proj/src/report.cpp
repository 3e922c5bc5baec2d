#include "counsel/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "counsel/error.hpp"

namespace counsel::report {

using json = nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

const std::set<std::string, std::less<>>& stopwords() {
    static const std::set<std::string, std::less<>> words = {
        "about", "after", "again", "all", "also", "and", "any", "are", "because", "been", "before", "being", "but",
        "can", "could", "did", "does", "doing", "don", "down", "each", "even", "for", "from", "get", "got", "had",
        "has", "have", "having", "her", "here", "hers", "him", "his", "how", "into", "its", "just", "know", "like",
        "lot", "may", "more", "most", "much", "not", "now", "off", "once", "only", "other", "our", "out", "over",
        "own", "really", "same", "she", "should", "some", "such", "than", "that", "the", "their", "them", "then",
        "there", "these", "they", "thing", "things", "think", "this", "those", "through", "too", "under", "until",
        "very", "was", "way", "were", "what", "when", "where", "which", "while", "who", "why", "will", "with",
        "would", "yeah", "yes", "you", "your", "yours", "i'm", "it's", "im", "ive", "feel", "feeling", "been",
        "kind", "sort", "maybe", "well", "okay", "said", "say", "going", "want", "one", "two"};
    return words;
}

std::string mmss(std::int64_t t_ms) {
    const std::int64_t s = std::max<std::int64_t>(0, t_ms) / 1000;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%02lld:%02lld", static_cast<long long>(s / 60), static_cast<long long>(s % 60));
    return buf;
}

std::string fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

std::string_view to_string(Role r) { return r == Role::Counselor ? "counselor" : "client"; }

Role parse_role(std::string_view name) {
    if (name == "counselor") return Role::Counselor;
    if (name == "client") return Role::Client;
    fail(ErrorCode::ParseError, "unknown role '" + std::string(name) + "'");
}

std::vector<TranscriptTurn> parse_transcript_jsonl(std::string_view text) {
    std::vector<TranscriptTurn> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            const auto j = json::parse(line);
            TranscriptTurn t;
            t.t_ms = j.at("t_ms").get<std::int64_t>();
            t.role = parse_role(j.at("role").get<std::string>());
            t.text = j.at("text").get<std::string>();
            if (!out.empty() && t.t_ms < out.back().t_ms) {
                fail(ErrorCode::ParseError, "transcript line " + std::to_string(line_no) + " is out of time order");
            }
            out.push_back(std::move(t));
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, "transcript line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<TranscriptTurn> load_transcript_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open transcript '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_transcript_jsonl(ss.str());
}

// --- sections ----------------------------------------------------------------

std::string_view key(SectionId id) {
    switch (id) {
        case SectionId::SessionContext: return "session_context";
        case SectionId::ExplorationHighlights: return "exploration_highlights";
        case SectionId::ObservedProgress: return "observed_progress";
        case SectionId::FollowupSuggestions: return "followup_suggestions";
        case SectionId::Summary: return "summary";
    }
    return "summary";
}

std::string_view title(SectionId id) {
    switch (id) {
        case SectionId::SessionContext: return "Session Context";
        case SectionId::ExplorationHighlights: return "Exploration Highlights";
        case SectionId::ObservedProgress: return "Observed Progress";
        case SectionId::FollowupSuggestions: return "Follow-up Suggestions";
        case SectionId::Summary: return "Summary";
    }
    return "Summary";
}

std::optional<SectionId> section_from_key(std::string_view k) {
    for (auto id : kSectionOrder) {
        if (key(id) == k) return id;
    }
    return std::nullopt;
}

const ReportSection* StructuredReport::section(SectionId id) const {
    for (const auto& s : sections) {
        if (s.id == id) return &s;
    }
    return nullptr;
}

std::string StructuredReport::to_markdown() const {
    std::string out = "# Session Report";
    if (!session_id.empty()) out += ": " + session_id;
    out += "\n\n<!-- generator: " + provenance.generator + "; template: " + provenance.template_id + " v" +
           provenance.template_version + " -->\n";
    for (const auto& s : sections) {
        out += "\n## ";
        out += title(s.id);
        out += "\n\n" + s.text + "\n";
    }
    return out;
}

json StructuredReport::to_json() const {
    json secs = json::array();
    for (const auto& s : sections) secs.push_back({{"id", key(s.id)}, {"title", title(s.id)}, {"text", s.text}});
    json markers = json::array();
    for (const auto& m : emotional_markers) markers.push_back({{"t_ms", m.t_ms}, {"label", fusion::to_string(m.label)}});
    return {{"session_id", session_id},
            {"sections", secs},
            {"provenance",
             {{"generator", provenance.generator},
              {"template_id", provenance.template_id},
              {"template_version", provenance.template_version},
              {"attempts", provenance.attempts},
              {"schema_parse_failure", provenance.schema_parse_failure},
              {"generator_unavailable", provenance.generator_unavailable}}},
            {"emotional_markers", markers}};
}

StructuredReport StructuredReport::from_json(const json& j) {
    try {
        StructuredReport r;
        r.session_id = j.value("session_id", std::string());
        for (const auto& s : j.at("sections")) {
            const auto id = section_from_key(s.at("id").get<std::string>());
            if (!id) fail(ErrorCode::ParseError, "unknown report section '" + s.at("id").get<std::string>() + "'");
            r.sections.push_back({*id, s.at("text").get<std::string>()});
        }
        const auto& p = j.at("provenance");
        r.provenance.generator = p.value("generator", std::string());
        r.provenance.template_id = p.value("template_id", std::string());
        r.provenance.template_version = p.value("template_version", std::string());
        r.provenance.attempts = p.value("attempts", 0);
        r.provenance.schema_parse_failure = p.value("schema_parse_failure", false);
        r.provenance.generator_unavailable = p.value("generator_unavailable", false);
        for (const auto& m : j.value("emotional_markers", json::array())) {
            r.emotional_markers.push_back({m.at("t_ms").get<std::int64_t>(), fusion::parse_emotion(m.at("label").get<std::string>())});
        }
        return r;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("report: ") + e.what());
    }
}

std::vector<std::string> validate_report(const StructuredReport& report) {
    std::vector<std::string> violations;
    std::map<SectionId, int> seen;
    for (const auto& s : report.sections) {
        if (++seen[s.id] == 2) violations.push_back("duplicate section: " + std::string(key(s.id)));
        if (trim(s.text).empty()) violations.push_back("empty section: " + std::string(key(s.id)));
    }
    for (auto id : kSectionOrder) {
        if (!seen.count(id)) violations.push_back("missing section: " + std::string(key(id)));
    }
    std::vector<SectionId> present;
    for (const auto& s : report.sections) present.push_back(s.id);
    if (!std::is_sorted(present.begin(), present.end())) {
        std::string got;
        for (auto id : present) got += (got.empty() ? "" : ",") + std::string(key(id));
        violations.push_back("section order: got " + got);
    }
    if (report.provenance.generator.empty()) violations.push_back("provenance: generator missing");
    if (report.provenance.template_id.empty()) violations.push_back("provenance: template_id missing");
    if (report.provenance.template_version.empty()) violations.push_back("provenance: template_version missing");
    return violations;
}

// --- prompting ---------------------------------------------------------------

std::string PromptTemplate::render(const PromptSlots& slots) const {
    std::string out = body;
    const std::pair<const char*, const std::string*> fills[] = {
        {"{{transcript}}", &slots.transcript},
        {"{{session_summary}}", &slots.session_summary},
        {"{{prior_reports}}", &slots.prior_reports}};
    for (const auto& [placeholder, value] : fills) {
        const auto at = out.find(placeholder);
        if (at == std::string::npos) {
            fail(ErrorCode::InvalidArgument, "template '" + template_id + "' has no " + placeholder + " slot");
        }
        const std::string fill = trim(*value).empty() ? "(none)" : *value;
        out.replace(at, std::char_traits<char>::length(placeholder), fill);
    }
    return out;
}

PromptTemplate PromptTemplate::default_template() {
    PromptTemplate t;
    t.template_id = "session_report";
    t.version = "1";
    t.body = R"(You are assisting a counselor with session documentation. Read the time-tagged transcript
(roles: counselor, client) and write a structured session report. Use only facts stated in the
transcript or the session summary. Answer with exactly these five Markdown headers, in this order,
each followed by non-empty text, and nothing else:

## Session Context
## Exploration Highlights
## Observed Progress
## Follow-up Suggestions
## Summary

Example:
## Session Context
The client described ongoing stress at work and trouble sleeping.
## Exploration Highlights
[03:10] The client linked the stress to a recent change of manager.
## Observed Progress
The client reported using a breathing exercise twice since the previous session.
## Follow-up Suggestions
Continue the breathing practice and try a short evening wind-down routine.
## Summary
The client is engaged and motivated; mood was mostly neutral with brief low periods.

Session summary (emotion updates and alerts):
{{session_summary}}

Prior session reports:
{{prior_reports}}

Transcript:
{{transcript}}
)";
    return t;
}

PromptTemplate PromptTemplate::from_json(const json& j) {
    try {
        PromptTemplate t;
        t.template_id = j.at("template_id").get<std::string>();
        t.version = j.at("version").get<std::string>();
        t.body = j.at("body").get<std::string>();
        t.render({"x", "x", "x"});  // every slot must be present
        return t;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("prompt template: ") + e.what());
    }
}

std::string format_timestamp(std::int64_t t_ms) { return mmss(t_ms); }

std::string format_transcript(std::span<const TranscriptTurn> turns) {
    std::string out;
    for (const auto& t : turns) {
        out += "[" + mmss(t.t_ms) + "] " + std::string(to_string(t.role)) + ": " + t.text + "\n";
    }
    return out;
}

std::string format_summary(const session::SessionSummary& s) {
    std::string out = "duration " + mmss(s.duration_ms) + ", " + std::to_string(s.updates.size()) + " updates";
    out += "; labels sad " + std::to_string(s.label_counts[0]) + ", neutral " + std::to_string(s.label_counts[1]) +
           ", positive " + std::to_string(s.label_counts[2]);
    out += "; alerts sustained_low_valence " + std::to_string(s.sustained_alerts) + ", abrupt_shift " +
           std::to_string(s.abrupt_alerts);
    out += "; final s_p " + fixed3(s.final_s_p) + "\n";
    for (const auto& u : s.updates) {
        out += "[" + mmss(u.t_ms) + "] " + std::string(fusion::to_string(u.label)) + "\n";
    }
    return out;
}

std::optional<std::vector<ReportSection>> parse_sections(std::string_view text) {
    std::vector<ReportSection> out;
    std::vector<std::string> bodies;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        if (line.rfind("```", 0) == 0) continue;
        if (line.rfind("## ", 0) == 0) {
            const std::string heading = trim(std::string_view(line).substr(3));
            const std::size_t next = out.size();
            if (next >= kSectionOrder.size() || heading != title(kSectionOrder[next])) return std::nullopt;
            out.push_back({kSectionOrder[next], {}});
            bodies.emplace_back();
            continue;
        }
        if (line.rfind("# ", 0) == 0 && !out.empty()) return std::nullopt;
        if (out.empty()) continue;  // preamble
        bodies.back() += line + "\n";
    }
    if (out.size() != kSectionOrder.size()) return std::nullopt;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].text = trim(bodies[i]);
        if (out[i].text.empty()) return std::nullopt;
    }
    return out;
}

// --- extractive fallback ------------------------------------------------------

std::vector<std::string> content_terms(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (cur.size() >= 3 && !stopwords().count(cur)) out.push_back(cur);
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur += static_cast<char>(std::tolower(c));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

std::vector<std::size_t> select_highlights(std::span<const TranscriptTurn> turns, std::size_t top_n) {
    std::vector<std::size_t> client;
    std::vector<std::vector<std::string>> terms;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        if (turns[i].role != Role::Client) continue;
        client.push_back(i);
        terms.push_back(content_terms(turns[i].text));
    }
    std::map<std::string, int> df;
    for (const auto& ts : terms) {
        for (const auto& t : std::set<std::string>(ts.begin(), ts.end())) ++df[t];
    }
    const double n = static_cast<double>(client.size());
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t k = 0; k < client.size(); ++k) {
        double score = 0.0;
        for (const auto& t : terms[k]) score += std::log(n / df[t]);
        scored.emplace_back(score, client[k]);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::size_t> out;
    std::set<std::string> seen;  // a repeated line is only highlighted once
    for (std::size_t k = 0; k < scored.size() && out.size() < top_n; ++k) {
        if (seen.insert(turns[scored[k].second].text).second) out.push_back(scored[k].second);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

std::vector<std::string> suggestions_for(fusion::Emotion dominant, const session::SessionSummary* summary) {
    std::vector<std::string> out;
    switch (dominant) {
        case fusion::Emotion::Sad:
            out.push_back("Revisit coping strategies for low mood and agree on a short daily breathing practice. "
                          "#technique:breathing");
            out.push_back("Introduce a thought record to examine negative automatic thoughts before the next session. "
                          "#technique:cognitive_reframing");
            break;
        case fusion::Emotion::Neutral:
            out.push_back("Continue exploring the themes raised in this session and invite the client to notice "
                          "moments of tension during the week. #technique:mindfulness");
            break;
        case fusion::Emotion::Positive:
            out.push_back("Reinforce the strategies the client described as helpful and plan how to keep them going. "
                          "#technique:behavioral_activation");
            break;
    }
    if (summary && summary->sustained_alerts > 0) {
        out.push_back("Review the periods of sustained low valence flagged during the session.");
    }
    return out;
}

}  // namespace

StructuredReport fallback_summarize(const ReportInputs& inputs) {
    const auto& turns = inputs.transcript;
    if (turns.empty()) fail(ErrorCode::EmptyTranscript, "transcript has no turns");
    StructuredReport r;
    if (inputs.summary) r.session_id = inputs.summary->session_id;

    auto line_for = [&](std::size_t i) { return "[" + mmss(turns[i].t_ms) + "] " + turns[i].text; };

    std::string context;
    int taken = 0;
    for (std::size_t i = 0; i < turns.size() && taken < 3; ++i) {
        if (turns[i].role != Role::Client) continue;
        context += (context.empty() ? "" : "\n") + line_for(i);
        ++taken;
    }
    if (context.empty()) context = "No client turns were recorded.";

    std::string highlights;
    for (auto i : select_highlights(turns)) highlights += (highlights.empty() ? "" : "\n") + line_for(i);
    if (highlights.empty()) highlights = "No client turns were recorded.";

    std::string progress;
    if (inputs.prior_summary && inputs.summary) {
        progress = "Compared with the previous session:";
        for (auto e : fusion::kEmotions) {
            const int before = inputs.prior_summary->count(e);
            const int now = inputs.summary->count(e);
            const int d = now - before;
            progress += "\n" + std::string(fusion::to_string(e)) + " " + std::to_string(before) + " -> " +
                        std::to_string(now) + " (" + (d > 0 ? "+" : "") + std::to_string(d) + ")";
        }
    } else if (inputs.prior_summary) {
        progress = "No emotion updates were recorded for this session, so no comparison with the previous session "
                   "is possible.";
    } else {
        progress = "No prior session on record; progress will be tracked from this session onward.";
    }

    const fusion::Emotion dominant = inputs.summary ? inputs.summary->dominant_label() : fusion::Emotion::Neutral;
    std::string followup;
    for (const auto& s : suggestions_for(dominant, inputs.summary ? &*inputs.summary : nullptr)) {
        followup += (followup.empty() ? "" : "\n") + std::string("- ") + s;
    }

    std::string summary;
    const auto n_client = std::count_if(turns.begin(), turns.end(), [](const TranscriptTurn& t) { return t.role == Role::Client; });
    if (inputs.summary) {
        const auto& s = *inputs.summary;
        summary = "Session duration " + mmss(s.duration_ms) + " with " + std::to_string(s.updates.size()) +
                  " emotion updates (sad " + std::to_string(s.label_counts[0]) + ", neutral " +
                  std::to_string(s.label_counts[1]) + ", positive " + std::to_string(s.label_counts[2]) +
                  "); alerts: " + std::to_string(s.sustained_alerts) + " sustained low valence, " +
                  std::to_string(s.abrupt_alerts) + " abrupt shift; final cumulative score " + fixed3(s.final_s_p) +
                  ". Dominant state: " + std::string(fusion::to_string(dominant)) + ".";
    } else {
        summary = std::to_string(turns.size()) + " transcript turns (" + std::to_string(n_client) + " client) spanning " +
                  mmss(turns.back().t_ms - turns.front().t_ms) + "; no emotion updates were recorded.";
    }

    r.sections = {{SectionId::SessionContext, context},
                  {SectionId::ExplorationHighlights, highlights},
                  {SectionId::ObservedProgress, progress},
                  {SectionId::FollowupSuggestions, followup},
                  {SectionId::Summary, summary}};
    r.provenance.generator = "extractive_fallback";
    r.provenance.template_id = "extractive_fallback";
    r.provenance.template_version = "1";
    if (inputs.summary) {
        for (const auto& u : inputs.summary->updates) r.emotional_markers.push_back({u.t_ms, u.label});
    }
    return r;
}

StructuredReport generate_report(const ReportInputs& inputs, TextGenerator* generator, const PromptTemplate& prompt) {
    if (inputs.transcript.empty()) fail(ErrorCode::EmptyTranscript, "transcript has no turns");
    if (!generator) return fallback_summarize(inputs);

    PromptSlots slots;
    slots.transcript = format_transcript(inputs.transcript);
    if (inputs.summary) slots.session_summary = format_summary(*inputs.summary);
    slots.prior_reports = inputs.prior_reports;
    const std::string text = prompt.render(slots);

    auto fallback = [&](bool unavailable, bool parse_failure, int attempts) {
        auto r = fallback_summarize(inputs);
        r.provenance.generator_unavailable = unavailable;
        r.provenance.schema_parse_failure = parse_failure;
        r.provenance.attempts = attempts;
        return r;
    };

    std::string request = text;
    for (int attempt = 1; attempt <= 2; ++attempt) {
        std::string completion;
        try {
            completion = generator->generate(request);
        } catch (const std::exception&) {
            return fallback(true, attempt > 1, attempt);
        }
        if (auto sections = parse_sections(completion)) {
            StructuredReport r;
            if (inputs.summary) r.session_id = inputs.summary->session_id;
            r.sections = std::move(*sections);
            r.provenance.generator = generator->name();
            r.provenance.template_id = prompt.template_id;
            r.provenance.template_version = prompt.version;
            r.provenance.attempts = attempt;
            if (inputs.summary) {
                for (const auto& u : inputs.summary->updates) r.emotional_markers.push_back({u.t_ms, u.label});
            }
            return r;
        }
        request = text +
                  "\n\nYour previous answer did not follow the required format. Reply again using exactly the five "
                  "headers (## Session Context, ## Exploration Highlights, ## Observed Progress, ## Follow-up "
                  "Suggestions, ## Summary) in that order, each with non-empty text.\n";
    }
    return fallback(false, true, 2);
}

}  // namespace counsel::report
