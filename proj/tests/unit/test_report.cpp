#include <doctest.h>

#include <cmath>

#include "counsel/generator.hpp"
#include "counsel/report.hpp"
#include "test_support.hpp"

using namespace counsel;
using namespace counsel::report;

namespace {

std::vector<TranscriptTurn> sample_transcript() {
    return {{5000, Role::Counselor, "How has your week been?"},
            {20000, Role::Client, "I keep waking up early and worrying about work deadlines."},
            {40000, Role::Client, "My sister visited and we walked by the river, which helped."},
            {65000, Role::Counselor, "What did you notice during the walk?"},
            {80000, Role::Client, "I noticed my shoulders relaxed and the worrying slowed down."},
            {100000, Role::Client, "Work deadlines still feel heavy though."}};
}

std::string good_markdown() {
    std::string md = "Here is the report.\n";
    for (auto id : kSectionOrder) md += "## " + std::string(title(id)) + "\nText for " + std::string(key(id)) + ".\n\n";
    return md;
}

session::SessionSummary summary_with(std::array<int, 3> counts, int sustained = 0) {
    session::SessionSummary s;
    s.session_id = "s";
    s.label_counts = counts;
    s.sustained_alerts = sustained;
    s.duration_ms = 600000;
    return s;
}

}  // namespace

TEST_CASE("transcript jsonl parsing") {
    const auto turns = parse_transcript_jsonl(
        "{\"t_ms\":0,\"role\":\"counselor\",\"text\":\"Hi\"}\n\n{\"t_ms\":1000,\"role\":\"client\",\"text\":\"Hello\"}\n");
    REQUIRE(turns.size() == 2);
    CHECK(turns[1].role == Role::Client);
    CHECK_FAILS_WITH(parse_transcript_jsonl("{\"t_ms\":5,\"role\":\"client\",\"text\":\"a\"}\n"
                                            "{\"t_ms\":1,\"role\":\"client\",\"text\":\"b\"}\n"),
                     ErrorCode::ParseError);
    CHECK_FAILS_WITH(parse_transcript_jsonl("{\"t_ms\":5,\"role\":\"therapist\",\"text\":\"a\"}\n"), ErrorCode::ParseError);
}

TEST_CASE("section parser is strict about headers and order") {
    const auto ok = parse_sections(good_markdown());
    REQUIRE(ok);
    CHECK(ok->size() == 5);
    CHECK((*ok)[4].text == "Text for summary.");

    std::string fenced = "```markdown\n" + good_markdown() + "```\n";
    CHECK(parse_sections(fenced));

    std::string swapped = good_markdown();
    const auto a = swapped.find("## Observed Progress"), b = swapped.find("## Follow-up Suggestions");
    swapped = swapped.substr(0, a) + swapped.substr(b, swapped.find("## Summary") - b) + swapped.substr(a, b - a) +
              swapped.substr(swapped.find("## Summary"));
    CHECK_FALSE(parse_sections(swapped));

    std::string missing = good_markdown();
    missing = missing.substr(0, missing.find("## Summary"));
    CHECK_FALSE(parse_sections(missing));

    std::string empty_body = good_markdown();
    empty_body.replace(empty_body.find("Text for observed_progress."), 27, "   ");
    CHECK_FALSE(parse_sections(empty_body));
    CHECK_FALSE(parse_sections("nothing useful"));
}

TEST_CASE("validate_report flags structural problems") {
    StructuredReport r;
    r.session_id = "s";
    r.provenance = {"extractive_fallback", "extractive_fallback", "1", 0, false, false};
    for (auto id : kSectionOrder) r.sections.push_back({id, "text"});
    CHECK(validate_report(r).empty());

    auto dup = r;
    dup.sections[1].id = SectionId::SessionContext;
    CHECK_FALSE(validate_report(dup).empty());
    auto blank = r;
    blank.sections[2].text = " \n";
    CHECK_FALSE(validate_report(blank).empty());
    auto shortr = r;
    shortr.sections.pop_back();
    CHECK_FALSE(validate_report(shortr).empty());
    auto noprov = r;
    noprov.provenance.generator.clear();
    CHECK_FALSE(validate_report(noprov).empty());

    const auto back = StructuredReport::from_json(r.to_json());
    CHECK(back.to_json() == r.to_json());
    const auto md = r.to_markdown();
    CHECK(md.find("# Session Report: s") == 0);
    CHECK(md.find("## Follow-up Suggestions") != std::string::npos);
}

TEST_CASE("prompt template rendering") {
    const auto t = PromptTemplate::default_template();
    const auto out = t.render({"TRANSCRIPT-X", "", "PRIOR-Y"});
    CHECK(out.find("TRANSCRIPT-X") != std::string::npos);
    CHECK(out.find("PRIOR-Y") != std::string::npos);
    CHECK(out.find("(none)") != std::string::npos);
    CHECK(out.find("{{") == std::string::npos);
    PromptTemplate bad{"x", "1", "no slots here"};
    CHECK_FAILS_WITH(bad.render({}), ErrorCode::InvalidArgument);
}

TEST_CASE("highlights score rare terms") {
    // idf oracle: the fourth client turn only reuses common words
    const std::vector<TranscriptTurn> turns{{0, Role::Client, "work work work"},
                                            {1, Role::Client, "work today"},
                                            {2, Role::Client, "gardening tomatoes basil"},
                                            {3, Role::Client, "today work"},
                                            {4, Role::Counselor, "gardening tomatoes basil zucchini"}};
    const auto h = select_highlights(turns, 1);
    REQUIRE(h.size() == 1);
    CHECK(h[0] == 2);
    // n = 4, df(work) = 3, df(today) = 2: turn 0 scores 3 ln(4/3) = 0.86,
    // turns 1 and 3 ln(4/3) + ln 2 = 0.98 and the earlier one wins the tie
    const auto two = select_highlights(turns, 2);
    CHECK(two == std::vector<std::size_t>{1, 2});

    CHECK(content_terms("The cat AND the Dogs!") == std::vector<std::string>{"cat", "dogs"});
}

TEST_CASE("fallback report has all sections and cites real turns") {
    ReportInputs in;
    in.transcript = sample_transcript();
    in.summary = summary_with({5, 3, 1}, 1);
    const auto r = fallback_summarize(in);
    CHECK(validate_report(r).empty());
    CHECK(r.provenance.generator == "extractive_fallback");
    CHECK(r.section(SectionId::SessionContext)->text.find("[00:20]") != std::string::npos);
    const auto& follow = r.section(SectionId::FollowupSuggestions)->text;
    CHECK(follow.find("#technique:breathing") != std::string::npos);
    CHECK(r.section(SectionId::ObservedProgress)->text.find("No prior session") != std::string::npos);

    in.prior_summary = summary_with({8, 1, 0});
    const auto r2 = fallback_summarize(in);
    CHECK(r2.section(SectionId::ObservedProgress)->text.find("sad 8 -> 5 (-3)") != std::string::npos);
}

TEST_CASE("generator output is used when well formed") {
    CallbackGenerator gen("fake", [](const std::string& prompt) {
        CHECK(prompt.find("worrying about work deadlines") != std::string::npos);
        return good_markdown();
    });
    ReportInputs in;
    in.transcript = sample_transcript();
    const auto r = generate_report(in, &gen);
    CHECK(r.provenance.generator == "fake");
    CHECK(r.provenance.attempts == 1);
    CHECK(r.section(SectionId::Summary)->text == "Text for summary.");
    CHECK(validate_report(r).empty());
}

TEST_CASE("one repair attempt then fallback") {
    int calls = 0;
    CallbackGenerator flaky("flaky", [&](const std::string& prompt) {
        ++calls;
        if (calls == 1) return std::string("not a report");
        CHECK(prompt.find("## Session Context") != std::string::npos);
        return good_markdown();
    });
    ReportInputs in;
    in.transcript = sample_transcript();
    const auto repaired = generate_report(in, &flaky);
    CHECK(calls == 2);
    CHECK(repaired.provenance.attempts == 2);
    CHECK(repaired.provenance.generator == "flaky");

    CallbackGenerator junk("junk", [](const std::string&) { return std::string("still junk"); });
    const auto fb = generate_report(in, &junk);
    CHECK(fb.provenance.schema_parse_failure);
    CHECK(fb.provenance.generator == "extractive_fallback");
    CHECK(validate_report(fb).empty());

    CallbackGenerator down("down", [](const std::string&) -> std::string {
        fail(ErrorCode::GeneratorUnavailable, "offline");
    });
    const auto off = generate_report(in, &down);
    CHECK(off.provenance.generator_unavailable);
    CHECK(validate_report(off).empty());

    ReportInputs empty;
    CHECK_FAILS_WITH(generate_report(empty, nullptr), ErrorCode::EmptyTranscript);
}

TEST_CASE("timestamps") {
    CHECK(format_timestamp(0) == "00:00");
    CHECK(format_timestamp(65000) == "01:05");
    CHECK(format_timestamp(3600000 + 1000) == "60:01");
}
