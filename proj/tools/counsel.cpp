// counsel: offline workflows and the HTTP service.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <nlohmann/json.hpp>

#include "counsel/error.hpp"
#include "counsel/followup.hpp"
#include "counsel/gateway.hpp"
#include "counsel/models.hpp"
#include "counsel/pipeline.hpp"
#include "counsel/report.hpp"
#include "counsel/session.hpp"
#include "counsel/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace counsel;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

std::ofstream open_out(const std::string& path) {
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + path + "'");
    return out;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, path + ": " + e.what());
    }
}

std::unique_ptr<TextGenerator> make_generator(const std::string& url, const std::string& model) {
    HttpGeneratorConfig cfg;
    cfg.base_url = url;
    cfg.model = model;
    if (auto v = gateway::process_env("COUNSEL_GENERATOR_URL"); v && cfg.base_url.empty()) cfg.base_url = *v;
    if (auto v = gateway::process_env("COUNSEL_GENERATOR_MODEL"); v && cfg.model.empty()) cfg.model = *v;
    if (auto v = gateway::process_env("COUNSEL_GENERATOR_API_KEY")) cfg.api_key = *v;
    if (!cfg.configured()) return nullptr;
    return std::make_unique<HttpTextGenerator>(cfg);
}

// --- simulate --------------------------------------------------------------

struct SimulateArgs {
    std::string out_dir = "synth";
    std::uint64_t seed = 7;
    int participants = 30;
    int blocks = 8;
    double block_s = 120.0;
};

void cmd_simulate(const SimulateArgs& a) {
    fs::create_directories(a.out_dir);
    synth::ElicitationOptions opt;
    opt.n_participants = a.participants;
    opt.blocks_per_participant = a.blocks;
    opt.block_s = a.block_s;
    const auto streams = synth::generate_synthetic_elicitation(a.seed, opt);

    auto ppg = open_out((fs::path(a.out_dir) / "elicitation_ppg.jsonl").string());
    auto blocks = open_out((fs::path(a.out_dir) / "elicitation_blocks.jsonl").string());
    char buf[128];
    std::size_t n_samples = 0;
    for (const auto& s : streams) {
        for (const auto& x : s.samples) {
            std::snprintf(buf, sizeof buf, "{\"participant\":%d,\"t_ms\":%lld,\"value\":%.7g}\n", s.participant,
                          static_cast<long long>(x.t_ms), x.value);
            ppg << buf;
        }
        n_samples += s.samples.size();
        for (const auto& b : s.blocks) {
            blocks << json{{"participant", s.participant}, {"start_ms", b.start_ms}, {"end_ms", b.end_ms}, {"label", b.label}}.dump()
                   << '\n';
        }
    }

    const auto fixture = pipeline::synthesize_session_fixture(a.seed, a.blocks, a.block_s);
    pipeline::save_ppg_jsonl(fixture.ppg, (fs::path(a.out_dir) / "session_ppg.jsonl").string());
    pipeline::save_speech_events_jsonl(fixture.speech, (fs::path(a.out_dir) / "session_speech.jsonl").string());
    pipeline::save_transcript_jsonl(fixture.transcript, (fs::path(a.out_dir) / "session_transcript.jsonl").string());

    std::cout << json{{"participants", streams.size()},
                      {"samples", n_samples},
                      {"out_dir", a.out_dir},
                      {"session_fixture_intervals", fixture.speech.size()}}
                     .dump()
              << '\n';
}

// --- features --------------------------------------------------------------

struct FeaturesArgs {
    std::string ppg_path;
    std::string blocks_path;
    std::string out_path;
    double rate_hz = 100.0;
    double window_s = 60.0;
};

void cmd_features(const FeaturesArgs& a) {
    std::map<int, synth::ParticipantStream> streams;
    {
        std::ifstream in(a.ppg_path);
        if (!in) fail(ErrorCode::IoError, "cannot open '" + a.ppg_path + "'");
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                const auto j = json::parse(line);
                const int p = j.value("participant", 0);
                auto& s = streams[p];
                s.participant = p;
                s.samples.push_back({j.at("t_ms").get<std::int64_t>(), j.at("value").get<double>()});
            } catch (const json::exception& e) {
                fail(ErrorCode::ParseError, a.ppg_path + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    ppg::IngestOptions ingest;
    ingest.declared_rate_hz = a.rate_hz;
    ingest.window_len_s = a.window_s;

    if (!a.blocks_path.empty()) {
        std::ifstream in(a.blocks_path);
        if (!in) fail(ErrorCode::IoError, "cannot open '" + a.blocks_path + "'");
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const auto j = json::parse(line);
            const int p = j.value("participant", 0);
            streams[p].blocks.push_back(
                {j.at("start_ms").get<std::int64_t>(), j.at("end_ms").get<std::int64_t>(), j.at("label").get<std::string>()});
        }
        std::vector<synth::ParticipantStream> list;
        for (auto& [p, s] : streams) list.push_back(std::move(s));
        const auto data = synth::dataset_from_streams(list, ingest);
        models::save_dataset_jsonl(data, a.out_path);
        std::cout << json{{"samples", data.samples.size()}, {"labels", data.label_set}, {"out", a.out_path}}.dump() << '\n';
        return;
    }

    auto out = open_out(a.out_path);
    std::size_t windows = 0;
    for (const auto& [p, s] : streams) {
        for (const auto& w : ppg::ingest_ppg_stream(s.samples, ingest)) {
            const auto b = pipeline::batch_from_window(w, nullptr);
            json j = b.to_json();
            j["participant"] = p;
            out << j.dump() << '\n';
            ++windows;
        }
    }
    std::cout << json{{"windows", windows}, {"out", a.out_path}}.dump() << '\n';
}

// --- train / bench -----------------------------------------------------------

struct TrainArgs {
    std::string input;
    std::string model = "random_forest";
    std::uint64_t seed = 7;
    std::string out_path = "model.json";
    bool all = false;
};

void cmd_train(const TrainArgs& a) {
    const auto data = models::load_dataset_jsonl(a.input);
    const auto kind = models::parse_model_kind(a.model);
    json info = {{"model", models::to_string(kind)}, {"seed", a.seed}};
    if (a.all) {
        const auto model = models::train_model(kind, data, {}, a.seed);
        pipeline::save_model(model, a.out_path);
        info["train_size"] = data.samples.size();
    } else {
        const auto split = models::split_dataset(data, {0.7, 0.2, 0.1}, a.seed);
        const auto model = models::train_model(kind, split.train, {}, a.seed);
        pipeline::save_model(model, a.out_path);
        const auto m = models::evaluate(model, split.validation);
        info["train_size"] = split.train.samples.size();
        info["validation_accuracy"] = m.accuracy;
        info["validation_f1"] = m.weighted_f1;
    }
    info["out"] = a.out_path;
    std::cout << info.dump() << '\n';
}

struct BenchArgs {
    std::string input;
    std::uint64_t seed = 7;
    std::string csv_path;
    std::string json_path;
};

void cmd_bench(const BenchArgs& a) {
    const auto data = models::load_dataset_jsonl(a.input);
    const auto report = models::run_benchmark(data, a.seed, {}, fs::path(a.input).filename().string());
    const std::string csv = report.to_csv();
    if (a.csv_path.empty()) {
        std::cout << csv;
    } else {
        open_out(a.csv_path) << csv;
    }
    if (!a.json_path.empty()) open_out(a.json_path) << report.to_json().dump(2) << '\n';
}

// --- run-session ---------------------------------------------------------------

struct RunSessionArgs {
    std::string store = "counsel-store";
    std::string config_path;
    std::string session_id;
    std::string modality = "multimodal";
    bool consent_speech = false;
    bool consent_ppg = false;
    std::string pseudonym;
    std::string counselor;
    std::string ppg_path;
    std::string speech_path;
    std::string transcript_path;
    std::string model_path;
};

void cmd_run_session(const RunSessionArgs& a) {
    session::SessionConfig config;
    if (!a.config_path.empty()) {
        config = session::SessionConfig::from_json(read_json_file(a.config_path));
    } else {
        config.modality = session::parse_modality(a.modality);
        config.consent = {a.consent_speech, a.consent_ppg};
    }
    if (!a.session_id.empty()) config.session_id = a.session_id;
    if (!a.pseudonym.empty()) config.client_pseudonym = a.pseudonym;
    if (!a.counselor.empty()) config.counselor_id = a.counselor;
    if (!a.model_path.empty()) config.model_path = fs::absolute(a.model_path).string();

    pipeline::OfflineInputs in;
    if (!a.ppg_path.empty()) in.ppg = pipeline::load_ppg_jsonl(a.ppg_path);
    if (!a.speech_path.empty()) in.speech = pipeline::load_speech_events_jsonl(a.speech_path);
    if (!a.transcript_path.empty()) in.transcript = report::load_transcript_jsonl(a.transcript_path);

    session::SessionStore store(a.store);
    followup::ClientDirectory clients(a.store);
    std::shared_ptr<const models::TrainedModel> classifier;
    if (!config.model_path.empty()) classifier = pipeline::load_model(config.model_path);
    const auto result = pipeline::run_offline_session(store, &clients, config, in, classifier);
    json out = result.summary.to_json();
    out.erase("updates");
    out["ppg_batches"] = result.ppg_batches;
    out["speech_events"] = result.speech_events;
    out["store"] = a.store;
    std::cout << out.dump() << '\n';
}

// --- report ------------------------------------------------------------------

struct ReportArgs {
    std::string store;
    std::string session_id;
    std::string transcript_path;
    std::string summary_path;
    std::string out_path;
    std::string template_path;
    std::string generator_url;
    std::string generator_model;
};

void cmd_report(const ReportArgs& a) {
    auto generator = make_generator(a.generator_url, a.generator_model);
    auto prompt = report::PromptTemplate::default_template();
    if (!a.template_path.empty()) prompt = report::PromptTemplate::from_json(read_json_file(a.template_path));

    report::StructuredReport r;
    if (!a.store.empty()) {
        if (a.session_id.empty()) fail(ErrorCode::InvalidArgument, "--session is required with --store");
        session::SessionStore store(a.store);
        followup::ClientDirectory clients(a.store);
        std::optional<std::vector<report::TranscriptTurn>> transcript;
        if (!a.transcript_path.empty()) transcript = report::load_transcript_jsonl(a.transcript_path);
        r = pipeline::write_session_report(store, clients, a.session_id, std::move(transcript), generator.get(), prompt);
    } else {
        if (a.transcript_path.empty()) fail(ErrorCode::InvalidArgument, "--transcript is required without --store");
        report::ReportInputs in;
        in.transcript = report::load_transcript_jsonl(a.transcript_path);
        if (!a.summary_path.empty()) in.summary = session::SessionSummary::from_json(read_json_file(a.summary_path));
        r = report::generate_report(in, generator.get(), prompt);
    }
    const auto violations = report::validate_report(r);
    if (!a.out_path.empty()) {
        open_out(a.out_path) << r.to_json().dump(2) << '\n';
        fs::path md = a.out_path;
        md.replace_extension(".md");
        open_out(md.string()) << r.to_markdown();
    } else {
        std::cout << r.to_markdown();
    }
    for (const auto& v : violations) std::cerr << "report violation: " << v << '\n';
    if (!violations.empty()) fail(ErrorCode::ParseError, "report failed validation");
}

// --- followup ----------------------------------------------------------------

struct FollowupArgs {
    std::string store = "counsel-store";
    std::int64_t now_ms = -1;
    std::vector<std::string> goals_paths;
    std::string generator_url;
    std::string generator_model;
};

void cmd_followup(const FollowupArgs& a) {
    followup::ClientDirectory clients(a.store);
    for (const auto& path : a.goals_paths) clients.save_goals(followup::ClientGoals::from_json(read_json_file(path)));
    const std::int64_t now = a.now_ms >= 0 ? a.now_ms
                                           : std::chrono::duration_cast<std::chrono::milliseconds>(
                                                 std::chrono::system_clock::now().time_since_epoch())
                                                 .count();
    auto generator = make_generator(a.generator_url, a.generator_model);
    const auto result = followup::sweep(clients, now, generator.get());
    for (const auto& m : result.enqueued) std::cout << m.to_json().dump() << '\n';
    for (const auto& e : result.errors) std::cerr << "followup: " << e << '\n';
    if (!result.errors.empty()) fail(ErrorCode::QueueFull, "some follow-up messages were not queued");
}

// --- serve / verify ----------------------------------------------------------

struct ServeArgs {
    std::string config_path;
    std::string store;
    std::string host;
    int port = -1;
    bool allow_remote = false;
};

void cmd_serve(const ServeArgs& a) {
    auto cfg = gateway::load_service_config(a.config_path);
    if (!a.store.empty()) cfg.store_root = a.store;
    if (!a.host.empty()) cfg.host = a.host;
    if (a.port >= 0) cfg.port = a.port;
    if (a.allow_remote) cfg.allow_remote = true;
    gateway::Gateway gw(cfg);
    gw.start();
    std::cerr << "listening on " << cfg.host << ":" << gw.port() << " store=" << cfg.store_root << std::endl;
    gw.wait();
}

void cmd_verify(const std::string& store_root, const std::string& session_id) {
    const auto log = session::read_log(fs::path(store_root) / session_id / "events.jsonl");
    const auto check = session::verify_replay(log);
    std::cout << json{{"session_id", session_id},
                      {"identical", check.identical},
                      {"updates", check.recorded_updates},
                      {"alerts", check.recorded_alerts},
                      {"mismatches", check.mismatches}}
                     .dump()
              << '\n';
    if (!check.identical) fail(ErrorCode::CorruptLog, "replay differs from the recorded stream");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"counsel: emotion-aware counseling support toolkit"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Generate the synthetic elicitation corpus and a session fixture");
    simulate->add_option("--out", sim.out_dir, "Output directory");
    simulate->add_option("--seed", sim.seed, "RNG seed");
    simulate->add_option("--participants", sim.participants)->check(CLI::PositiveNumber);
    simulate->add_option("--blocks", sim.blocks)->check(CLI::PositiveNumber);
    simulate->add_option("--block-s", sim.block_s)->check(CLI::PositiveNumber);

    FeaturesArgs feat;
    auto* features = app.add_subcommand("features", "PPG stream JSONL to HRV feature JSONL");
    features->add_option("--ppg", feat.ppg_path)->required();
    features->add_option("--blocks", feat.blocks_path, "Labelled blocks; emits a training dataset");
    features->add_option("--out", feat.out_path)->required();
    features->add_option("--rate", feat.rate_hz);
    features->add_option("--window-s", feat.window_s);

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train one classifier");
    train->add_option("--input", tr.input)->required();
    train->add_option("--model", tr.model)
        ->check(CLI::IsMember({"random_forest", "gradient_boosting", "adaboost", "svm_linear", "naive_bayes"}));
    train->add_option("--seed", tr.seed);
    train->add_option("--out", tr.out_path);
    train->add_flag("--all", tr.all, "Train on every sample instead of the training split");

    BenchArgs be;
    auto* bench = app.add_subcommand("bench", "Benchmark all classifiers on validation and test splits");
    bench->add_option("--input", be.input)->required();
    bench->add_option("--seed", be.seed);
    bench->add_option("--csv", be.csv_path);
    bench->add_option("--json", be.json_path);

    RunSessionArgs rs;
    auto* run_session = app.add_subcommand("run-session", "Replay recorded inputs through the full session pipeline");
    run_session->add_option("--store", rs.store);
    run_session->add_option("--config", rs.config_path, "SessionConfig JSON");
    run_session->add_option("--session-id", rs.session_id);
    run_session->add_option("--modality", rs.modality)->check(CLI::IsMember({"speech_only", "ppg_only", "multimodal"}));
    run_session->add_flag("--consent-speech", rs.consent_speech);
    run_session->add_flag("--consent-ppg", rs.consent_ppg);
    run_session->add_option("--pseudonym", rs.pseudonym);
    run_session->add_option("--counselor", rs.counselor);
    run_session->add_option("--ppg", rs.ppg_path);
    run_session->add_option("--speech", rs.speech_path);
    run_session->add_option("--transcript", rs.transcript_path);
    run_session->add_option("--model", rs.model_path);

    ReportArgs rp;
    auto* report_cmd = app.add_subcommand("report", "Transcript to structured session report");
    report_cmd->add_option("--store", rp.store);
    report_cmd->add_option("--session", rp.session_id);
    report_cmd->add_option("--transcript", rp.transcript_path);
    report_cmd->add_option("--summary", rp.summary_path);
    report_cmd->add_option("--out", rp.out_path);
    report_cmd->add_option("--template", rp.template_path);
    report_cmd->add_option("--generator-url", rp.generator_url);
    report_cmd->add_option("--generator-model", rp.generator_model);

    FollowupArgs fu;
    auto* followup_cmd = app.add_subcommand("followup", "Run one follow-up trigger sweep");
    followup_cmd->add_option("--store", fu.store);
    followup_cmd->add_option("--now-ms", fu.now_ms, "Sweep time in epoch milliseconds");
    followup_cmd->add_option("--goals", fu.goals_paths, "ClientGoals JSON files to store first");
    followup_cmd->add_option("--generator-url", fu.generator_url);
    followup_cmd->add_option("--generator-model", fu.generator_model);

    ServeArgs sv;
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--config", sv.config_path);
    serve->add_option("--store", sv.store);
    serve->add_option("--host", sv.host);
    serve->add_option("--port", sv.port);
    serve->add_flag("--allow-remote", sv.allow_remote);

    std::string verify_store = "counsel-store", verify_session;
    auto* verify = app.add_subcommand("verify-replay", "Check that a stored session replays identically");
    verify->add_option("--store", verify_store);
    verify->add_option("--session", verify_session)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kUsageError;
    }

    try {
        if (*simulate) cmd_simulate(sim);
        else if (*features) cmd_features(feat);
        else if (*train) cmd_train(tr);
        else if (*bench) cmd_bench(be);
        else if (*run_session) cmd_run_session(rs);
        else if (*report_cmd) cmd_report(rp);
        else if (*followup_cmd) cmd_followup(fu);
        else if (*serve) cmd_serve(sv);
        else if (*verify) cmd_verify(verify_store, verify_session);
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
        return e.code() == ErrorCode::InvalidArgument ? kUsageError : kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    }
    return 0;
}
