// Thin pybind11 layer. Structured values cross as JSON text; the Python
// package decodes them so the C++ side stays free of Python object juggling.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "counsel/error.hpp"
#include "counsel/fusion.hpp"
#include "counsel/models.hpp"
#include "counsel/pipeline.hpp"
#include "counsel/ppg.hpp"
#include "counsel/report.hpp"
#include "counsel/session.hpp"
#include "counsel/synthetic.hpp"

namespace py = pybind11;
using json = nlohmann::json;
using namespace counsel;

namespace {

fusion::EmotionDistribution dist_of(const std::vector<double>& p) {
    const auto d = fusion::EmotionDistribution::from(p);
    d.validate();
    return d;
}

// Stateful engine; inputs and outputs are JSON text.
class PyEngine {
public:
    PyEngine(const std::string& config_json, bool speech, bool ppg)
        : engine_(session::fusion_config_from_json(json::parse(config_json)), {}, {speech, ppg}) {
        engine_.config().validate();
    }

    std::string step(const std::string& inputs_json) {
        const auto j = json::parse(inputs_json);
        fusion::IntervalInputs in;
        in.t_ms = j.at("t_ms").get<std::int64_t>();
        if (j.contains("speech") && !j["speech"].is_null()) {
            const auto e = speech::speech_event_from_json(j["speech"]);
            in.speech = e.to_evidence();
        }
        if (j.contains("ppg") && !j["ppg"].is_null()) {
            auto b = session::PpgFeatureBatch::from_json(j["ppg"]);
            in.ppg = b.to_evidence();
        }
        const auto s = engine_.step(in);
        json out = {{"update", fusion::to_json(s.update)}, {"alerts", json::array()}};
        for (const auto& a : s.alerts) out["alerts"].push_back(fusion::to_json(a));
        return out.dump();
    }

    double s_p() const { return engine_.state().s_p; }

private:
    fusion::FusionEngine engine_;
};

}  // namespace

PYBIND11_MODULE(_counsel, m) {
    m.doc() = "native core of the counsel package";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            const auto cls = py::module_::import("counsel").attr("CounselError");
            PyErr_SetObject(cls.ptr(), py::make_tuple(std::string(to_string(e.code())), e.what()).ptr());
        } catch (const json::exception& e) {
            const auto cls = py::module_::import("counsel").attr("CounselError");
            PyErr_SetObject(cls.ptr(), py::make_tuple("ParseError", e.what()).ptr());
        }
    });

    m.def("fuse", [](const std::vector<double>& p_s, const std::vector<double>& p_p, const std::string& quality,
                     double alpha_high, double alpha_low) {
        fusion::FusionConfig cfg;
        cfg.alpha_high = alpha_high;
        cfg.alpha_low = alpha_low;
        cfg.validate();
        const auto r = fusion::fuse(dist_of(p_s), dist_of(p_p), fusion::parse_speech_quality(quality), cfg);
        return py::make_tuple(std::vector<double>(r.p_f.p.begin(), r.p_f.p.end()), std::string(to_string(r.label)));
    }, py::arg("p_s"), py::arg("p_p"), py::arg("quality") = "high", py::arg("alpha_high") = 0.7,
       py::arg("alpha_low") = 0.3);

    m.def("speech_only_decision", [](const std::vector<double>& p_s, double epsilon) {
        return std::string(to_string(fusion::speech_only_decision(dist_of(p_s), epsilon)));
    }, py::arg("p_s"), py::arg("epsilon") = 0.0);

    m.def("label_from_score", [](double s_p, double delta1) {
        return std::string(to_string(fusion::label_from_score(s_p, delta1)));
    }, py::arg("s_p"), py::arg("delta1") = 1.0);

    py::class_<PyEngine>(m, "_Engine")
        .def(py::init<const std::string&, bool, bool>())
        .def("step", &PyEngine::step)
        .def_property_readonly("s_p", &PyEngine::s_p);

    m.def("hrv_features", [](const std::vector<double>& ibis_ms) {
        return ppg::to_json(ppg::compute_hrv_features(ppg::IbiSeries::gate(ibis_ms))).dump();
    });

    m.def("ingest_ppg", [](const std::vector<std::int64_t>& t_ms, const std::vector<double>& values, double rate_hz,
                           double window_s) {
        if (t_ms.size() != values.size()) fail(ErrorCode::InvalidArgument, "t_ms and values differ in length");
        std::vector<ppg::PpgSample> samples(t_ms.size());
        for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = {t_ms[i], values[i]};
        ppg::IngestOptions opt;
        opt.declared_rate_hz = rate_hz;
        opt.window_len_s = window_s;
        json out = json::array();
        for (const auto& w : ppg::ingest_ppg_stream(samples, opt)) {
            auto b = pipeline::batch_from_window(w, nullptr).to_json();
            b["start_ms"] = w.window.start_ms;
            b["peaks"] = w.peak_times_ms.size();
            out.push_back(b);
        }
        return out.dump();
    }, py::arg("t_ms"), py::arg("values"), py::arg("rate_hz") = 100.0, py::arg("window_s") = 60.0);

    m.def("synthetic_benchmark", [](std::uint64_t seed, int participants) {
        synth::ElicitationOptions opt;
        opt.n_participants = participants;
        py::gil_scoped_release release;
        const auto data = synth::dataset_from_streams(synth::generate_synthetic_elicitation(seed, opt));
        return models::run_benchmark(data, seed, {}, "synthetic_elicitation").to_json().dump();
    }, py::arg("seed") = 7, py::arg("participants") = 30);

    m.def("benchmark_file", [](const std::string& dataset_path, std::uint64_t seed) {
        const auto data = models::load_dataset_jsonl(dataset_path);
        py::gil_scoped_release release;
        return models::run_benchmark(data, seed, {}, dataset_path).to_json().dump();
    }, py::arg("dataset_path"), py::arg("seed") = 7);

    m.def("verify_replay", [](const std::string& log_path) {
        const auto log = session::read_log(log_path);
        const auto r = session::verify_replay(log);
        return json{{"identical", r.identical},
                    {"recorded_updates", r.recorded_updates},
                    {"recorded_alerts", r.recorded_alerts},
                    {"mismatches", r.mismatches}}
            .dump();
    });

    m.def("fallback_report", [](const std::string& transcript_jsonl, const std::string& summary_json) {
        report::ReportInputs in;
        in.transcript = report::parse_transcript_jsonl(transcript_jsonl);
        if (!summary_json.empty()) in.summary = session::SessionSummary::from_json(json::parse(summary_json));
        return report::generate_report(in, nullptr).to_json().dump();
    }, py::arg("transcript_jsonl"), py::arg("summary_json") = "");

    m.def("validate_report", [](const std::string& report_json) {
        return report::validate_report(report::StructuredReport::from_json(json::parse(report_json)));
    });
}
