"""Python access to the counsel core: fusion, HRV, benchmarking, replay and reports."""

import json


class CounselError(Exception):
    """Raised for every core error; ``code`` names the error, e.g. "InvalidDistribution"."""

    @property
    def code(self):
        return self.args[0] if self.args else None


from . import _counsel  # noqa: E402  (CounselError must exist first)

EMOTIONS = ("sad", "neutral", "positive")

fuse = _counsel.fuse
speech_only_decision = _counsel.speech_only_decision
label_from_score = _counsel.label_from_score


def hrv_features(ibis_ms):
    return json.loads(_counsel.hrv_features(list(ibis_ms)))


def ingest_ppg(t_ms, values, rate_hz=100.0, window_s=60.0):
    return json.loads(_counsel.ingest_ppg(list(t_ms), list(values), rate_hz, window_s))


def synthetic_benchmark(seed=7, participants=30):
    return json.loads(_counsel.synthetic_benchmark(seed, participants))


def benchmark_file(path, seed=7):
    return json.loads(_counsel.benchmark_file(str(path), seed))


def verify_replay(log_path):
    return json.loads(_counsel.verify_replay(str(log_path)))


def fallback_report(transcript, summary=None):
    """``transcript`` is a list of {t_ms, role, text} dicts."""
    lines = "\n".join(json.dumps(t) for t in transcript)
    return json.loads(_counsel.fallback_report(lines, json.dumps(summary) if summary else ""))


def validate_report(report):
    return _counsel.validate_report(json.dumps(report))


class FusionEngine:
    """Per-session fusion state. ``step`` takes and returns plain dicts."""

    def __init__(self, config=None, speech=True, ppg=True):
        self._engine = _counsel._Engine(json.dumps(config or {}), speech, ppg)

    def step(self, t_ms, speech=None, ppg=None):
        out = self._engine.step(json.dumps({"t_ms": t_ms, "speech": speech, "ppg": ppg}))
        return json.loads(out)

    @property
    def s_p(self):
        return self._engine.s_p
