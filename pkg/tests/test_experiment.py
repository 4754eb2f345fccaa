import json

import numpy as np
import pytest

from npdetect import audio_ingest as ai
from npdetect.errors import ValidationError
from npdetect.experiment import (
    PIPELINES, ExperimentConfig, StageError, format_report, load_config, run_experiment,
    run_trial,
)
from npdetect.features import power_spectrum
from npdetect.rng import derive_seed
from npdetect.synth import BENCHMARK, SynthConfig, load_manifest, make_recording, synth_corpus

from conftest import TINY_SYNTH, tiny_config


class TestSynth:
    def test_byte_identical(self, tmp_path, tiny_corpus):
        synth_corpus(tmp_path, TINY_SYNTH)
        for f in sorted(tiny_corpus.iterdir()):
            assert (tmp_path / f.name).read_bytes() == f.read_bytes()

    def test_seed_matters(self):
        a, _, _ = make_recording(TINY_SYNTH, 0)
        b, _, _ = make_recording(SynthConfig(**{**TINY_SYNTH.__dict__, "seed": 8}), 0)
        assert not np.array_equal(a, b)

    def test_fundamental_peak(self):
        cfg = SynthConfig(duration_s=6.0)
        for i in range(4):
            x, events, _ = make_recording(cfg, i)
            for ev in events:
                a, b = int(ev["start_s"] * 8000), int(ev["end_s"] * 8000)
                seg = x[a:b][: (b - a) // 200 * 200].reshape(-1, 200)
                n_fft = 1024
                P = power_spectrum(seg, n_fft).mean(axis=0)
                freqs = np.arange(P.size) * 8000 / n_fft
                k = int(np.argmin(np.abs(freqs - ev["f0_hz"])))
                peak = P[k - 2:k + 3].max()
                near = (np.abs(freqs - ev["f0_hz"]) > 60) & (np.abs(freqs - ev["f0_hz"]) < 250)
                floor = np.median(P[near])
                assert 10 * np.log10(peak / floor) >= 6.0

    def test_positive_duration(self, tiny_corpus):
        man = load_manifest(tiny_corpus)
        recs = ai.load_recordings([tiny_corpus / r["file"] for r in man["recordings"]],
                                  tiny_corpus / man["label_file"])
        clips = [c for r in recs for c in ai.segment(r, 0.1)]
        n_pos = sum(c.label == 1 for c in clips)
        events = sum(len(r["events"]) for r in man["recordings"])
        # each event boundary can shift the count by at most one clip
        assert abs(n_pos * 0.1 - man["positive_duration_s"]) <= 0.1 * events

    def test_interference_unlabelled(self):
        x, events, inter = make_recording(BENCHMARK, 0)
        assert x.size == 30 * 8000 and 3 <= len(events) <= 6 and 1 <= len(inter) <= 2
        spans = sorted((e["start_s"], e["end_s"]) for e in events + inter)
        assert all(s2 >= e1 for (_, e1), (s2, _) in zip(spans, spans[1:]))

    def test_too_short(self, tmp_path):
        with pytest.raises(ValidationError, match="minimum span"):
            synth_corpus(tmp_path, SynthConfig(n_recordings=1, duration_s=0.5))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ValidationError):
            load_manifest(tmp_path)


class TestConfig:
    def test_file_and_overrides(self, tiny_config_file):
        cfg = load_config(tiny_config_file, alpha=0.05, master_seed=None)
        assert cfg.alpha == 0.05 and cfg.master_seed == 0
        assert cfg.gammas == (0.5, 2.0) and cfg.vae.epochs == 2 and cfg.Q == 7

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("bogus = 1\n")
        with pytest.raises(ValidationError, match="bogus"):
            load_config(p)

    def test_bad_values(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("alpha = 2\n")
        with pytest.raises(ValidationError):
            load_config(p)
        with pytest.raises(ValidationError):
            load_config(tmp_path / "missing.cfg")

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.alpha, cfg.Q, cfg.n_trials, cfg.library_budget) == (0.1, 100, 100, 2000)


class TestTrial:
    def test_structure_and_determinism(self, tiny_prepared):
        cfg = tiny_config()
        a = run_trial(cfg, 123, tiny_prepared)
        b = run_trial(cfg, 123, tiny_prepared)
        a.pop("_timing"), b.pop("_timing")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
        assert tuple(a["pipelines"]) == PIPELINES
        for p in a["pipelines"].values():
            c = p["test_counts"]
            assert c["tp"] + c["fn"] + c["fp"] + c["tn"] == a["n_test"]
            assert p["test_score"]["p_f"] == c["fp"] / (c["fp"] + c["tn"])
        lab = tiny_prepared.labels
        assert a["n_train"] + a["n_test"] == 2 * min((lab == 1).sum(), (lab == -1).sum())

    def test_selection_beats_baseline_on_holdout(self, tiny_prepared):
        # the baseline spec is a member of the MFCC library, so greedy selection cannot lose
        for seed in range(4):
            assert run_trial(tiny_config(), seed, tiny_prepared)["checks"]["mfcc_cssvm"]

    def test_seed_changes_trial(self, tiny_prepared):
        a = run_trial(tiny_config(), 1, tiny_prepared)
        b = run_trial(tiny_config(), 2, tiny_prepared)
        assert a["pipelines"] != b["pipelines"]

    def test_vae_include_test(self, tiny_prepared):
        a = run_trial(tiny_config(), 3, tiny_prepared)
        b = run_trial(tiny_config(vae_include_test=True), 3, tiny_prepared)
        assert a["pipelines"]["mfcc_svm"] == b["pipelines"]["mfcc_svm"]
        assert a["pipelines"]["mfcc_vae_cssvm"] != b["pipelines"]["mfcc_vae_cssvm"]

    def test_stage_tagged_error(self, tiny_prepared):
        import dataclasses
        one_class = dataclasses.replace(tiny_prepared, labels=np.ones_like(tiny_prepared.labels))
        with pytest.raises(StageError) as exc:
            run_trial(tiny_config(), 0, one_class)
        assert exc.value.stage == "balance"

    def test_format_report(self, tiny_prepared):
        text = format_report(run_trial(tiny_config(), 9, tiny_prepared))
        assert "[mfcc_cssvm]" in text and "true +1" in text


class TestExperiment:
    def test_summary(self, tiny_prepared):
        cfg = tiny_config(n_trials=3, master_seed=11)
        rep = run_experiment(cfg, tiny_prepared)
        timing = rep.pop("_timing")
        assert len(timing) == 3 and all(t["wall_time_s"] > 0 for t in timing)
        assert [t["trial_seed"] for t in rep["trials"]] == [derive_seed(11, i) for i in range(3)]
        assert rep["failed_trials"] == []
        for name in PIPELINES:
            agg = rep["aggregate"][name]
            pf = [t["pipelines"][name]["test_score"]["p_f"] for t in rep["trials"]]
            assert agg["n_within_alpha"] == sum(p <= 0.1 for p in pf)
            assert agg["mean_p_f"] == pytest.approx(np.mean(pf))

    def test_workers_match_serial(self, tiny_prepared):
        a = run_experiment(tiny_config(n_trials=2, master_seed=4), tiny_prepared)
        b = run_experiment(tiny_config(n_trials=2, master_seed=4, workers=2), tiny_prepared)
        a.pop("_timing"), b.pop("_timing")
        a["config"].pop("workers"), b["config"].pop("workers")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_failures_recorded(self, tiny_prepared):
        import dataclasses
        bad = dataclasses.replace(tiny_prepared, labels=np.ones_like(tiny_prepared.labels))
        rep = run_experiment(tiny_config(n_trials=2), bad)
        assert rep["failed_trials"] == [0, 1]
        assert all(t["error_kind"] == "data" for t in rep["trials"])
        assert rep["aggregate"]["mfcc_cssvm"]["n_trials"] == 0
