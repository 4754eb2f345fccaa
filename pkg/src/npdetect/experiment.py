"""End-to-end trials: segment, balance, split, featurize, build, select, evaluate."""
from __future__ import annotations

import configparser
import contextlib
import dataclasses
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio_ingest as ai
from .ensemble import (
    RAW, VAE_CONFIGS, LibraryBuilder, LibraryGrids, THRESHOLD_PERCENTILES,
    evaluate, holdout_score, select,
)
from .errors import NpDetectError, SolverError, ValidationError
from .features import MfccConfig, fit_standardizer, mfcc_batch, standardize
from .metrics import confusion, np_measure
from .rng import derive_seed
from .svm import GAMMA_GRID, NU_GRID
from .synth import load_manifest
from .vae import VaeConfig

log = logging.getLogger(__name__)

PIPELINES = ("mfcc_svm", "mfcc_cssvm", "mfcc_vae_cssvm")


@dataclass(frozen=True)
class ExperimentConfig:
    alpha: float = 0.1
    clip_duration_s: float = 0.1
    positive_overlap_min: float = 0.5
    split_fraction: float = 0.10
    holdout_fraction: float = 0.20
    n_trials: int = 100
    Q: int = 100
    library_budget: int = 2000
    gammas: tuple = GAMMA_GRID
    nus: tuple = NU_GRID
    percentiles: tuple = THRESHOLD_PERCENTILES
    mfcc: MfccConfig = MfccConfig()
    vae: VaeConfig = VaeConfig()
    master_seed: int = 0
    workers: int = 1
    # library SVMs: looser than standalone training; unconverged specs are skipped
    svm_tolerance: float = 1e-3
    svm_max_passes: int = 100
    # let the VAEs also see test-split features (labels never used)
    vae_include_test: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if not 0 < self.split_fraction < 1 or not 0 < self.holdout_fraction < 1:
            raise ValidationError("split and holdout fractions must lie in (0, 1)")
        if self.n_trials < 1 or self.Q < 1 or self.library_budget < 1:
            raise ValidationError("n_trials, Q and library_budget must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: str):
    try:
        v = json.loads(value)
    except json.JSONDecodeError:
        return value.strip()
    return tuple(v) if isinstance(v, list) else v


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a ``key = value`` file; ``mfcc.*`` and ``vae.*`` keys set sub-configs.

    Values are JSON literals (numbers, ``true``, lists).  Keyword overrides
    (e.g. from CLI flags) win over the file; ``None`` overrides are ignored.
    """
    flat: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read_string("[config]\n" + Path(path).read_text())
        except (OSError, configparser.Error) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        flat = {k: _coerce(v) for k, v in parser["config"].items()}
    flat.update({k: v for k, v in overrides.items() if v is not None})
    top, sub = {}, {"mfcc": {}, "vae": {}}
    for k, v in flat.items():
        head, _, tail = k.partition(".")
        if tail and head in sub:
            sub[head][tail] = v
        else:
            top[k] = v
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(top) - names
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(mfcc=MfccConfig(**sub["mfcc"]), vae=VaeConfig(**sub["vae"]), **top)
    except TypeError as exc:
        raise ValidationError(f"bad config: {exc}") from exc


class StageError(NpDetectError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class PreparedCorpus:
    """All clips of a corpus with their raw (unstandardized) MFCC rows."""

    clip_refs: list  # (source_id, offset_s)
    labels: np.ndarray
    mfcc: np.ndarray
    n_recordings: int


def prepare_corpus(corpus_dir, cfg: ExperimentConfig = ExperimentConfig()) -> PreparedCorpus:
    manifest = load_manifest(corpus_dir)
    corpus_dir = Path(corpus_dir)
    wavs = [corpus_dir / r["file"] for r in manifest["recordings"]]
    with stage("segment"):
        recs = ai.load_recordings(wavs, corpus_dir / manifest["label_file"])
        clips = []
        for r in recs:
            clips.extend(ai.segment(r, cfg.clip_duration_s, cfg.positive_overlap_min))
        if not clips:
            raise ValidationError("corpus yields no clips")
    with stage("featurize"):
        rates = {c.sample_rate for c in clips}
        if len(rates) != 1:
            raise ValidationError(f"mixed sample rates in corpus: {sorted(rates)}")
        X = mfcc_batch(np.stack([c.samples for c in clips]), rates.pop(), cfg.mfcc)
    return PreparedCorpus([(c.source_id, c.offset_s) for c in clips],
                          np.array([c.label for c in clips], dtype=np.int8), X, len(recs))


@dataclass
class PipelineResult:
    test_counts: dict
    test_score: dict
    holdout_score: dict
    details: dict = field(default_factory=dict)


def _result(test, hold, **details):
    (tc, ts), (_, hs) = test, hold
    return {"test_counts": tc.to_dict(), "test_score": ts.to_dict(),
            "holdout_score": hs.to_dict(), **details}


def run_trial(cfg: ExperimentConfig, trial_seed: int, corpus: PreparedCorpus,
              trial_index: int = 0) -> dict:
    """One seeded trial; returns a JSON-ready report (wall time under ``_timing``)."""
    t0 = time.perf_counter()
    with stage("balance"):
        bal = ai.balance_indices(corpus.labels, derive_seed(trial_seed, 1))
    with stage("split"):
        sp = ai.split(bal, cfg.split_fraction, derive_seed(trial_seed, 2))
        train_rows, test_rows = bal[sp.train], bal[sp.test]
        if np.intersect1d(train_rows, test_rows).size:
            raise ValidationError("train/test overlap")
    with stage("featurize"):
        mean, std = fit_standardizer(corpus.mfcc[train_rows])
        X_tr = standardize(corpus.mfcc[train_rows], mean, std)
        y_tr = corpus.labels[train_rows]
        X_te = standardize(corpus.mfcc[test_rows], mean, std)
        y_te = corpus.labels[test_rows]

    with stage("build-library"):
        builder = LibraryBuilder(X_tr, y_tr, derive_seed(trial_seed, 3), cfg.holdout_fraction,
                                 vae_template=dataclasses.replace(cfg.vae, input_dim=X_tr.shape[1]),
                                 svm_tolerance=cfg.svm_tolerance,
                                 svm_max_passes=cfg.svm_max_passes,
                                 vae_extra=X_te if cfg.vae_include_test else None)
        baseline = builder.best_symmetric(RAW, cfg.gammas, cfg.nus)
        # the baseline is itself a legal raw-MFCC base model
        lib_mfcc = builder.build(
            LibraryGrids((RAW,), cfg.gammas, cfg.nus, cfg.percentiles), cfg.library_budget,
            derive_seed(trial_seed, 4), extra_specs=[baseline.spec])
        lib_vae = builder.build(
            LibraryGrids(VAE_CONFIGS, cfg.gammas, cfg.nus, cfg.percentiles), cfg.library_budget,
            derive_seed(trial_seed, 5))

    with stage("select"):
        ens_mfcc = select(lib_mfcc, lib_mfcc.holdout_labels, cfg.alpha, cfg.Q)
        ens_vae = select(lib_vae, lib_vae.holdout_labels, cfg.alpha, cfg.Q)

    with stage("evaluate"):
        yh = builder.holdout_labels
        base_hold_c = confusion(yh, baseline.validation_predictions)
        base_hold = (base_hold_c, np_measure(base_hold_c, cfg.alpha))
        base_test_c = confusion(y_te, baseline.predict(X_te))
        base_test = (base_test_c, np_measure(base_test_c, cfg.alpha))
        pipelines = {
            "mfcc_svm": _result(base_test, base_hold, spec=baseline.spec.to_dict()),
            "mfcc_cssvm": _result(evaluate(ens_mfcc, lib_mfcc, X_te, y_te, cfg.alpha),
                                  holdout_score(ens_mfcc, lib_mfcc),
                                  library_size=len(lib_mfcc.models),
                                  distinct_members=len(set(ens_mfcc.members))),
            "mfcc_vae_cssvm": _result(evaluate(ens_vae, lib_vae, X_te, y_te, cfg.alpha),
                                      holdout_score(ens_vae, lib_vae),
                                      library_size=len(lib_vae.models),
                                      distinct_members=len(set(ens_vae.members))),
        }
    base_e = pipelines["mfcc_svm"]["holdout_score"]["e_hat"]
    return {
        "trial_index": trial_index,
        "trial_seed": trial_seed,
        "n_train": int(train_rows.size),
        "n_test": int(test_rows.size),
        "pipelines": pipelines,
        "checks": {
            name: pipelines[name]["holdout_score"]["e_hat"] <= base_e
            for name in ("mfcc_cssvm", "mfcc_vae_cssvm")
        },
        "svm_failures": len(builder.failures),
        "_timing": {"wall_time_s": time.perf_counter() - t0},
    }


def _trial_job(args):
    cfg, corpus, index = args
    seed = derive_seed(cfg.master_seed, index)
    try:
        return run_trial(cfg, seed, corpus, index)
    except StageError as exc:
        log.error("trial %d failed: %s", index, exc)
        kind = "solver" if isinstance(exc.cause, SolverError) else "data"
        return {"trial_index": index, "trial_seed": seed, "failed": True,
                "stage": exc.stage, "error": str(exc), "error_kind": kind}


def _aggregate(reports, alpha):
    ok = [r for r in reports if not r.get("failed")]
    agg = {}
    for name in PIPELINES:
        pf = [r["pipelines"][name]["test_score"]["p_f"] for r in ok]
        pm = [r["pipelines"][name]["test_score"]["p_m"] for r in ok]
        eh = [r["pipelines"][name]["test_score"]["e_hat"] for r in ok]
        within = sum(p <= alpha for p in pf)
        agg[name] = {
            "n_trials": len(pf),
            "n_within_alpha": within,
            "fraction_within_alpha": within / len(pf) if pf else None,
            "all_within_alpha": bool(pf) and within == len(pf),
            "mean_p_f": statistics.fmean(pf) if pf else None,
            "var_p_f": statistics.pvariance(pf) if pf else None,
            "mean_p_m": statistics.fmean(pm) if pm else None,
            "std_p_m": statistics.pstdev(pm) if pm else None,
            "mean_e_hat": statistics.fmean(eh) if eh else None,
        }
    return agg


def run_experiment(cfg: ExperimentConfig, corpus: PreparedCorpus, progress=None) -> dict:
    """Run ``cfg.n_trials`` independent trials and aggregate them.

    Trial ``i`` uses ``derive_seed(master_seed, i)``.  Results are ordered by
    trial index whatever ``cfg.workers`` is.  Per-trial wall times are
    returned under ``"_timing"`` and should be stored apart from the summary
    so that the summary is reproducible byte for byte.
    """
    jobs = [(cfg, corpus, i) for i in range(cfg.n_trials)]
    if cfg.workers > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(cfg.workers) as pool:
            reports = []
            for r in pool.imap(_trial_job, jobs):
                reports.append(r)
                if progress:
                    progress(r)
    else:
        reports = []
        for job in jobs:
            r = _trial_job(job)
            reports.append(r)
            if progress:
                progress(r)
    timing = [r.pop("_timing", None) for r in reports]
    failed = [r["trial_index"] for r in reports if r.get("failed")]
    return {
        "config": cfg.to_dict(),
        "n_trials": cfg.n_trials,
        "failed_trials": failed,
        "aggregate": _aggregate(reports, cfg.alpha),
        "trials": reports,
        "_timing": timing,
    }


def format_report(report: dict) -> str:
    """Human-readable confusion matrices for one trial report."""
    from .metrics import ConfusionCounts

    lines = [f"trial {report['trial_index']} (seed {report['trial_seed']})"]
    for name, p in report["pipelines"].items():
        c = ConfusionCounts(**p["test_counts"])
        s = p["test_score"]
        lines.append(f"\n[{name}]  P_F={s['p_f']:.4f}  P_M={s['p_m']:.4f}  e_hat={s['e_hat']:.4f}")
        lines.append(c.table())
    return "\n".join(lines)
