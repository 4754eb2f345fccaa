"""``npdetect`` command line: corpus synthesis through the multi-trial experiment.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 solver or
training failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import audio_ingest as ai
from . import experiment as exp
from . import synth
from .ensemble import (
    RAW, VAE_CONFIGS, Ensemble, LibraryBuilder, LibraryGrids, ModelLibrary, evaluate,
    holdout_score, load_library, save_library, select,
)
from .errors import NpDetectError, SolverError, ValidationError
from .features import fit_standardizer, read_feature_csv, standardize, write_feature_csv
from .rng import derive_seed
from .vae import train as train_vae

log = logging.getLogger("npdetect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc


def _config(args) -> exp.ExperimentConfig:
    return exp.load_config(
        getattr(args, "config", None),
        alpha=getattr(args, "alpha", None),
        n_trials=getattr(args, "trials", None),
        library_budget=getattr(args, "budget", None),
        master_seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None),
    )


# -- subcommands -----------------------------------------------------------

def cmd_synth(args):
    base = synth.BENCHMARK if args.preset == "benchmark" else synth.SynthConfig()
    over = {"seed": args.seed, "n_recordings": args.recordings, "duration_s": args.duration}
    cfg = dataclasses.replace(base, **{k: v for k, v in over.items() if v is not None})
    manifest = synth.synth_corpus(args.out, cfg)
    log.info("wrote %d recordings (%.1f s of events) to %s", len(manifest["recordings"]),
             manifest["positive_duration_s"], args.out)


def _clips(corpus, cfg):
    manifest = synth.load_manifest(corpus)
    corpus = Path(corpus)
    recs = ai.load_recordings([corpus / r["file"] for r in manifest["recordings"]],
                              corpus / manifest["label_file"])
    clips = []
    for r in recs:
        clips.extend(ai.segment(r, cfg.clip_duration_s, cfg.positive_overlap_min))
    return clips


def cmd_segment(args):
    cfg = _config(args)
    clips = _clips(args.corpus, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ai.write_clip_manifest(out / "clips.csv", clips)
    n_pos = sum(c.label == 1 for c in clips)
    log.info("%d clips (%d positive) -> %s", len(clips), n_pos, out / "clips.csv")


def cmd_featurize(args):
    cfg = _config(args)
    corpus = exp.prepare_corpus(args.corpus, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_feature_csv(out / "features.csv", corpus.mfcc, corpus.labels)
    log.info("%d x %d MFCC matrix -> %s", *corpus.mfcc.shape, out / "features.csv")


def cmd_train_vae(args):
    cfg = _config(args)
    X, _ = read_feature_csv(args.features)
    mean, std = fit_standardizer(X)
    vcfg = dataclasses.replace(cfg.vae, input_dim=X.shape[1], latent_dim=args.latent,
                               hidden_dim=args.hidden,
                               seed=cfg.vae.seed if args.seed is None else args.seed)
    model = train_vae(standardize(X, mean, std), vcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(model.to_json())
    log.info("final ELBO %.4f -> %s", model.training_elbo_trace[-1], out)


def cmd_build_library(args):
    cfg = _config(args)
    X, y = read_feature_csv(args.features)
    seed = cfg.master_seed
    bal = ai.balance_indices(y, derive_seed(seed, 1))
    sp = ai.split(bal, cfg.split_fraction, derive_seed(seed, 2))
    train_rows, test_rows = bal[sp.train], bal[sp.test]
    mean, std = fit_standardizer(X[train_rows])
    builder = LibraryBuilder(standardize(X[train_rows], mean, std), y[train_rows],
                             derive_seed(seed, 3), cfg.holdout_fraction,
                             vae_template=dataclasses.replace(cfg.vae, input_dim=X.shape[1]),
                             svm_tolerance=cfg.svm_tolerance, svm_max_passes=cfg.svm_max_passes,
                             vae_extra=(standardize(X[test_rows], mean, std)
                                        if cfg.vae_include_test else None))
    out = Path(args.out)
    baseline = builder.best_symmetric(RAW, cfg.gammas, cfg.nus)
    families = {"mfcc": (RAW,), "vae": VAE_CONFIGS}
    for name in (["mfcc", "vae"] if args.family == "all" else [args.family]):
        grids = LibraryGrids(families[name], cfg.gammas, cfg.nus, cfg.percentiles)
        extra = [baseline.spec] if name == "mfcc" else []
        lib = builder.build(grids, cfg.library_budget,
                            derive_seed(seed, 4 if name == "mfcc" else 5), extra_specs=extra)
        save_library(lib, out / f"library-{name}")
        log.info("library-%s: %d models, %d failed specs", name, len(lib.models),
                 len(lib.failures))
    save_library(ModelLibrary([baseline], builder.holdout_index, builder.fit_index,
                              builder.holdout_labels), out / "baseline")
    _dump(out / "split.json", {"seed": seed, "train_rows": train_rows.tolist(),
                               "test_rows": test_rows.tolist(),
                               "mean": mean.tolist(), "std": std.tolist()})


def cmd_select(args):
    cfg = _config(args)
    lib = load_library(args.library)
    ens = select(lib, lib.holdout_labels, cfg.alpha, args.Q or cfg.Q)
    d = ens.to_dict(lib)
    d["library"] = str(Path(args.library))
    _dump(Path(args.out), d)
    _, s = holdout_score(ens, lib)
    log.info("Q=%d, %d distinct members, holdout e_hat %.4f", ens.Q, len(set(ens.members)),
             s.e_hat)


def cmd_evaluate(args):
    cfg = _config(args)
    lib = load_library(args.library)
    split = _load_json(Path(args.workdir) / "split.json")
    X, y = read_feature_csv(args.features)
    rows = np.asarray(split["test_rows"], dtype=np.int64)
    if rows.size and rows.max() >= X.shape[0]:
        raise ValidationError("split does not match feature file")
    X_te = standardize(X[rows], np.asarray(split["mean"]), np.asarray(split["std"]))
    if args.ensemble:
        ens = Ensemble.from_dict(_load_json(args.ensemble))
    elif len(lib.models) == 1:
        ens = Ensemble([0], cfg.alpha, [])
    else:
        raise ValidationError("--ensemble is required for a library with several models")
    c, s = evaluate(ens, lib, X_te, y[rows], cfg.alpha)
    report = {"test_counts": c.to_dict(), "test_score": s.to_dict()}
    if args.out:
        _dump(Path(args.out), report)
    print(f"P_F={s.p_f:.4f}  P_M={s.p_m:.4f}  e_hat={s.e_hat:.4f}")
    print(c.table())


def cmd_trial(args):
    cfg = _config(args)
    corpus = exp.prepare_corpus(args.corpus, cfg)
    seed = derive_seed(cfg.master_seed, args.index)
    report = exp.run_trial(cfg, seed, corpus, args.index)
    timing = report.pop("_timing")
    out = Path(args.out)
    _dump(out / f"trial-{args.index:03d}.json", report)
    text = exp.format_report(report)
    (out / f"trial-{args.index:03d}.txt").write_text(text + "\n")
    log.info("trial %d done in %.1f s", args.index, timing["wall_time_s"])
    if not args.quiet:
        print(text)


def cmd_experiment(args):
    cfg = _config(args)
    corpus = exp.prepare_corpus(args.corpus, cfg)
    log.info("%d clips from %d recordings; %d trials", corpus.labels.size,
             corpus.n_recordings, cfg.n_trials)

    def progress(r):
        if r.get("failed"):
            log.warning("trial %d failed in stage %s", r["trial_index"], r["stage"])
        else:
            pf = {k: round(v["test_score"]["p_f"], 3) for k, v in r["pipelines"].items()}
            log.info("trial %d: test P_F %s", r["trial_index"], pf)

    summary = exp.run_experiment(cfg, corpus, progress)
    timing = summary.pop("_timing")
    out = Path(args.out)
    _dump(out / "summary.json", summary)
    _dump(out / "timing.json", timing)
    (out / "report.txt").write_text(_experiment_text(summary) + "\n")
    if not args.quiet:
        print(_experiment_text(summary, trials=False))
    failed = [r for r in summary["trials"] if r.get("failed")]
    if failed:
        msg = f"{len(failed)} of {cfg.n_trials} trials failed (first: {failed[0]['error']})"
        if any(r["error_kind"] == "solver" for r in failed):
            raise SolverError(msg)
        raise ValidationError(msg)


def _experiment_text(summary, trials: bool = True) -> str:
    lines = [f"{'pipeline':<16}{'within':>8}{'mean P_F':>10}{'var P_F':>11}"
             f"{'mean P_M':>10}{'mean e_hat':>12}"]
    for name, a in summary["aggregate"].items():
        if not a["n_trials"]:
            continue
        lines.append(f"{name:<16}{a['n_within_alpha']:>4}/{a['n_trials']:<3}"
                     f"{a['mean_p_f']:>10.4f}{a['var_p_f']:>11.6f}{a['mean_p_m']:>10.4f}"
                     f"{a['mean_e_hat']:>12.4f}")
    if trials:
        for r in summary["trials"]:
            if not r.get("failed"):
                lines.append("")
                lines.append(exp.format_report(r))
    return "\n".join(lines)


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--alpha", type=float, help="false-positive cap")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors")

    p = _Parser(prog="npdetect", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--preset", choices=("default", "benchmark"), default="default")
    s.add_argument("--recordings", type=int)
    s.add_argument("--duration", type=float, help="seconds per recording")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("segment", parents=[common], help="cut a corpus into labelled clips")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("featurize", parents=[common], help="MFCC features for every clip")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train-vae", parents=[common], help="train one VAE on a feature file")
    s.add_argument("--features", required=True)
    s.add_argument("--latent", type=int, default=3)
    s.add_argument("--hidden", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_vae)

    s = sub.add_parser("build-library", parents=[common],
                       help="split, train the baseline and base-model libraries")
    s.add_argument("--features", required=True)
    s.add_argument("--budget", type=int)
    s.add_argument("--family", choices=("mfcc", "vae", "all"), default="all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_library)

    s = sub.add_parser("select", parents=[common], help="greedy ensemble selection")
    s.add_argument("--library", required=True)
    s.add_argument("--Q", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("evaluate", parents=[common], help="score on the test split")
    s.add_argument("--features", required=True)
    s.add_argument("--workdir", required=True, help="build-library output directory")
    s.add_argument("--library", required=True)
    s.add_argument("--ensemble")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("trial", parents=[common], help="one end-to-end trial")
    s.add_argument("--corpus", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--budget", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_trial)

    s = sub.add_parser("experiment", parents=[common], help="the multi-trial experiment")
    s.add_argument("--corpus", required=True)
    s.add_argument("--trials", type=int)
    s.add_argument("--budget", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, exp.StageError):
        exc = exc.cause
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    return EXIT_DATA


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        args.func(args)
    except (NpDetectError, OSError, ValueError) as exc:
        print(f"npdetect: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
