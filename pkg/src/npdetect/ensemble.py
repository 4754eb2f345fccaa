"""Base-model library, greedy Neyman-Pearson ensemble selection and voting."""
from __future__ import annotations

import dataclasses
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import vae as vae_mod
from .errors import SolverError, ValidationError
from .features import fit_standardizer
from .metrics import confusion, np_measure, np_penalty
from .rng import derive_seed, generator
from .svm import (
    GAMMA_GRID, NU_GRID, SvmHyper, SvmModel, model_from_dict, model_to_dict, rbf_gram, train_2nu,
)

log = logging.getLogger(__name__)

THRESHOLD_PERCENTILES = (5, 15, 30, 50, 70, 85, 95)


@dataclass(frozen=True, order=True)
class FeatureConfig:
    """Raw MFCC (``latent_dim is None``) or a VAE structure."""

    latent_dim: int | None = None
    hidden_dim: int | None = None

    @property
    def uses_vae(self) -> bool:
        return self.latent_dim is not None

    @property
    def name(self) -> str:
        return "mfcc" if not self.uses_vae else f"vae-{self.latent_dim}-{self.hidden_dim}"

    @classmethod
    def parse(cls, text: str) -> "FeatureConfig":
        text = text.strip()
        if text in ("mfcc", "raw"):
            return cls()
        parts = text.replace(":", "-").split("-")
        if len(parts) != 3 or parts[0] != "vae":
            raise ValidationError(f"bad feature config {text!r}; use 'mfcc' or 'vae-<latent>-<hidden>'")
        return cls(int(parts[1]), int(parts[2]))


RAW = FeatureConfig()
VAE_CONFIGS = tuple(FeatureConfig(l, h) for l in (3, 5) for h in (10, 50))
ALL_FEATURE_CONFIGS = (RAW,) + VAE_CONFIGS


@dataclass(frozen=True)
class LibraryGrids:
    feature_configs: tuple = ALL_FEATURE_CONFIGS
    gammas: tuple = GAMMA_GRID
    nus: tuple = NU_GRID
    percentiles: tuple = THRESHOLD_PERCENTILES

    @property
    def size(self) -> int:
        return (len(self.feature_configs) * len(self.gammas) * len(self.nus) ** 2
                * len(self.percentiles))

    def spec_at(self, flat: int):
        dims = (len(self.feature_configs), len(self.gammas), len(self.nus),
                len(self.nus), len(self.percentiles))
        f, g, a, b, t = np.unravel_index(flat, dims)
        pct = self.percentiles[t]
        return BaseModelSpec(self.feature_configs[f], self.gammas[g], self.nus[a],
                             self.nus[b], None if pct is None else float(pct))


@dataclass(frozen=True)
class BaseModelSpec:
    feature: FeatureConfig
    gamma: float
    nu_plus: float
    nu_minus: float
    percentile: float | None  # None: fixed threshold given by ``fixed_threshold``
    fixed_threshold: float = 0.0

    @property
    def svm_key(self):
        return (self.feature, self.gamma, self.nu_plus, self.nu_minus)

    def to_dict(self) -> dict:
        return {"feature": self.feature.name, "gamma": self.gamma, "nu_plus": self.nu_plus,
                "nu_minus": self.nu_minus, "percentile": self.percentile,
                "fixed_threshold": self.fixed_threshold}

    @classmethod
    def from_dict(cls, d) -> "BaseModelSpec":
        return cls(FeatureConfig.parse(d["feature"]), float(d["gamma"]), float(d["nu_plus"]),
                   float(d["nu_minus"]), d["percentile"], float(d.get("fixed_threshold", 0.0)))


@dataclass
class BaseModel:
    spec: BaseModelSpec
    svm: SvmModel
    threshold: float
    vae: vae_mod.VaeModel | None
    validation_predictions: np.ndarray
    # latent standardization (training-row statistics); unused for raw MFCC
    latent_mean: np.ndarray | None = None
    latent_std: np.ndarray | None = None

    def features(self, X_raw) -> np.ndarray:
        if self.vae is None:
            return np.asarray(X_raw, dtype=np.float64)
        return latent_transform(self.vae, X_raw, self.latent_mean, self.latent_std)

    def scores(self, X_raw) -> np.ndarray:
        return self.svm.decision_function(self.features(X_raw))

    def predict(self, X_raw) -> np.ndarray:
        return np.where(self.scores(X_raw) >= self.threshold, 1, -1).astype(np.int8)


@dataclass
class ModelLibrary:
    models: list
    holdout_index: np.ndarray  # rows of the training matrix used for selection
    fit_index: np.ndarray
    holdout_labels: np.ndarray
    vaes: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def prediction_matrix(self) -> np.ndarray:
        return np.stack([m.validation_predictions for m in self.models]).astype(np.int8)


@dataclass
class Ensemble:
    members: list  # library indices, duplicates allowed
    alpha: float
    selection_trace: list  # (step, chosen index, ensemble e_hat)

    @property
    def Q(self) -> int:
        return len(self.members)

    def to_dict(self, library: ModelLibrary | None = None) -> dict:
        d = {"alpha": self.alpha, "Q": self.Q, "members": list(map(int, self.members)),
             "selection_trace": [[int(s), int(i), float(e)] for s, i, e in self.selection_trace]}
        if library is not None:
            svm_pos: dict = {}
            for m in library.models:
                svm_pos.setdefault(m.spec.svm_key, len(svm_pos))
            d["member_specs"] = []
            for i in self.members:
                m = library.models[i]
                d["member_specs"].append(m.spec.to_dict() | {
                    "threshold": m.threshold,
                    "svm_ref": f"{SVM_FILE}#{svm_pos[m.spec.svm_key]}",
                    "vae_ref": _vae_file(m.spec.feature) if m.vae is not None else None,
                })
        return d

    @classmethod
    def from_dict(cls, d) -> "Ensemble":
        return cls([int(i) for i in d["members"]], float(d["alpha"]),
                   [tuple(t) for t in d["selection_trace"]])


def latent_transform(model, X_raw, mean, std) -> np.ndarray:
    """Encoder means, standardized with training-set statistics."""
    return (vae_mod.latent_features(model, X_raw) - mean) / std


def stratified_holdout(y, fraction: float, seed: int):
    """Seeded per-class split of row indices into ``(fit, holdout)``."""
    y = np.asarray(y)
    rng = generator(seed, 0x401D)
    hold = []
    for cls in (1, -1):
        idx = np.flatnonzero(y == cls)
        k = int(round(fraction * idx.size))
        if idx.size >= 2:
            k = min(max(k, 1), idx.size - 1)
        hold.append(rng.choice(idx, size=k, replace=False))
    hold = np.sort(np.concatenate(hold))
    fit = np.setdiff1d(np.arange(y.size), hold)
    return fit, hold


class LibraryBuilder:
    """Trains and caches VAEs and SVMs over one training set.

    Each VAE is trained once per feature config on all training rows
    (labels unused); SVMs are fit on the non-holdout rows and cached by
    ``(feature, gamma, nu_plus, nu_minus)`` so specs differing only in
    threshold share a classifier.
    """

    def __init__(self, X_train, y_train, seed: int, holdout_fraction: float = 0.2,
                 vae_template: vae_mod.VaeConfig | None = None, svm_tolerance: float = 1e-6,
                 svm_max_passes: int = 10_000, vae_extra=None):
        self.X = np.asarray(X_train, dtype=np.float64)
        self.y = np.asarray(y_train)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValidationError("training matrix and labels disagree in shape")
        if not ((self.y > 0).any() and (self.y < 0).any()):
            raise ValidationError("training labels must contain both classes")
        self.seed = seed
        self.fit_index, self.holdout_index = stratified_holdout(self.y, holdout_fraction, seed)
        yh = self.y[self.holdout_index]
        if not ((yh > 0).any() and (yh < 0).any()):
            raise ValidationError("selection holdout lacks a class; training set too small")
        self.vae_template = vae_template or vae_mod.VaeConfig(input_dim=self.X.shape[1])
        self.svm_tolerance = svm_tolerance
        self.svm_max_passes = svm_max_passes
        # unlabelled rows (e.g. test features) the VAEs may also learn from
        self.vae_extra = None if vae_extra is None else np.asarray(vae_extra, dtype=np.float64)
        self.vaes: dict = {}
        self._feats: dict = {}
        self._latent_stats: dict = {}
        self._grams: dict = {}
        self._svms: dict = {}
        self._holdout_scores: dict = {}
        self.failures: list = []

    # -- caches -------------------------------------------------------------
    def vae_for(self, feature: FeatureConfig):
        if not feature.uses_vae:
            return None
        if feature not in self.vaes:
            cfg = dataclasses.replace(
                self.vae_template, input_dim=self.X.shape[1], latent_dim=feature.latent_dim,
                hidden_dim=feature.hidden_dim,
                seed=derive_seed(self.seed, 1000 * feature.latent_dim + feature.hidden_dim),
            )
            log.debug("training VAE %s", feature.name)
            data = self.X if self.vae_extra is None else np.vstack([self.X, self.vae_extra])
            self.vaes[feature] = vae_mod.train(data, cfg)
        return self.vaes[feature]

    def features(self, feature: FeatureConfig) -> np.ndarray:
        if feature not in self._feats:
            model = self.vae_for(feature)
            if model is None:
                self._feats[feature] = self.X
            else:
                Z = vae_mod.latent_features(model, self.X)
                mean, std = fit_standardizer(Z)
                self._latent_stats[feature] = (mean, std)
                self._feats[feature] = (Z - mean) / std
        return self._feats[feature]

    def _gram(self, feature, gamma):
        key = (feature, gamma)
        if key not in self._grams:
            F = self.features(feature)[self.fit_index]
            self._grams[key] = rbf_gram(F, gamma=gamma)
        return self._grams[key]

    def svm(self, key):
        """Trained SVM for ``key`` or ``None`` if training failed."""
        if key not in self._svms:
            feature, gamma, nu_p, nu_m = key
            hyper = SvmHyper(nu_p, nu_m, gamma, self.svm_tolerance, self.svm_max_passes)
            F = self.features(feature)
            try:
                model = train_2nu(F[self.fit_index], self.y[self.fit_index], hyper,
                                  K=self._gram(feature, gamma))
            except SolverError as exc:
                self.failures.append({"key": _key_dict(key), "error": str(exc)})
                model = None
            self._svms[key] = model
            if model is not None:
                self._holdout_scores[key] = model.decision_function(F[self.holdout_index])
        return self._svms[key]

    def base_model(self, spec: BaseModelSpec):
        model = self.svm(spec.svm_key)
        if model is None:
            return None
        scores = self._holdout_scores[spec.svm_key]
        thr = spec.fixed_threshold if spec.percentile is None else float(
            np.percentile(scores, spec.percentile))
        preds = np.where(scores >= thr, 1, -1).astype(np.int8)
        mean, std = self._latent_stats.get(spec.feature, (None, None))
        return BaseModel(spec, model, thr, self.vae_for(spec.feature), preds, mean, std)

    @property
    def holdout_labels(self):
        return self.y[self.holdout_index]

    # -- library construction ----------------------------------------------
    def build(self, grids: LibraryGrids = LibraryGrids(), budget: int = 2000,
              seed: int | None = None, extra_specs=()) -> ModelLibrary:
        """Library over the grid product, subsampled to ``budget`` specs.

        ``extra_specs`` are appended after the sampled grid specs.
        """
        if budget < 1:
            raise ValidationError("library budget must be >= 1")
        specs = sample_specs(grids, budget, self.seed if seed is None else seed)
        specs = list(specs) + list(extra_specs)
        n_fail = len(self.failures)
        models = []
        for spec in specs:
            m = self.base_model(spec)
            if m is not None:
                models.append(m)
        if not models:
            raise SolverError("no base model trained successfully")
        vaes = {f: v for f, v in self.vaes.items() if any(m.spec.feature == f for m in models)}
        return ModelLibrary(models, self.holdout_index, self.fit_index, self.holdout_labels,
                            vaes, self.failures[n_fail:])

    def best_symmetric(self, feature: FeatureConfig = RAW, gammas=GAMMA_GRID, nus=NU_GRID):
        """Accuracy-tuned baseline: nu_plus = nu_minus, threshold 0.

        Picks the highest holdout accuracy; ties go to the first candidate
        in grid order.
        """
        best, best_acc = None, -1.0
        yh = self.holdout_labels
        for gamma, nu in itertools.product(gammas, nus):
            m = self.base_model(BaseModelSpec(feature, gamma, nu, nu, None, 0.0))
            if m is None:
                continue
            acc = float(np.mean(m.validation_predictions == yh))
            if acc > best_acc:
                best, best_acc = m, acc
        if best is None:
            raise SolverError("no symmetric baseline model trained successfully")
        return best


def _key_dict(key):
    f, g, a, b = key
    return {"feature": f.name, "gamma": g, "nu_plus": a, "nu_minus": b}


def sample_specs(grids: LibraryGrids, budget: int, seed: int):
    """All grid specs, or a seeded uniform subset of ``budget`` of them in grid order."""
    total = grids.size
    if total <= budget:
        flat = np.arange(total)
    else:
        flat = np.sort(generator(seed, 0x5BEC).choice(total, size=budget, replace=False))
    return [grids.spec_at(int(k)) for k in flat]


def build_library(train_features, train_labels, grids: LibraryGrids = LibraryGrids(),
                  budget: int = 2000, seed: int = 0, **builder_kw) -> ModelLibrary:
    """One-shot library construction; see :class:`LibraryBuilder`."""
    return LibraryBuilder(train_features, train_labels, seed, **builder_kw).build(grids, budget)


def _np_scores(pred_pos, pos, alpha):
    """e_hat and miss rate for each row of a boolean prediction matrix."""
    n_pos = pos.sum()
    n_neg = pos.size - n_pos
    fp = (pred_pos & ~pos).sum(axis=-1)
    fn = (~pred_pos & pos).sum(axis=-1)
    p_m = fn / n_pos
    return np_penalty(fp / n_neg, p_m, alpha), p_m


def select(library, holdout_labels, alpha: float = 0.1, Q: int = 100) -> Ensemble:
    """Greedy forward selection with replacement minimizing holdout e_hat.

    ``library`` is a :class:`ModelLibrary` or a ``(M, H)`` matrix of +1/-1
    holdout predictions.  Each step adds the model whose inclusion gives the
    lowest majority-vote e_hat (ties: lower miss rate, then lower index).
    """
    P = library.prediction_matrix() if isinstance(library, ModelLibrary) else np.asarray(library)
    y = np.asarray(holdout_labels)
    if Q < 1:
        raise ValidationError("ensemble size Q must be >= 1")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if P.ndim != 2 or P.shape[1] != y.size:
        raise ValidationError("prediction matrix does not match holdout labels")
    pos = y > 0
    if pos.all() or not pos.any():
        raise ValidationError("selection holdout must contain both classes")
    P = P.astype(np.int32)
    order = np.arange(P.shape[0])
    votes = np.zeros(y.size, dtype=np.int32)
    members, trace = [], []
    for step in range(Q):
        e, p_m = _np_scores((votes[None, :] + P) > 0, pos, alpha)
        k = int(np.lexsort((order, p_m, e))[0])
        votes += P[k]
        members.append(k)
        trace.append((step, k, float(e[k])))
    return Ensemble(members, alpha, trace)


def vote_matrix(ensemble: Ensemble, library: ModelLibrary, X_raw) -> np.ndarray:
    """Sum of member votes for each row of ``X_raw`` (duplicates count)."""
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
    n_models = len(library.models)
    counts: dict = {}
    for i in ensemble.members:
        if not 0 <= i < n_models:
            raise ValidationError(f"ensemble member {i} not in library of {n_models}")
        counts[i] = counts.get(i, 0) + 1
    feats: dict = {}
    scores: dict = {}
    total = np.zeros(X_raw.shape[0], dtype=np.int64)
    for i, c in sorted(counts.items()):
        m = library.models[i]
        fkey = m.spec.feature
        if fkey not in feats:
            feats[fkey] = m.features(X_raw)
        skey = id(m.svm)
        if skey not in scores:
            scores[skey] = m.svm.decision_function(feats[fkey])
        total += c * np.where(scores[skey] >= m.threshold, 1, -1)
    return total


def ensemble_predict(ensemble: Ensemble, library: ModelLibrary, X_raw) -> np.ndarray:
    """Majority vote; a tied vote resolves to -1."""
    return np.where(vote_matrix(ensemble, library, X_raw) > 0, 1, -1).astype(np.int8)


def vote(ensemble: Ensemble, library: ModelLibrary, x_raw) -> int:
    return int(ensemble_predict(ensemble, library, np.asarray(x_raw)[None, :])[0])


def evaluate(ensemble: Ensemble, library: ModelLibrary, X_raw, y, alpha: float | None = None):
    """Confusion counts and NP score of the committee on labelled rows."""
    preds = ensemble_predict(ensemble, library, X_raw)
    c = confusion(y, preds)
    return c, np_measure(c, ensemble.alpha if alpha is None else alpha)


def holdout_score(ensemble: Ensemble, library: ModelLibrary):
    """NP score of the committee on the library's selection holdout."""
    P = library.prediction_matrix().astype(np.int64)
    votes = np.zeros(P.shape[1], dtype=np.int64)
    for i in ensemble.members:
        votes += P[i]
    c = confusion(library.holdout_labels, np.where(votes > 0, 1, -1))
    return c, np_measure(c, ensemble.alpha)


LIBRARY_FILE = "library.json"
SVM_FILE = "svms.json"


def _vae_file(feature: FeatureConfig) -> str:
    return f"{feature.name}.json"


def save_library(library: ModelLibrary, out_dir) -> Path:
    """Write the library as ``library.json`` + ``svms.json`` + one JSON file per VAE.

    SVMs shared by several specs (same key, different threshold) are
    stored once and referenced by position in ``svms.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    svm_pos: dict = {}
    svms = []
    entries = []
    for m in library.models:
        key = m.spec.svm_key
        if key not in svm_pos:
            svm_pos[key] = len(svms)
            svms.append(model_to_dict(m.svm))
        entries.append({
            "spec": m.spec.to_dict(),
            "threshold": m.threshold,
            "svm_ref": svm_pos[key],
            "vae_ref": _vae_file(m.spec.feature) if m.vae is not None else None,
            "latent_mean": None if m.latent_mean is None else m.latent_mean.tolist(),
            "latent_std": None if m.latent_std is None else m.latent_std.tolist(),
            "validation_predictions": m.validation_predictions.astype(int).tolist(),
        })
    for feature, model in sorted(library.vaes.items()):
        (out / _vae_file(feature)).write_text(model.to_json())
    (out / SVM_FILE).write_text(json.dumps(svms))
    path = out / LIBRARY_FILE
    path.write_text(json.dumps({
        "models": entries,
        "holdout_index": library.holdout_index.tolist(),
        "fit_index": library.fit_index.tolist(),
        "holdout_labels": library.holdout_labels.astype(int).tolist(),
        "failures": library.failures,
    }))
    return path


def load_library(lib_dir) -> ModelLibrary:
    lib_dir = Path(lib_dir)
    try:
        d = json.loads((lib_dir / LIBRARY_FILE).read_text())
        svm_dicts = json.loads((lib_dir / SVM_FILE).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read library in {lib_dir}: {exc}") from exc
    svms = [model_from_dict(s) for s in svm_dicts]
    vaes: dict = {}
    models = []
    for e in d["models"]:
        spec = BaseModelSpec.from_dict(e["spec"])
        vae = None
        if e["vae_ref"] is not None:
            if spec.feature not in vaes:
                vaes[spec.feature] = vae_mod.VaeModel.from_json(
                    (lib_dir / e["vae_ref"]).read_text())
            vae = vaes[spec.feature]
        arr = (lambda v: None if v is None else np.asarray(v, dtype=np.float64))
        models.append(BaseModel(spec, svms[e["svm_ref"]], float(e["threshold"]), vae,
                                np.asarray(e["validation_predictions"], dtype=np.int8),
                                arr(e["latent_mean"]), arr(e["latent_std"])))
    return ModelLibrary(models, np.asarray(d["holdout_index"], dtype=np.int64),
                        np.asarray(d["fit_index"], dtype=np.int64),
                        np.asarray(d["holdout_labels"], dtype=np.int8), vaes,
                        list(d.get("failures", [])))
