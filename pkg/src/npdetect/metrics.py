"""Confusion counts and the Neyman-Pearson selection measure."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n_pos(self) -> int:
        return self.tp + self.fn

    @property
    def n_neg(self) -> int:
        return self.fp + self.tn

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        """Aligned-text confusion matrix with the positive class first."""
        rows = [("", "pred +1", "pred -1"),
                ("true +1", str(self.tp), str(self.fn)),
                ("true -1", str(self.fp), str(self.tn))]
        widths = [max(len(r[k]) for r in rows) for k in range(3)]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


@dataclass(frozen=True)
class NpScore:
    p_f: float
    p_m: float
    alpha: float
    e_hat: float

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(labels, predictions) -> ConfusionCounts:
    """Counts with +1 as the positive (event present) class."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape:
        raise ValidationError(f"length mismatch: {labels.shape} vs {predictions.shape}")
    if labels.size == 0:
        raise ValidationError("empty label vector")
    pos = labels > 0
    hit = predictions > 0
    return ConfusionCounts(
        tp=int(np.sum(pos & hit)),
        fp=int(np.sum(~pos & hit)),
        tn=int(np.sum(~pos & ~hit)),
        fn=int(np.sum(pos & ~hit)),
    )


def np_penalty(p_f, p_m, alpha):
    """``max(p_f - alpha, 0) / alpha + p_m``; broadcasts over arrays."""
    return np.maximum(np.asarray(p_f) - alpha, 0.0) / alpha + np.asarray(p_m)


def np_measure(c: ConfusionCounts, alpha: float) -> NpScore:
    """Soft-constrained Neyman-Pearson score of a confusion matrix.

    Raises
    ------
    ValidationError
        If either class is absent (a rate would be undefined) or ``alpha``
        is outside (0, 1).
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha={alpha} outside (0, 1)")
    if c.n_neg < 1:
        raise ValidationError("no negatives: false positive rate undefined")
    if c.n_pos < 1:
        raise ValidationError("no positives: false negative rate undefined")
    p_f = c.fp / c.n_neg
    p_m = c.fn / c.n_pos
    e_hat = float(np_penalty(p_f, p_m, alpha))
    return NpScore(p_f=p_f, p_m=p_m, alpha=alpha, e_hat=e_hat)
