"""13-dimensional MFCC clip features and feature-matrix persistence."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import windows

from .errors import ValidationError

NPAF_MAGIC = b"NPAF"


@dataclass(frozen=True)
class MfccConfig:
    frame_length_s: float = 0.025
    hop_s: float = 0.010
    n_mel_filters: int = 26
    n_coefficients: int = 13
    fmin: float = 0.0
    fmax: float | None = None  # None means sample_rate / 2
    log_floor: float = 1e-10
    drop_c0: bool = False

    def validate(self, sample_rate: int, clip_len: int | None = None) -> None:
        if self.n_coefficients > self.n_mel_filters - (1 if self.drop_c0 else 0):
            raise ValidationError("n_coefficients exceeds available cepstral coefficients")
        fmax = self.upper_hz(sample_rate)
        if not (0.0 <= self.fmin < fmax <= sample_rate / 2):
            raise ValidationError(f"need 0 <= fmin < fmax <= {sample_rate / 2}")
        if not self.log_floor > 0:
            raise ValidationError("log_floor must be positive")
        if self.frame_samples(sample_rate) < 2 or self.hop_samples(sample_rate) < 1:
            raise ValidationError("frame/hop shorter than the sample period")
        if clip_len is not None and clip_len < self.frame_samples(sample_rate):
            raise ValidationError(
                f"clip of {clip_len} samples shorter than one "
                f"{self.frame_samples(sample_rate)}-sample frame"
            )

    def upper_hz(self, sample_rate: int) -> float:
        return sample_rate / 2 if self.fmax is None else float(self.fmax)

    def frame_samples(self, sample_rate: int) -> int:
        return int(round(self.frame_length_s * sample_rate))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_s * sample_rate))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def next_pow2(n: int) -> int:
    return 1 << max(0, (int(n) - 1).bit_length())


@lru_cache(maxsize=32)
def mel_filterbank(n_filters: int, n_fft: int, sample_rate: int, fmin: float, fmax: float):
    """Unit-peak triangular filters on the rfft bin grid.

    Returns ``(weights, centers_hz)`` with weights of shape
    ``(n_filters, n_fft // 2 + 1)``.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs - lo) / (mid - lo)
    fall = (hi - freqs) / (hi - mid)
    w = np.maximum(0.0, np.minimum(rise, fall))
    w.setflags(write=False)
    centers = edges[1:-1].copy()
    centers.setflags(write=False)
    return w, centers


@lru_cache(maxsize=8)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix (rows are basis vectors)."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    M = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    M[0] /= np.sqrt(2.0)
    M.setflags(write=False)
    return M


def dct(v) -> np.ndarray:
    """Orthonormal DCT-II along the last axis.

    Rows k >= 1 of the basis sum to zero, so they are applied to ``v - v[0]``;
    a constant input then gives exact zeros beyond coefficient 0.
    """
    v = np.asarray(v, dtype=np.float64)
    M = dct_matrix(v.shape[-1])
    out = np.empty_like(v)
    out[..., 0] = v @ M[0]
    out[..., 1:] = (v - v[..., :1]) @ M[1:].T
    return out


def idct(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return c @ dct_matrix(c.shape[-1])


def frame_signal(x, frame_len: int, hop: int) -> np.ndarray:
    """``(..., n_frames, frame_len)`` view of consecutive frames."""
    n_frames = 1 + (x.shape[-1] - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[..., idx]


def power_spectrum(frames, n_fft: int) -> np.ndarray:
    """``|rfft(hann * frame)|^2`` with zero padding to ``n_fft``."""
    win = windows.hann(frames.shape[-1], sym=False)
    return np.abs(np.fft.rfft(frames * win, n=n_fft)) ** 2


def log_mel_energies(x, sample_rate: int, cfg: MfccConfig) -> np.ndarray:
    """Per-frame log filterbank energies, shape ``(..., n_frames, n_mel_filters)``."""
    frame_len = cfg.frame_samples(sample_rate)
    n_fft = next_pow2(frame_len)
    fb, _ = mel_filterbank(cfg.n_mel_filters, n_fft, sample_rate,
                           float(cfg.fmin), cfg.upper_hz(sample_rate))
    frames = frame_signal(np.asarray(x, dtype=np.float64), frame_len, cfg.hop_samples(sample_rate))
    return np.log(power_spectrum(frames, n_fft) @ fb.T + cfg.log_floor)


def mfcc_batch(X, sample_rate: int, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """MFCC vectors for equal-length clips stacked as rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cfg.validate(sample_rate, X.shape[-1])
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        raise ValidationError(f"non-finite samples in clip {int(np.flatnonzero(bad)[0])}")
    ceps = dct(log_mel_energies(X, sample_rate, cfg))
    start = 1 if cfg.drop_c0 else 0
    return ceps[..., start:start + cfg.n_coefficients].mean(axis=-2)


def mfcc(clip, cfg: MfccConfig = MfccConfig(), sample_rate: int | None = None) -> np.ndarray:
    """Mean-over-frames MFCC vector of one clip (``LabeledClip`` or array)."""
    samples = getattr(clip, "samples", clip)
    rate = sample_rate or getattr(clip, "sample_rate", None)
    if not rate:
        raise ValidationError("sample rate unknown")
    return mfcc_batch(np.asarray(samples)[None, :], int(rate), cfg)[0]


@dataclass
class FeatureSet:
    """Feature rows, labels and the training-subset standardization stats."""

    X: np.ndarray
    y: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def standardized(self, rows=None) -> np.ndarray:
        X = self.X if rows is None else self.X[rows]
        return standardize(X, self.mean, self.std)


def standardize(X, mean, std) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - mean) / std


def fit_standardizer(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def featurize_dataset(clips, cfg: MfccConfig = MfccConfig(), train_index=None) -> FeatureSet:
    """MFCC matrix for a clip list plus standardization stats from ``train_index``.

    Clips are grouped by sample rate and length so each group is computed in
    one vectorized pass; row order follows ``clips``.
    """
    if not clips:
        raise ValidationError("no clips to featurize")
    X = np.empty((len(clips), cfg.n_coefficients))
    groups: dict = {}
    for i, c in enumerate(clips):
        groups.setdefault((c.sample_rate, len(c.samples)), []).append(i)
    for (rate, _), idx in groups.items():
        try:
            X[idx] = mfcc_batch(np.stack([clips[i].samples for i in idx]), rate, cfg)
        except ValidationError as exc:
            msg = str(exc)
            if msg.startswith("non-finite samples in clip "):
                k = int(msg.rsplit(" ", 1)[1])
                raise ValidationError(f"non-finite samples in clip {idx[k]}") from exc
            raise ValidationError(f"clip {idx[0]}: {msg}") from exc
    y = np.array([c.label for c in clips], dtype=np.int8)
    rows = np.arange(len(clips)) if train_index is None else np.asarray(train_index)
    mean, std = fit_standardizer(X[rows])
    return FeatureSet(X, y, mean, std)


# -- persistence -------------------------------------------------------------

def write_npaf(path, X) -> None:
    """``NPAF`` magic, u32 rows, u32 cols, little-endian f64 row-major."""
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ValidationError("NPAF stores 2-D matrices")
    with open(path, "wb") as fh:
        fh.write(NPAF_MAGIC + struct.pack("<II", *X.shape) + X.tobytes())


def read_npaf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12 or head[:4] != NPAF_MAGIC:
            raise ValidationError(f"{path}: not an NPAF file")
        rows, cols = struct.unpack("<II", head[4:])
        payload = fh.read()
    if len(payload) != 8 * rows * cols:
        raise ValidationError(f"{path}: payload length {len(payload)} != {8 * rows * cols}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_feature_csv(path, X, y) -> None:
    X = np.asarray(X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{k}" for k in range(X.shape[1])] + ["label"])
        for row, lab in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def read_feature_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        rows = [list(map(float, line)) for line in r if line]
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, :-1], arr[:, -1].astype(np.int8)
