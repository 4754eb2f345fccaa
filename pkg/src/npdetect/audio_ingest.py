"""Recordings, fixed-length labelled clips, balancing and splitting."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ValidationError
from .rng import generator

log = logging.getLogger(__name__)

# absolute slack when checking span endpoints against the recording length
_SPAN_EPS = 1e-9


@dataclass
class Recording:
    id: str
    samples: np.ndarray
    sample_rate: int
    label_spans: list = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValidationError(f"{self.id}: sample_rate must be positive")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValidationError(f"{self.id}: samples must be a non-empty 1-D array")
        self.label_spans = normalize_spans(self.label_spans, self.duration, self.id)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class LabeledClip:
    source_id: str
    offset_s: float
    samples: np.ndarray
    label: int
    sample_rate: int = 0


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    test: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": self.train.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, d) -> "DatasetSplit":
        return cls(np.asarray(d["train"], dtype=np.int64),
                   np.asarray(d["test"], dtype=np.int64), int(d["seed"]))


def normalize_spans(spans, duration: float, rec_id: str = "?"):
    """Validate ``(start, end)`` spans and merge overlapping ones."""
    out = []
    for s, e in spans:
        s, e = float(s), float(e)
        if not (s < e) or s < -_SPAN_EPS or e > duration + _SPAN_EPS:
            raise ValidationError(
                f"{rec_id}: invalid label span ({s}, {e}) for duration {duration:.6g} s"
            )
        out.append((max(s, 0.0), min(e, duration)))
    out.sort()
    merged = []
    for s, e in out:
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def _coverage(spans, start: float, end: float) -> float:
    return sum(max(0.0, min(e, end) - max(s, start)) for s, e in spans)


def segment(rec: Recording, clip_duration_s: float = 0.1, positive_overlap_min: float = 0.5):
    """Cut a recording into consecutive non-overlapping clips.

    A clip is positive when at least ``positive_overlap_min`` of its
    duration lies inside the recording's label spans.  A partial final clip
    is dropped; a recording shorter than one clip yields ``[]``.
    """
    if not clip_duration_s > 0:
        raise ValidationError("clip_duration_s must be positive")
    clip_len = int(round(clip_duration_s * rec.sample_rate))
    if clip_len < 1:
        raise ValidationError("clip shorter than one sample")
    clips = []
    for k in range(rec.samples.size // clip_len):
        a = k * clip_len
        start = a / rec.sample_rate
        end = (a + clip_len) / rec.sample_rate
        frac = _coverage(rec.label_spans, start, end) / (end - start)
        clips.append(LabeledClip(
            source_id=rec.id,
            offset_s=start,
            samples=rec.samples[a:a + clip_len],
            label=1 if frac >= positive_overlap_min else -1,
            sample_rate=rec.sample_rate,
        ))
    return clips


def balance(clips, seed: int):
    """Downsample the majority class to the minority count, then shuffle."""
    return [clips[i] for i in balance_indices([c.label for c in clips], seed)]


def balance_indices(labels, seed: int) -> np.ndarray:
    """Index form of :func:`balance`."""
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels > 0)
    neg = np.flatnonzero(labels < 0)
    if pos.size == 0:
        raise ValidationError("balance: no positive (+1) clips")
    if neg.size == 0:
        raise ValidationError("balance: no negative (-1) clips")
    rng = generator(seed, 0xBA1)
    k = min(pos.size, neg.size)
    if pos.size > k:
        pos = np.sort(rng.choice(pos, size=k, replace=False))
    if neg.size > k:
        neg = np.sort(rng.choice(neg, size=k, replace=False))
    keep = np.concatenate([pos, neg])
    return keep[rng.permutation(keep.size)]


def split(clips, split_fraction: float = 0.10, seed: int = 0) -> DatasetSplit:
    """Random train/test partition; ``round(fraction * n)`` rows go to train."""
    if not 0.0 < split_fraction < 1.0:
        raise ValidationError(f"split_fraction={split_fraction} outside (0, 1)")
    n = len(clips)
    n_train = int(round(split_fraction * n))
    perm = generator(seed, 0x5B1).permutation(n)
    return DatasetSplit(np.sort(perm[:n_train]), np.sort(perm[n_train:]), seed)


# -- file formats ------------------------------------------------------------

def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono float64 samples in [-1, 1] and the sample rate.

    Integer PCM is divided by the dtype's maximum magnitude; multi-channel
    audio is averaged across channels.
    """
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read WAV {path}: {exc}") from exc
    if np.issubdtype(data.dtype, np.integer):
        if data.dtype == np.uint8:
            x = (data.astype(np.float64) - 128.0) / 128.0
        else:
            x = data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if not np.isfinite(x).all():
        raise ValidationError(f"{path}: non-finite samples")
    return x, int(rate)


def write_wav(path, samples, sample_rate: int) -> None:
    """16-bit PCM WAV; samples are clipped to [-1, 1]."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, sample_rate, np.round(x * 32767.0).astype("<i2"))


def read_label_csv(path) -> dict:
    """``recording_id,start_s,end_s`` rows grouped by recording id."""
    spans: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"recording_id", "start_s", "end_s"} - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            spans.setdefault(row["recording_id"], []).append(
                (float(row["start_s"]), float(row["end_s"]))
            )
    return spans


def write_label_csv(path, spans_by_id: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recording_id", "start_s", "end_s"])
        for rec_id, spans in spans_by_id.items():
            for s, e in spans:
                w.writerow([rec_id, repr(float(s)), repr(float(e))])


def load_recordings(wav_paths, label_csv):
    """Read WAV files; the recording id is the file stem."""
    spans = read_label_csv(label_csv)
    recs = []
    for p in wav_paths:
        p = Path(p)
        x, rate = read_wav(p)
        recs.append(Recording(p.stem, x, rate, spans.get(p.stem, [])))
    return recs


def write_clip_manifest(path, clips) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source_id", "offset_s", "label"])
        for c in clips:
            w.writerow([c.source_id, repr(float(c.offset_s)), int(c.label)])


def read_clip_manifest(path):
    with open(path, newline="") as fh:
        return [(r["source_id"], float(r["offset_s"]), int(r["label"]))
                for r in csv.DictReader(fh)]


def clips_from_manifest(manifest, recordings, clip_duration_s: float):
    """Re-slice clips listed in a manifest out of loaded recordings."""
    by_id = {r.id: r for r in recordings}
    out = []
    for source_id, offset_s, label in manifest:
        rec = by_id.get(source_id)
        if rec is None:
            raise ValidationError(f"clip manifest references unknown recording {source_id!r}")
        clip_len = int(round(clip_duration_s * rec.sample_rate))
        a = int(round(offset_s * rec.sample_rate))
        if a + clip_len > rec.samples.size:
            raise ValidationError(f"clip at {offset_s} s runs past the end of {source_id}")
        out.append(LabeledClip(source_id, offset_s, rec.samples[a:a + clip_len], label,
                               rec.sample_rate))
    return out
