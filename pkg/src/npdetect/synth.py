"""Synthetic stand-in corpus: harmonic tone events over pink-ish noise."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio_ingest import write_label_csv, write_wav
from .errors import ValidationError
from .rng import generator

LABEL_FILE = "labels.csv"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class SynthConfig:
    n_recordings: int = 40
    sample_rate: int = 8000
    duration_s: float = 10.0
    spans_per_recording: tuple = (1, 3)
    span_length_s: tuple = (0.8, 2.5)
    f0_hz: tuple = (350.0, 650.0)
    n_harmonics: int = 2
    snr_db: tuple = (0.0, 10.0)
    noise_rms: tuple = (0.02, 0.08)
    amplitude_jitter: float = 0.3
    # unlabelled tonal interference (negatives that resemble events)
    interference_per_recording: tuple = (0, 0)
    interference_f0_hz: tuple = (700.0, 1000.0)
    interference_harmonics: int = 0
    interference_snr_db: tuple = (0.0, 10.0)
    seed: int = 0


# Preset used by the acceptance benchmark: 40 recordings, ~7000 balanced clips,
# with harmonic interference whose band overlaps the events' upper harmonics.
BENCHMARK = SynthConfig(
    n_recordings=40, duration_s=30.0, spans_per_recording=(3, 6), snr_db=(-5.0, 5.0),
    interference_per_recording=(1, 2), interference_f0_hz=(550.0, 850.0),
    interference_harmonics=2, interference_snr_db=(-5.0, 5.0), seed=1,
)


def pink_noise(n: int, rng) -> np.ndarray:
    """Unit-variance noise with a 1/f power spectrum (DC removed)."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n=n)
    return x / x.std()


def _spans(cfg: SynthConfig, rng, k: int):
    spans = []
    for _ in range(50 * k):
        if len(spans) == k:
            break
        length = rng.uniform(cfg.span_length_s[0], min(cfg.span_length_s[1], cfg.duration_s))
        start = rng.uniform(0.0, cfg.duration_s - length)
        # keep a 0.2 s gap so events stay distinct
        if all(start + length + 0.2 <= s or start >= e + 0.2 for s, e in spans):
            spans.append((start, start + length))
    return spans


def tone_complex(n: int, sample_rate: int, f0: float, n_harmonics: int, jitter: float, rng):
    """Fundamental plus ``n_harmonics`` overtones with slow amplitude jitter."""
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for h in range(1, n_harmonics + 2):
        if h * f0 >= sample_rate / 2:
            break
        amp = 1.0 / h
        x += amp * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    # smooth random envelope, ~10 Hz modulation
    knots = rng.uniform(1 - jitter, 1 + jitter, size=max(2, int(n / sample_rate * 10) + 2))
    env = np.interp(np.linspace(0, knots.size - 1, n), np.arange(knots.size), knots)
    ramp = min(n // 2, int(0.01 * sample_rate))
    if ramp > 0:
        fade = np.linspace(0.0, 1.0, ramp)
        env[:ramp] *= fade
        env[-ramp:] *= fade[::-1]
    return x * env


def make_recording(cfg: SynthConfig, index: int):
    rng = generator(cfg.seed, 0x5A, index)
    n = int(round(cfg.duration_s * cfg.sample_rate))
    noise_rms = rng.uniform(*cfg.noise_rms)
    x = noise_rms * pink_noise(n, rng)
    k_event = int(rng.integers(cfg.spans_per_recording[0], cfg.spans_per_recording[1] + 1))
    k_int = int(rng.integers(cfg.interference_per_recording[0],
                             cfg.interference_per_recording[1] + 1))
    spans = _spans(cfg, rng, k_event + k_int)
    events, interference = [], []
    for idx, (s, e) in sorted(enumerate(spans), key=lambda p: p[1]):
        is_event = idx < k_event
        a, b = int(round(s * cfg.sample_rate)), int(round(e * cfg.sample_rate))
        if is_event:
            f0 = float(rng.uniform(*cfg.f0_hz))
            snr = float(rng.uniform(*cfg.snr_db))
            harmonics = cfg.n_harmonics
        else:
            f0 = float(rng.uniform(*cfg.interference_f0_hz))
            snr = float(rng.uniform(*cfg.interference_snr_db))
            harmonics = cfg.interference_harmonics
        tone = tone_complex(b - a, cfg.sample_rate, f0, harmonics, cfg.amplitude_jitter, rng)
        tone *= noise_rms * 10 ** (snr / 20) / np.sqrt(np.mean(tone**2))
        x[a:b] += tone
        (events if is_event else interference).append(
            {"start_s": a / cfg.sample_rate, "end_s": b / cfg.sample_rate,
             "f0_hz": f0, "snr_db": snr})
    peak = np.abs(x).max()
    if peak > 0.95:
        x *= 0.95 / peak
    return x, events, interference


def synth_corpus(out_dir, cfg: SynthConfig = SynthConfig()) -> dict:
    """Write WAV files, ``labels.csv`` and ``manifest.json`` into ``out_dir``."""
    if cfg.n_recordings < 1:
        raise ValidationError("n_recordings must be >= 1")
    if not 0 < cfg.span_length_s[0] <= cfg.duration_s:
        raise ValidationError(
            f"duration_s={cfg.duration_s} is shorter than the minimum span {cfg.span_length_s[0]}"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recs, spans = [], {}
    for i in range(cfg.n_recordings):
        rec_id = f"rec{i:03d}"
        x, events, interference = make_recording(cfg, i)
        write_wav(out / f"{rec_id}.wav", x, cfg.sample_rate)
        spans[rec_id] = [(ev["start_s"], ev["end_s"]) for ev in events]
        recs.append({"id": rec_id, "file": f"{rec_id}.wav",
                     "duration_s": x.size / cfg.sample_rate, "events": events,
                     "interference": interference})
    write_label_csv(out / LABEL_FILE, spans)
    manifest = {
        "config": asdict(cfg),
        "label_file": LABEL_FILE,
        "recordings": recs,
        "positive_duration_s": sum(ev["end_s"] - ev["start_s"] for r in recs for ev in r["events"]),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2))
    return manifest


def load_manifest(corpus_dir) -> dict:
    path = Path(corpus_dir) / MANIFEST_FILE
    if not path.exists():
        raise ValidationError(f"no {MANIFEST_FILE} in {corpus_dir}")
    return json.loads(path.read_text())
