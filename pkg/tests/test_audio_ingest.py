import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from npdetect.audio_ingest import (
    LabeledClip, Recording, balance, balance_indices, clips_from_manifest, load_recordings,
    read_clip_manifest, read_label_csv, read_wav, segment, split, write_clip_manifest,
    write_label_csv, write_wav,
)
from npdetect.errors import ValidationError


def rec(duration_s, spans=(), rate=8000, seed=0):
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, int(round(duration_s * rate)))
    return Recording("r", x, rate, list(spans))


def fake_clips(n_pos, n_neg):
    labels = [1] * n_pos + [-1] * n_neg
    return [LabeledClip("r", 0.1 * i, np.zeros(4), lab, 40) for i, lab in enumerate(labels)]


class TestSegment:
    def test_exact_alignment(self):
        clips = segment(rec(1.0, [(0.0, 0.5)]), 0.1)
        assert len(clips) == 10
        assert [c.label for c in clips] == [1] * 5 + [-1] * 5
        assert all(len(c.samples) == 800 for c in clips)

    def test_too_short_is_empty(self):
        assert segment(rec(0.05), 0.1) == []

    def test_forty_percent_coverage_is_negative(self):
        clips = segment(rec(0.1, [(0.0, 0.04)]), 0.1, positive_overlap_min=0.5)
        assert [c.label for c in clips] == [-1]

    def test_threshold_is_inclusive(self):
        clips = segment(rec(0.1, [(0.0, 0.05)]), 0.1, positive_overlap_min=0.5)
        assert clips[0].label == 1

    def test_tail_dropped(self):
        clips = segment(rec(1.25), 0.1)
        assert len(clips) == 12

    def test_invalid_span_named(self):
        with pytest.raises(ValidationError, match=r"\(0.5, 2.0\)"):
            rec(1.0, [(0.5, 2.0)])
        with pytest.raises(ValidationError):
            rec(1.0, [(0.6, 0.4)])

    def test_overlapping_spans_merged(self):
        r = rec(1.0, [(0.3, 0.6), (0.1, 0.4), (0.8, 0.9)])
        assert r.label_spans == [(0.1, 0.6), (0.8, 0.9)]

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(ValidationError):
            segment(rec(1.0), 0.0)

    def test_bad_recording(self):
        with pytest.raises(ValidationError):
            Recording("x", np.zeros(0), 8000)
        with pytest.raises(ValidationError):
            Recording("x", np.zeros(10), 0)

    @given(st.floats(0.05, 2.0), st.floats(0.01, 0.3))
    @settings(max_examples=40, deadline=None)
    def test_lossless_prefix(self, dur, clip_s):
        r = rec(dur, rate=1000)
        clip_len = int(round(clip_s * 1000))
        clips = segment(r, clip_s)
        assert len(clips) == r.samples.size // clip_len
        if clips:
            joined = np.concatenate([c.samples for c in clips])
            np.testing.assert_array_equal(joined, r.samples[:joined.size])


class TestBalance:
    def test_balanced_unchanged_counts(self):
        out = balance(fake_clips(7360, 7360), seed=0)
        labels = np.array([c.label for c in out])
        assert (labels == 1).sum() == 7360 and (labels == -1).sum() == 7360

    def test_downsample_majority(self):
        out = balance(fake_clips(100, 40), seed=3)
        labels = np.array([c.label for c in out])
        assert (labels == 1).sum() == 40 and (labels == -1).sum() == 40
        # minority kept whole
        assert sorted(c.offset_s for c in out if c.label == -1) == \
            sorted(c.offset_s for c in fake_clips(100, 40) if c.label == -1)

    def test_deterministic(self):
        a = balance_indices([1] * 100 + [-1] * 40, seed=9)
        b = balance_indices([1] * 100 + [-1] * 40, seed=9)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, balance_indices([1] * 100 + [-1] * 40, seed=10))

    def test_missing_class(self):
        with pytest.raises(ValidationError, match="negative"):
            balance(fake_clips(5, 0), 0)
        with pytest.raises(ValidationError, match="positive"):
            balance(fake_clips(0, 5), 0)

    @given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 2**32))
    @settings(max_examples=50, deadline=None)
    def test_counts_equal(self, p, n, seed):
        idx = balance_indices([1] * p + [-1] * n, seed)
        labels = np.array([1] * p + [-1] * n)[idx]
        assert (labels == 1).sum() == (labels == -1).sum() == min(p, n)
        assert len(set(idx.tolist())) == idx.size


class TestSplit:
    def test_sizes(self):
        s = split(range(14720), 0.10, seed=0)
        assert (s.train.size, s.test.size) == (1472, 13248)

    def test_seeds_differ(self):
        a = split(range(10), 0.5, seed=0)
        b = split(range(10), 0.5, seed=1)
        assert a.train.size == b.train.size == 5
        assert not np.array_equal(a.train, b.train)

    def test_deterministic(self):
        a, b = split(range(500), 0.1, 4), split(range(500), 0.1, 4)
        np.testing.assert_array_equal(a.train, b.train)
        np.testing.assert_array_equal(a.test, b.test)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValidationError):
            split(range(10), frac)

    @given(st.integers(2, 300), st.floats(0.01, 0.99), st.integers(0, 2**32))
    @settings(max_examples=60, deadline=None)
    def test_partition(self, n, frac, seed):
        s = split(range(n), frac, seed)
        assert s.train.size == int(round(frac * n))
        both = np.concatenate([s.train, s.test])
        np.testing.assert_array_equal(np.sort(both), np.arange(n))

    def test_dict_round_trip(self):
        s = split(range(30), 0.2, 5)
        t = type(s).from_dict(s.to_dict())
        np.testing.assert_array_equal(s.train, t.train)
        assert t.seed == 5


class TestFiles:
    def test_int16_scaled(self, tmp_path):
        p = tmp_path / "a.wav"
        wavfile.write(p, 8000, np.array([-32768, 0, 16384], dtype=np.int16))
        x, rate = read_wav(p)
        assert rate == 8000
        np.testing.assert_array_equal(x, [-1.0, 0.0, 0.5])

    def test_float_stereo_downmix(self, tmp_path):
        p = tmp_path / "b.wav"
        data = np.array([[0.5, -0.5], [1.0, 0.0]], dtype=np.float32)
        wavfile.write(p, 16000, data)
        x, rate = read_wav(p)
        assert rate == 16000
        np.testing.assert_allclose(x, [0.0, 0.5])

    def test_write_read(self, tmp_path):
        p = tmp_path / "c.wav"
        x = np.linspace(-1, 1, 101)
        write_wav(p, x, 8000)
        y, _ = read_wav(p)
        np.testing.assert_allclose(y, x, atol=2 / 32768)

    def test_unreadable(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"not a wav")
        with pytest.raises(ValidationError):
            read_wav(p)

    def test_labels_and_manifest(self, tmp_path):
        spans = {"rec1": [(0.0, 0.25)], "rec2": [(0.1, 0.2), (0.5, 0.7)]}
        write_label_csv(tmp_path / "labels.csv", spans)
        assert read_label_csv(tmp_path / "labels.csv") == spans
        for rid in spans:
            write_wav(tmp_path / f"{rid}.wav", np.zeros(8000), 8000)
        recs = load_recordings(sorted(tmp_path.glob("*.wav")), tmp_path / "labels.csv")
        assert [r.id for r in recs] == ["rec1", "rec2"]
        clips = [c for r in recs for c in segment(r, 0.1)]
        write_clip_manifest(tmp_path / "clips.csv", clips)
        man = read_clip_manifest(tmp_path / "clips.csv")
        again = clips_from_manifest(man, recs, 0.1)
        assert [(c.source_id, c.offset_s, c.label) for c in again] == \
            [(c.source_id, c.offset_s, c.label) for c in clips]
        assert [c.label for c in again[:4]] == [1, 1, 1, -1]

    def test_label_csv_missing_column(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("recording_id,start_s\nx,0\n")
        with pytest.raises(ValidationError, match="end_s"):
            read_label_csv(p)

    def test_manifest_unknown_recording(self):
        with pytest.raises(ValidationError):
            clips_from_manifest([("nope", 0.0, 1)], [], 0.1)
