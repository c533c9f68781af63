"""Clip format round trips, temporal subsampling, augmentation, manifests."""

import json
import os

import numpy as np
import pytest

from stmae.errors import (BadMagicError, ClipFormatError, ConfigError,
                          DataError, TruncatedClipError, VersionError)
from stmae.video import (DatasetManifest, VideoClip, augment,
                         check_disjoint_splits, load_clips, load_manifest,
                         quantize_frames, read_clip, temporal_subsample,
                         write_clip)

RNG = np.random.default_rng(7)


def _clip(frames=16, h=32, w=32, c=3, label=2, fps=3.75):
    data = quantize_frames(RNG.random((frames, h, w, c), dtype=np.float64))
    return VideoClip(frames=data, fps=fps, label=label)


def test_round_trip_is_bit_exact(tmp_path):
    clip = _clip()
    path = tmp_path / "a.vclp"
    write_clip(clip, path)
    back = read_clip(path)
    np.testing.assert_array_equal(back.frames, clip.frames)
    assert back.fps == clip.fps
    assert back.label == clip.label


def test_file_size_is_header_plus_payload(tmp_path):
    path = tmp_path / "a.vclp"
    write_clip(_clip(), path)
    # 30-byte header + 16*32*32*3 u8 payload
    assert os.path.getsize(path) == 30 + 16 * 32 * 32 * 3 == 49182


def test_double_round_trip_idempotent(tmp_path):
    p1, p2 = tmp_path / "a.vclp", tmp_path / "b.vclp"
    write_clip(_clip(), p1)
    write_clip(read_clip(p1), p2)
    assert p1.read_bytes()[4:] == p2.read_bytes()[4:]
    assert p1.read_bytes() == p2.read_bytes()


def test_unlabeled_clip_round_trips_none(tmp_path):
    clip = _clip(label=None)
    path = tmp_path / "u.vclp"
    write_clip(clip, path)
    assert read_clip(path).label is None


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.vclp"
    path.write_bytes(b"NOPE" + b"\x00" * 60)
    with pytest.raises(BadMagicError):
        read_clip(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "a.vclp"
    write_clip(_clip(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-100])
    with pytest.raises(TruncatedClipError):
        read_clip(path)


def test_future_version_rejected(tmp_path):
    path = tmp_path / "a.vclp"
    write_clip(_clip(), path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        read_clip(path)


def test_missing_file_maps_to_clip_error(tmp_path):
    with pytest.raises(ClipFormatError):
        read_clip(tmp_path / "nope.vclp")


def test_quantize_is_idempotent_and_8bit():
    x = RNG.random((4, 4, 4, 3))
    q = quantize_frames(x)
    np.testing.assert_array_equal(q, quantize_frames(q))
    assert q.dtype == np.float32
    scaled = q * 255.0
    np.testing.assert_allclose(scaled, np.rint(scaled), atol=1e-4)


def test_frames_outside_unit_interval_rejected():
    bad = np.full((2, 4, 4, 3), 1.5, dtype=np.float32)
    with pytest.raises(DataError):
        VideoClip(frames=bad, fps=3.75)


class TestTemporalSubsample:
    def test_stride_selection(self):
        frames = quantize_frames(
            np.linspace(0, 1, 64)[:, None, None, None]
            * np.ones((1, 4, 4, 3)))
        clip = VideoClip(frames=frames.astype(np.float32), fps=30.0)
        out = temporal_subsample(clip, 3.75)
        assert out.frames.shape[0] == 8
        # frame i comes from source index floor(i*30/3.75) = 8i
        np.testing.assert_array_equal(out.frames[1], clip.frames[8])
        assert out.fps == 3.75

    def test_bad_target_fps(self):
        clip = _clip()
        with pytest.raises(ConfigError):
            temporal_subsample(clip, 0.0)
        with pytest.raises(ConfigError):
            temporal_subsample(clip, 30.0)


class TestAugment:
    def test_identity_at_unit_scale_no_flip(self):
        clip = _clip()
        rng = np.random.default_rng(1)
        out = augment(clip, rng, scale_range=(1.0, 1.0), flip_prob=0.0)
        np.testing.assert_array_equal(out.frames, clip.frames)

    def test_flip_is_an_involution(self):
        clip = _clip()
        once = augment(clip, np.random.default_rng(3),
                       scale_range=(1.0, 1.0), flip_prob=1.0)
        twice = augment(once, np.random.default_rng(4),
                        scale_range=(1.0, 1.0), flip_prob=1.0)
        np.testing.assert_array_equal(twice.frames, clip.frames)

    def test_crop_is_temporally_consistent(self):
        # a clip of constant frames must stay constant across time
        frame = quantize_frames(RNG.random((1, 32, 32, 3)))
        clip = VideoClip(frames=np.repeat(frame, 16, axis=0), fps=3.75)
        out = augment(clip, np.random.default_rng(5))
        for t in range(1, 16):
            np.testing.assert_array_equal(out.frames[t], out.frames[0])

    def test_output_stays_in_range_and_shape(self):
        clip = _clip()
        for seed in range(10):
            out = augment(clip, np.random.default_rng(seed))
            assert out.frames.shape == clip.frames.shape
            assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0


class TestManifest:
    def _manifest(self):
        m = DatasetManifest(split="pretrain")
        m.add("a.vclp", 0, 16 / 3.75)
        m.add("b.vclp", 1, 16 / 3.75)
        return m

    def test_round_trip(self, tmp_path):
        m = self._manifest()
        path = tmp_path / "manifest.json"
        m.save(path)
        back = load_manifest(path)
        assert back.clips == m.clips
        assert back.split == "pretrain"
        assert back.total_hours == pytest.approx(2 * 16 / 3.75 / 3600)

    def test_duplicate_paths_rejected(self):
        m = self._manifest()
        m.add("a.vclp", 3, 1.0)
        with pytest.raises(DataError):
            m.validate()

    def test_total_hours_mismatch_rejected(self, tmp_path):
        m = self._manifest()
        path = tmp_path / "manifest.json"
        m.save(path)
        doc = json.loads(path.read_text())
        doc["total_hours"] *= 2
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            load_manifest(path)

    def test_split_overlap_detected(self):
        a = DatasetManifest(split="pretrain")
        a.add("x.vclp", 0, 1.0)
        b = DatasetManifest(split="validation")
        b.add("x.vclp", 0, 1.0)
        with pytest.raises(DataError):
            check_disjoint_splits([a, b])

    def test_load_clips_resolves_relative_paths(self, tmp_path):
        clip = _clip(label=None)
        write_clip(clip, tmp_path / "a.vclp")
        m = DatasetManifest(split="validation")
        m.add("a.vclp", 4, 16 / 3.75)
        loaded = load_clips(m, tmp_path)
        assert len(loaded) == 1
        assert loaded[0].label == 4  # manifest label fills the file's None
        np.testing.assert_array_equal(loaded[0].frames, clip.frames)
