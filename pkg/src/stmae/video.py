"""Video clips, the VCLP on-disk format, manifests, subsampling, augmentation.

Clips live in memory as float arrays in [0,1] with shape (T, H, W, C). On
disk they are stored u8-quantized in a small binary container ("VCLP") so
that golden files are bit-exact across platforms.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ClipFormatError,
    ConfigError,
    DataError,
    ShapeError,
    TruncatedClipError,
    VersionError,
)

VCLP_MAGIC = b"VCLP"
VCLP_VERSION = 1
_HEADER = struct.Struct("<4sHIIIIfi")  # magic, version, T, H, W, C, fps, label


@dataclass
class VideoClip:
    """A short video: frames (T,H,W,C) in [0,1], frame rate, optional label."""

    frames: np.ndarray
    fps: float
    label: int | None = None
    source_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4:
            raise ShapeError(f"clip frames must be 4-d (T,H,W,C), got {f.shape}")
        t, h, w, c = f.shape
        if min(t, h, w) < 1 or c not in (1, 3):
            raise ShapeError(f"bad clip dims {f.shape}; C must be 1 or 3")
        if f.dtype not in (np.float32, np.float64):
            raise ShapeError(f"clip frames must be float, got {f.dtype}")
        if float(f.min(initial=0.0)) < 0.0 or float(f.max(initial=0.0)) > 1.0:
            raise DataError("clip pixel values outside [0,1]")
        if self.fps <= 0:
            raise DataError(f"clip fps must be positive, got {self.fps}")
        self.frames = np.ascontiguousarray(f)

    @property
    def shape(self):
        return self.frames.shape

    @property
    def seconds(self):
        return self.frames.shape[0] / self.fps


def quantize_frames(frames):
    """Snap float pixels to the u8 grid used on disk (round(255*p)/255)."""
    return (np.rint(np.asarray(frames) * 255.0) / np.float32(255.0)).astype(np.float32)


def write_clip(clip, path):
    """Serialize a clip to the VCLP container. Pixels stored as round(255*p)."""
    t, h, w, c = clip.shape
    label = -1 if clip.label is None else int(clip.label)
    header = _HEADER.pack(VCLP_MAGIC, VCLP_VERSION, t, h, w, c, float(clip.fps), label)
    payload = np.rint(clip.frames * 255.0).astype(np.uint8).tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def read_clip(path, source_id=None):
    """Read a VCLP file back into a float32 clip in [0,1]."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ClipFormatError(f"cannot open clip {path}: {exc}") from exc
    if len(raw) < 4 or raw[:4] != VCLP_MAGIC:
        raise BadMagicError(f"{path}: not a VCLP file")
    if len(raw) < _HEADER.size:
        raise TruncatedClipError(f"{path}: header truncated ({len(raw)} bytes)")
    _, version, t, h, w, c, fps, label = _HEADER.unpack_from(raw)
    if version != VCLP_VERSION:
        raise VersionError(f"{path}: VCLP version {version}, expected {VCLP_VERSION}")
    n = t * h * w * c
    body = raw[_HEADER.size:]
    if len(body) != n:
        raise TruncatedClipError(f"{path}: payload has {len(body)} bytes, expected {n}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(t, h, w, c)
    frames = (pixels.astype(np.float32) / np.float32(255.0)).astype(np.float32)
    return VideoClip(
        frames=frames,
        fps=fps,
        label=None if label < 0 else label,
        source_id=source_id if source_id is not None else os.path.basename(path),
    )


def temporal_subsample(clip, target_fps):
    """Keep source frames at indices floor(i * fps / target_fps)."""
    if target_fps <= 0 or target_fps > clip.fps:
        raise ConfigError(
            f"target fps {target_fps} must be in (0, {clip.fps}]"
        )
    t = clip.shape[0]
    ratio = clip.fps / target_fps
    indices = []
    i = 0
    while True:
        src = int(np.floor(i * ratio))
        if src >= t:
            break
        indices.append(src)
        i += 1
    return VideoClip(
        frames=np.ascontiguousarray(clip.frames[indices]),
        fps=target_fps,
        label=clip.label,
        source_id=clip.source_id,
    )


def _bilinear_resize(frames, out_h, out_w):
    """Resize (T,H,W,C) frames with half-pixel-center bilinear sampling."""
    t, h, w, c = frames.shape
    if (h, w) == (out_h, out_w):
        return frames
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(frames.dtype)[None, :, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0).astype(frames.dtype)[None, None, :, None]
    top = frames[:, y0][:, :, x0] * (1 - wx) + frames[:, y0][:, :, x1] * wx
    bot = frames[:, y1][:, :, x0] * (1 - wx) + frames[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def augment(clip, rng, scale_range=(0.5, 1.0), flip_prob=0.5, out_size=None,
            min_size=4):
    """Random resized crop plus horizontal flip, shared across all frames.

    One crop window and one flip decision are drawn per clip so motion
    stays coherent in time. The crop is resized back to `out_size`
    (default: input resolution) with bilinear interpolation.
    """
    t, h, w, c = clip.shape
    out_h, out_w = (h, w) if out_size is None else (int(out_size), int(out_size))
    lo, hi = scale_range
    if not 0 < lo <= hi <= 1:
        raise ConfigError(f"crop scale range {scale_range} must satisfy 0 < lo <= hi <= 1")

    # rejection-sample a window; fall back to the full frame so a fixed
    # scale of 1.0 with flip_prob 0 is exactly the identity
    ch, cw = h, w
    for _ in range(10):
        area = rng.uniform(lo, hi) * h * w
        aspect = np.exp(rng.uniform(np.log(3 / 4), np.log(4 / 3)))
        th = int(round(np.sqrt(area / aspect)))
        tw = int(round(np.sqrt(area * aspect)))
        if min_size <= th <= h and min_size <= tw <= w:
            ch, cw = th, tw
            break
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    flip = bool(rng.random() < flip_prob)

    frames = clip.frames[:, y0:y0 + ch, x0:x0 + cw, :]
    if flip:
        frames = frames[:, :, ::-1, :]
    frames = _bilinear_resize(np.ascontiguousarray(frames), out_h, out_w)
    frames = np.clip(frames, 0.0, 1.0).astype(np.float32)
    return VideoClip(frames=frames, fps=clip.fps, label=clip.label,
                     source_id=clip.source_id)


@dataclass
class DatasetManifest:
    """Bookkeeping for one split: clip files, labels, durations."""

    clips: list = field(default_factory=list)  # (path, label, seconds) tuples
    split: str = "pretrain"
    total_hours: float = 0.0

    def add(self, path, label, seconds):
        self.clips.append((path, label, seconds))
        self.total_hours = sum(s for _, _, s in self.clips) / 3600.0

    def validate(self):
        total = sum(s for _, _, s in self.clips) / 3600.0
        ref = max(abs(total), 1e-300)
        if abs(total - self.total_hours) / ref > 1e-9:
            raise DataError(
                f"manifest total_hours {self.total_hours} != clip sum {total}"
            )
        if len({p for p, _, _ in self.clips}) != len(self.clips):
            raise DataError("duplicate clip paths within one manifest")

    def save(self, path):
        self.validate()
        doc = {
            "clips": [
                {"path": p, "label": label, "seconds": s}
                for p, label, s in self.clips
            ],
            "split": self.split,
            "total_hours": self.total_hours,
        }
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
        os.replace(tmp, path)


def load_manifest(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    try:
        m = DatasetManifest(
            clips=[(c["path"], c["label"], c["seconds"]) for c in doc["clips"]],
            split=doc["split"],
            total_hours=doc["total_hours"],
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from None
    m.validate()
    return m


def check_disjoint_splits(manifests):
    """Raise if any clip path appears in more than one manifest."""
    seen = {}
    for m in manifests:
        for p, _, _ in m.clips:
            if p in seen and seen[p] != m.split:
                raise DataError(
                    f"clip {p} appears in splits {seen[p]!r} and {m.split!r}"
                )
            seen[p] = m.split


def load_clips(manifest, base_dir):
    """Read every clip in a manifest; paths resolve relative to base_dir."""
    out = []
    for p, label, _ in manifest.clips:
        full = p if os.path.isabs(p) else os.path.join(base_dir, p)
        clip = read_clip(full)
        if clip.label is None:
            clip.label = label
        out.append(clip)
    return out
