"""Procedural synthetic action-video generator.

Eight action classes arranged as four time-reversal pairs: within a pair
the odd class renders a trajectory drawn from the even class's sampler
and then reverses frame order. Pooled over time, paired classes are
therefore identical in law frame-by-frame, so any model that discards
temporal order is chance-level within a pair, while temporal order fully
separates them.

Shape kind, color, size, start position, and background are sampled
independently of the class so none of them leaks the label.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .video import DatasetManifest, VideoClip, quantize_frames, write_clip

CLASS_NAMES = (
    "translate-left",
    "translate-right",
    "translate-up",
    "translate-down",
    "rotate-cw",
    "rotate-ccw",
    "grow",
    "shrink",
)
# (even, odd) class-id pairs; odd = time-reversed even
REVERSAL_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7))
SHAPE_KINDS = ("disc", "square", "triangle")

_KS_ALPHA_001 = 1.6276  # c(alpha) for the two-sample KS rejection bound at 0.01


@dataclass(frozen=True)
class SyntheticActionSpec:
    """Generator recipe for one action class."""

    class_id: int
    motion: str
    shape_kinds: tuple = SHAPE_KINDS
    speed_range: tuple = (1.0, 2.5)
    background_seed: int = 0


def default_specs():
    speed = {
        "translate-left": (1.0, 2.5),
        "translate-right": (1.0, 2.5),
        "translate-up": (1.0, 2.5),
        "translate-down": (1.0, 2.5),
        "rotate-cw": (0.30, 0.60),
        "rotate-ccw": (0.30, 0.60),
        "grow": (0.10, 0.22),
        "shrink": (0.10, 0.22),
    }
    return [
        SyntheticActionSpec(class_id=i, motion=name, speed_range=speed[name])
        for i, name in enumerate(CLASS_NAMES)
    ]


def _wrapped_delta(coords, center, extent):
    """Signed distance to the nearest torus image of `center`."""
    return (coords - center + extent / 2.0) % extent - extent / 2.0


def _coverage(cy, cx, radius, shape, h, w, ss=3):
    """Fraction of each pixel covered by the shape, via ss*ss supersampling."""
    sub = (np.arange(ss) + 0.5) / ss
    ys = (np.arange(h)[:, None] + sub[None, :])  # (h, ss)
    xs = (np.arange(w)[:, None] + sub[None, :])  # (w, ss)
    dy = _wrapped_delta(ys, cy, h)[:, None, :, None]
    dx = _wrapped_delta(xs, cx, w)[None, :, None, :]
    if shape == "disc":
        inside = dy * dy + dx * dx <= radius * radius
    elif shape == "square":
        half = 0.82 * radius
        inside = (np.abs(dy) <= half) & (np.abs(dx) <= half)
    elif shape == "triangle":
        # equilateral, apex up, circumradius 1.25 r; three half-plane tests
        r = 1.25 * radius
        angles = np.deg2rad([-90.0, 30.0, 150.0])
        vx, vy = r * np.cos(angles), r * np.sin(angles)
        inside = np.ones(np.broadcast_shapes(dy.shape, dx.shape), dtype=bool)
        for k in range(3):
            ex, ey = vx[(k + 1) % 3] - vx[k], vy[(k + 1) % 3] - vy[k]
            inside &= ex * (dy - vy[k]) - ey * (dx - vx[k]) >= 0
    else:
        raise ConfigError(f"unknown shape kind {shape!r}")
    return inside.mean(axis=(2, 3))


def _sample_forward_trajectory(motion, rng, frames, h, w, speed_range):
    """Per-frame (cy, cx, radius) for the forward member of a reversal pair."""
    t = np.arange(frames, dtype=np.float64)
    # large enough for several tubelets of signal, small enough that the
    # wrapped-delta rendering stays unambiguous (diameter < w/2)
    radius = rng.uniform(4.5, 7.0)
    if motion.startswith("translate"):
        dy, dx = {
            "translate-left": (0.0, -1.0),
            "translate-up": (-1.0, 0.0),
        }[motion]
        cy0, cx0 = rng.uniform(0, h), rng.uniform(0, w)
        v = rng.uniform(*speed_range)
        cy = (cy0 + dy * v * t) % h
        cx = (cx0 + dx * v * t) % w
        rr = np.full(frames, radius)
    elif motion == "rotate-cw":
        py, px = rng.uniform(0, h), rng.uniform(0, w)
        orbit = rng.uniform(4.0, 8.0)
        phi0 = rng.uniform(0, 2 * np.pi)
        omega = rng.uniform(*speed_range)
        phase = phi0 + omega * t
        cy = (py + orbit * np.sin(phase)) % h
        cx = (px + orbit * np.cos(phase)) % w
        rr = np.full(frames, radius)
    elif motion == "grow":
        r0 = rng.uniform(3.0, 4.5)
        rate = rng.uniform(*speed_range)
        cy0, cx0 = rng.uniform(0, h), rng.uniform(0, w)
        cy, cx = np.full(frames, cy0), np.full(frames, cx0)
        rr = r0 + rate * t
    else:
        raise ConfigError(f"motion {motion!r} is not a forward-pair member")
    return cy, cx, rr


def sample_clip(spec, frames, resolution, channels, rng):
    """Render one clip for `spec`, already u8-quantized. Deterministic in rng."""
    h = w = resolution
    shape = spec.shape_kinds[int(rng.integers(len(spec.shape_kinds)))]
    color = rng.uniform(0.55, 1.0, size=channels)
    bg_base = rng.uniform(0.08, 0.30)
    bg = np.clip(bg_base + rng.normal(0.0, 0.02, size=(h, w, channels)), 0.0, 1.0)

    pair_base = CLASS_NAMES[(spec.class_id // 2) * 2]
    cy, cx, rr = _sample_forward_trajectory(pair_base, rng, frames, h, w,
                                            spec.speed_range)
    if spec.class_id % 2 == 1:
        cy, cx, rr = cy[::-1], cx[::-1], rr[::-1]

    out = np.empty((frames, h, w, channels), dtype=np.float32)
    for i in range(frames):
        cov = _coverage(cy[i], cx[i], rr[i], shape, h, w)[:, :, None]
        out[i] = bg * (1.0 - cov) + color[None, None, :] * cov
    return quantize_frames(np.clip(out, 0.0, 1.0))


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov statistic D = sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    both = np.concatenate([a, b])
    fa = np.searchsorted(a, both, side="right") / a.size
    fb = np.searchsorted(b, both, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n, m, c_alpha=_KS_ALPHA_001):
    """Rejection threshold for the two-sample KS test."""
    return c_alpha * np.sqrt((n + m) / (n * m))


def check_pair_marginals(frame_means, seed):
    """Generation-time check of the frame-marginal identity per reversal pair.

    frame_means: {class_id: array [clips, frames]} of per-frame mean
    intensities. For each clip one uniformly chosen frame contributes one
    i.i.d. summary value; paired classes are compared with a two-sample
    KS test at alpha = 0.01.
    """
    rng = np.random.default_rng([seed, 0x4B53])
    stats = {}
    for a, b in REVERSAL_PAIRS:
        ma, mb = frame_means[a], frame_means[b]
        sa = ma[np.arange(ma.shape[0]), rng.integers(ma.shape[1], size=ma.shape[0])]
        sb = mb[np.arange(mb.shape[0]), rng.integers(mb.shape[1], size=mb.shape[0])]
        d = ks_two_sample(sa, sb)
        crit = ks_critical(sa.size, sb.size)
        stats[(a, b)] = (d, crit)
        if d >= crit:
            raise DataError(
                f"classes {a}/{b}: frame-marginal KS statistic {d:.4f} "
                f"exceeds the 0.01-level bound {crit:.4f}"
            )
    return stats


def generate_synthetic_dataset(spec_list, clips_per_class, frames, resolution,
                               seed, out_dir, split="pretrain", fps=3.75,
                               channels=3, t_patch=2, s_patch=4,
                               check_marginals=True):
    """Render and write clips_per_class clips per spec; return the manifest.

    Clip files land in out_dir with manifest-relative paths. Deterministic
    given seed: every clip draws from its own stream keyed by
    (seed, class_id, clip_index).
    """
    if frames % t_patch != 0:
        raise ConfigError(f"frames {frames} not divisible by t_patch {t_patch}")
    if resolution % s_patch != 0:
        raise ConfigError(f"resolution {resolution} not divisible by s_patch {s_patch}")

    os.makedirs(out_dir, exist_ok=True)
    manifest = DatasetManifest(split=split)
    frame_means = {}
    for spec in spec_list:
        means = np.empty((clips_per_class, frames))
        for i in range(clips_per_class):
            rng = np.random.default_rng(
                [seed, spec.background_seed, spec.class_id, i]
            )
            pixels = sample_clip(spec, frames, resolution, channels, rng)
            means[i] = pixels.mean(axis=(1, 2, 3))
            clip = VideoClip(frames=pixels, fps=fps, label=spec.class_id,
                             source_id=f"synth-{spec.class_id}-{i}")
            name = f"{split}_{spec.class_id}_{i:04d}.vclp"
            write_clip(clip, os.path.join(out_dir, name))
            manifest.add(name, spec.class_id, frames / fps)
        frame_means[spec.class_id] = means

    if check_marginals and all(p[0] in frame_means and p[1] in frame_means
                               for p in REVERSAL_PAIRS):
        check_pair_marginals(frame_means, seed)
    return manifest
