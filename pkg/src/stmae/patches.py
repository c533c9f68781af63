"""Tubelet patchification, patch embedding, and masking strategies.

Patches are ordered lexicographically by (t, y, x) grid coordinates, and
every index map in the package is defined against that order: patch i has
time index i // (Hg*Wg) and spatial index i % (Hg*Wg).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ShapeError
from .video import VideoClip

MASK_KINDS = ("random", "interpolation", "per_frame_image")

# frames [6, 10) of a 16-frame clip: the 4 central frames
_INTERP_FRAME_LO, _INTERP_FRAME_HI = 6, 10


@dataclass(frozen=True)
class TubeletConfig:
    """Clip dimensions plus tubelet extents; grid sizes are derived."""

    frames: int = 16
    height: int = 32
    width: int = 32
    channels: int = 3
    t_patch: int = 2
    s_patch: int = 4

    def __post_init__(self):
        if min(self.frames, self.height, self.width, self.channels,
               self.t_patch, self.s_patch) < 1:
            raise ConfigError("tubelet config dims must be positive")
        if self.frames % self.t_patch:
            raise ConfigError(
                f"frames {self.frames} not divisible by t_patch {self.t_patch}")
        if self.height % self.s_patch or self.width % self.s_patch:
            raise ConfigError(
                f"resolution {self.height}x{self.width} not divisible by "
                f"s_patch {self.s_patch}")

    @property
    def tg(self):
        return self.frames // self.t_patch

    @property
    def hg(self):
        return self.height // self.s_patch

    @property
    def wg(self):
        return self.width // self.s_patch

    @property
    def n_patches(self):
        return self.tg * self.hg * self.wg

    @property
    def patch_dim(self):
        return self.t_patch * self.s_patch * self.s_patch * self.channels

    def spatial_index(self, i):
        return i % (self.hg * self.wg)

    def time_index(self, i):
        return i // (self.hg * self.wg)


def patchify(clip, cfg):
    """Cut (T,H,W,C) frames into rows of flattened tubelets, (t,y,x) order."""
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    if frames.shape != (cfg.frames, cfg.height, cfg.width, cfg.channels):
        raise ShapeError(
            f"clip shape {frames.shape} does not match tubelet config "
            f"({cfg.frames},{cfg.height},{cfg.width},{cfg.channels})")
    tp, sp = cfg.t_patch, cfg.s_patch
    x = frames.reshape(cfg.tg, tp, cfg.hg, sp, cfg.wg, sp, cfg.channels)
    x = x.transpose(0, 2, 4, 1, 3, 5, 6)
    return np.ascontiguousarray(x.reshape(cfg.n_patches, cfg.patch_dim))


def unpatchify(patches, cfg):
    """Inverse of patchify; bit-exact round trip."""
    patches = np.asarray(patches)
    if patches.shape != (cfg.n_patches, cfg.patch_dim):
        raise ShapeError(
            f"patch matrix shape {patches.shape} != "
            f"({cfg.n_patches},{cfg.patch_dim})")
    tp, sp = cfg.t_patch, cfg.s_patch
    x = patches.reshape(cfg.tg, cfg.hg, cfg.wg, tp, sp, sp, cfg.channels)
    x = x.transpose(0, 3, 1, 4, 2, 5, 6)
    return np.ascontiguousarray(
        x.reshape(cfg.frames, cfg.height, cfg.width, cfg.channels))


def embed_patches(patches, w_embed, pos_spatial, pos_temporal, cfg):
    """Linear patch projection plus additive separable positional terms.

    out[i] = (patches[i] - 0.5) @ w_embed + pos_spatial[i % (Hg*Wg)]
           + pos_temporal[i // (Hg*Wg)]. Accepts [N, patch_dim] or a
    batched [B, N, patch_dim] tensor. Pixels arrive in [0, 1]; centering
    them keeps the projection from pumping a shared mean component into
    every token, which would otherwise dominate the residual stream.
    """
    d = w_embed.shape[1]
    if pos_spatial.shape != (cfg.hg * cfg.wg, d):
        raise ShapeError(
            f"spatial table shape {pos_spatial.shape} != ({cfg.hg * cfg.wg},{d})")
    if pos_temporal.shape != (cfg.tg, d):
        raise ShapeError(
            f"temporal table shape {pos_temporal.shape} != ({cfg.tg},{d})")
    if patches.shape[-1] != w_embed.shape[0]:
        raise ShapeError(
            f"patch dim {patches.shape[-1]} != embed rows {w_embed.shape[0]}")
    idx = np.arange(cfg.n_patches)
    pos = tn.add(tn.gather_rows(pos_spatial, cfg.spatial_index(idx)),
                 tn.gather_rows(pos_temporal, cfg.time_index(idx)))
    centered = tn.sub(patches, 0.5) if isinstance(patches, tn.Tensor) \
        else np.asarray(patches) - 0.5
    return tn.add(tn.matmul(centered, w_embed), pos)


@dataclass
class MaskPlan:
    """A boolean mask over the N patches of one clip (true = masked)."""

    kind: str
    ratio: float
    seed: int
    mask: np.ndarray = field(repr=False)

    @property
    def n(self):
        return int(self.mask.size)

    @property
    def n_masked(self):
        return int(self.mask.sum())

    @property
    def n_visible(self):
        return self.n - self.n_masked

    def masked_indices(self):
        return np.flatnonzero(self.mask)

    def visible_indices(self):
        return np.flatnonzero(~self.mask)

    def to_json(self):
        # mask itself is regenerated from (kind, ratio, seed) plus the grid
        return json.dumps(
            {"kind": self.kind, "ratio": self.ratio, "seed": self.seed,
             "n": self.n},
            sort_keys=True)

    @staticmethod
    def from_json(doc, cfg):
        obj = json.loads(doc)
        plan = make_mask(obj["kind"], obj["ratio"], cfg, obj["seed"])
        if plan.n != obj["n"]:
            raise ConfigError(
                f"mask plan n {obj['n']} does not match grid {plan.n}")
        return plan


def _exact_count_mask(n, ratio, rng):
    k = int(np.floor(ratio * n))
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[:k]] = True
    return mask


def make_mask(kind, ratio, cfg, seed):
    """Build a MaskPlan of the given kind over cfg's patch grid.

    random: exactly floor(ratio*N) masked, uniform without replacement.
    interpolation: every tubelet overlapping the 4 central frames masked.
    per_frame_image: exact-count random masking within each tubelet time
    slice independently (the image-style per-frame baseline).
    """
    n = cfg.n_patches
    if kind == "random":
        if not 0 <= ratio < 1:
            raise ConfigError(f"mask ratio {ratio} outside [0,1)")
        rng = np.random.default_rng([int(seed), 0x6D61])
        mask = _exact_count_mask(n, ratio, rng)
    elif kind == "interpolation":
        if cfg.frames != 16 or 4 % cfg.t_patch:
            raise ConfigError(
                "interpolation mask needs 16 frames and t_patch dividing 4")
        ti = cfg.time_index(np.arange(n))
        lo, hi = ti * cfg.t_patch, (ti + 1) * cfg.t_patch
        mask = (lo < _INTERP_FRAME_HI) & (hi > _INTERP_FRAME_LO)
        ratio = mask.sum() / n
    elif kind == "per_frame_image":
        if not 0 <= ratio < 1:
            raise ConfigError(f"mask ratio {ratio} outside [0,1)")
        rng = np.random.default_rng([int(seed), 0x6D62])
        group = cfg.hg * cfg.wg
        mask = np.concatenate(
            [_exact_count_mask(group, ratio, rng) for _ in range(cfg.tg)])
    else:
        raise ConfigError(f"unknown mask kind {kind!r}")
    return MaskPlan(kind=kind, ratio=float(ratio), seed=int(seed), mask=mask)


def gather_visible(tokens, plan):
    """Select visible-position rows, original order preserved.

    Returns (visible_tokens, visible_index_array); scattering the result
    back with the index array restores the visible rows exactly.
    """
    if tokens.shape[0] != plan.n:
        raise ShapeError(
            f"token count {tokens.shape[0]} != mask length {plan.n}")
    idx = plan.visible_indices()
    if isinstance(tokens, tn.Tensor):
        return tn.gather_rows(tokens, idx), idx
    return tokens[idx], idx
