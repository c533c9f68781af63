"""Downstream measurement: accuracy, interpolation, attention, embeddings.

Evaluation runs one forward pass per clip (batch size 1 internally), so
reported numbers are bitwise invariant to evaluation batch size and clip
order by construction. Top-k ties are broken toward the lower class id
via a stable argsort on negated logits.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DataError, ShapeError
from .model import classify, embed_clip_patches, encode, mae_forward
from .patches import make_mask, patchify, unpatchify
from .video import VideoClip, load_clips

_INTERP_FRAMES = (6, 7, 8, 9)


@dataclass
class EvalReport:
    """Classification metrics for one evaluation split."""

    top1: float
    top5: float
    per_class: dict
    n_eval: int
    chance: float

    def to_json(self):
        return json.dumps(
            {"top1": self.top1, "top5": self.top5,
             "per_class": {str(k): v for k, v in self.per_class.items()},
             "n_eval": self.n_eval, "chance": self.chance},
            sort_keys=True)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


def _check_classifier(cfg):
    if cfg.num_classes is None or not cfg.use_cls_token:
        raise ConfigError("evaluation needs a finetuned classifier checkpoint")


def _static_batch(clip):
    """One static clip per frame: frame f repeated T times, stacked."""
    t = clip.frames.shape[0]
    return np.stack([np.broadcast_to(clip.frames[f], clip.frames.shape)
                     for f in range(t)])


def collect_logits(params, cfg, clips, frame_averaged=False):
    """Per-clip logits [n_clips, num_classes]; clips processed one at a time.

    frame_averaged: feed each frame as a static 16x-repeated clip and
    average the per-frame logits (the image-model evaluation protocol).
    """
    _check_classifier(cfg)
    tc = cfg.tubelet
    out = np.empty((len(clips), cfg.num_classes), dtype=np.float64)
    with tn.no_grad():
        for i, clip in enumerate(clips):
            if frame_averaged:
                frames_batch = _static_batch(clip)
                pb = np.stack([patchify(f, tc) for f in frames_batch])
                logits = classify(params, cfg, pb).data
                out[i] = logits.mean(axis=0)
            else:
                logits = classify(params, cfg, patchify(clip, tc)).data
                out[i] = logits
    return out


def topk_hits(logits, labels, k):
    """Hit indicators with ties broken toward the lower class id."""
    order = np.argsort(-logits, axis=1, kind="stable")
    return np.array([labels[i] in order[i, :k] for i in range(len(labels))])


def report_from_logits(logits, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != len(logits):
        raise ShapeError("labels must align with logits rows")
    k = logits.shape[1]
    hits1 = topk_hits(logits, labels, 1)
    hits5 = topk_hits(logits, labels, min(5, k))
    per_class = {}
    for c in sorted(set(labels.tolist())):
        sel = labels == c
        per_class[int(c)] = float(hits1[sel].mean())
    return EvalReport(top1=float(hits1.mean()), top5=float(hits5.mean()),
                      per_class=per_class, n_eval=int(len(labels)),
                      chance=1.0 / k)


def _labeled_clips(manifest, base_dir):
    clips = load_clips(manifest, base_dir)
    if any(c.label is None for c in clips):
        raise DataError("evaluation manifest contains unlabeled clips")
    return clips


def evaluate(ckpt, manifest, base_dir, frame_averaged=False):
    """Deterministic single-crop evaluation of a finetuned checkpoint."""
    clips = _labeled_clips(manifest, base_dir)
    logits = collect_logits(ckpt.params, ckpt.model_config, clips,
                            frame_averaged=frame_averaged)
    return report_from_logits(logits, [c.label for c in clips])


def evaluate_frame_averaged(ckpt, manifest, base_dir):
    return evaluate(ckpt, manifest, base_dir, frame_averaged=True)


def pair_accuracy(logits, labels, pair):
    """Accuracy restricted to a class pair, argmax over the two pair logits."""
    a, b = pair
    labels = np.asarray(labels)
    sel = (labels == a) | (labels == b)
    if not sel.any():
        raise DataError(f"no clips labeled {a} or {b}")
    sub = logits[sel][:, [a, b]]
    pred = np.where(sub[:, 0] >= sub[:, 1], a, b)  # tie -> lower id
    return float((pred == labels[sel]).mean()), int(sel.sum())


def interpolate(ckpt, clip):
    """Fill in the 4 central frames from the surrounding visible frames.

    Returns (completion clip, report). The completion keeps original
    pixels at visible positions bit-exactly and inserts clipped model
    predictions at masked positions. Baselines replace the masked frames
    with the nearest visible frame / the mean of visible frames.
    """
    cfg = ckpt.model_config
    tc = cfg.tubelet
    if clip.frames.shape[0] != 16:
        raise ShapeError("interpolation needs 16-frame clips")
    plan = make_mask("interpolation", 0.0, tc, seed=0)
    targets = patchify(clip, tc)
    with tn.no_grad():
        pred = mae_forward(ckpt.params, cfg, targets, plan).data

    completion_patches = targets.copy()
    midx = plan.masked_indices()
    completion_patches[midx] = np.clip(pred[midx], 0.0, 1.0)
    frames = unpatchify(completion_patches.astype(np.float32), tc)
    completion = VideoClip(frames=frames, fps=clip.fps, label=clip.label,
                           source_id=f"{clip.source_id}#interp")

    masked_frames = list(_INTERP_FRAMES)
    visible_frames = [t for t in range(16) if t not in masked_frames]
    orig = clip.frames
    region = orig[masked_frames]
    mse_model = float(np.mean((frames[masked_frames] - region) ** 2))
    nearest = [min(visible_frames, key=lambda s, t=t: (abs(t - s), s))
               for t in masked_frames]
    mse_copy = float(np.mean((orig[nearest] - region) ** 2))
    mean_frame = orig[visible_frames].mean(axis=0)
    mse_mean = float(np.mean((mean_frame[None] - region) ** 2))
    report = {"mse_model": mse_model, "mse_copy_nearest": mse_copy,
              "mse_mean_frame": mse_mean}
    return completion, report


def attention_maps(ckpt, clip):
    """Last-block cls-to-patch attention, head-averaged, as per-slice maps.

    Returns (maps, upsampled): maps is (Tg, Hg, Wg) and sums to 1 over all
    patches; upsampled is the nearest-neighbor (Tg, H, W) version.
    """
    cfg = ckpt.model_config
    if not cfg.use_cls_token:
        raise ConfigError("attention maps need a cls-token (finetuned) model")
    tc = cfg.tubelet
    capture = []
    with tn.no_grad():
        classify(ckpt.params, cfg, patchify(clip, tc), capture=capture)
    probs = capture[-1]  # [1, heads, 1+N, 1+N]
    cls_row = probs[0, :, 0, 1:].mean(axis=0)
    cls_row = cls_row / cls_row.sum()  # renormalize over patch keys
    maps = cls_row.reshape(tc.tg, tc.hg, tc.wg)
    upsampled = np.repeat(np.repeat(maps, tc.s_patch, axis=1),
                          tc.s_patch, axis=2)
    return maps, upsampled


def embed_clips(ckpt, clips, use_cls=False):
    """One d_enc vector per clip: token-mean encoder output (no masking).

    use_cls: take the cls-token representation instead (finetuned models).
    """
    cfg = ckpt.model_config
    tc = cfg.tubelet
    if use_cls and not cfg.use_cls_token:
        raise ConfigError("use_cls requires a cls-token model")
    out = np.empty((len(clips), cfg.d_enc), dtype=np.float64)
    with tn.no_grad():
        for i, clip in enumerate(clips):
            tokens = embed_clip_patches(
                ckpt.params, cfg, tn.Tensor(patchify(clip, tc),
                                            dtype=np.float32))
            enc = encode(ckpt.params, cfg, tokens, prepend_cls=use_cls).data
            out[i] = enc[0] if use_cls else enc.mean(axis=0)
    return out


def silhouette_score(x, labels):
    """Mean silhouette coefficient with euclidean distances."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise DataError("silhouette needs at least 2 classes")
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    dist = np.sqrt(np.maximum(d2, 0.0))
    scores = np.empty(len(x))
    for i in range(len(x)):
        same = (labels == labels[i])
        n_same = same.sum()
        if n_same < 2:
            scores[i] = 0.0
            continue
        a = dist[i, same].sum() / (n_same - 1)
        b = min(dist[i, labels == c].mean() for c in classes if c != labels[i])
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def write_ppm(path, image):
    """Write an (H, W, 3|1) array in [0,1] or u8 as a binary P6 PPM."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim == 3 and img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w, c = img.shape
    if c != 3:
        raise ShapeError(f"PPM needs 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_f32_raw(path, arr):
    """Headerless little-endian float32 dump (shape goes in the filename)."""
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def heatmap_to_image(heat):
    """Scale a nonnegative map to [0,1] grayscale for PPM export."""
    peak = float(heat.max())
    return heat / peak if peak > 0 else np.zeros_like(heat)
