"""Optimization and the two training loops.

AdamW with decoupled weight decay drives both phases: self-supervised
pretraining (random masking, pixel MSE) and few-shot supervised
finetuning (cls token + linear head, label-smoothed cross-entropy,
layer-wise learning-rate decay). Every run is a pure function of
(seed, config, manifest): batches, augmentations, and masks all draw
from counter-based streams keyed by the step index.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as tn
from .checkpoint import Checkpoint, model_config_to_dict, sha256_of_json
from .errors import ConfigError, DataError, NumericError
from .model import (ModelConfig, classify, init_params, mae_forward, mae_loss,
                    param_shapes)
from .patches import make_mask, patchify
from .video import VideoClip, augment, load_clips

# parameters that weight decay skips: 1-d tensors (biases, norms, mask
# token) plus positional tables and the cls token
_NO_DECAY_SUBSTRINGS = ("pos_spatial", "pos_temporal", "cls.token")


def decays(name, param):
    if param.ndim < 2:
        return False
    return not any(s in name for s in _NO_DECAY_SUBSTRINGS)


@dataclass
class OptimizerState:
    """AdamW moment buffers and hyperparameters for one parameter dict."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.05

    @staticmethod
    def for_params(params, **hyper):
        return OptimizerState(
            m={k: np.zeros(p.shape, dtype=p.dtype) for k, p in params.items()},
            v={k: np.zeros(p.shape, dtype=p.dtype) for k, p in params.items()},
            **hyper)

    def to_plain(self):
        return {"hyper": {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                          "eps": self.eps, "weight_decay": self.weight_decay},
                "step": self.step, "m": self.m, "v": self.v}

    @staticmethod
    def from_plain(doc):
        return OptimizerState(m=doc["m"], v=doc["v"], step=doc["step"],
                              **doc["hyper"])


def adamw_step(params, state, lr=None, multipliers=None):
    """One AdamW update over every parameter with a gradient.

    lr overrides state.lr for this step (schedules); multipliers maps a
    parameter name to a per-group learning-rate factor. Decoupled weight
    decay is applied to decaying parameters only. Raises on non-finite
    gradients, naming the parameter.
    """
    base_lr = state.lr if lr is None else lr
    if base_lr < 0:
        raise ConfigError(f"learning rate must be >= 0, got {base_lr}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        if name not in state.m:
            raise ConfigError(f"optimizer state missing buffers for '{name}'")
        mult = 1.0 if multipliers is None else multipliers.get(name, 1.0)
        wd = state.weight_decay if decays(name, p) else 0.0
        kernels.adamw_update(
            p.data.reshape(-1), np.ascontiguousarray(g.reshape(-1)),
            state.m[name].reshape(-1), state.v[name].reshape(-1),
            p.dtype.type(base_lr * mult), p.dtype.type(state.beta1),
            p.dtype.type(state.beta2), p.dtype.type(state.eps),
            p.dtype.type(wd), t)
        p.grad = None
    return state


def lr_schedule(step, total_steps, warmup_steps, base_lr):
    """Linear warmup to base_lr, then cosine decay to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if not 0 <= warmup_steps < total_steps:
        raise ConfigError(f"warmup {warmup_steps} must be < total {total_steps}")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * frac))


def assign_layer_lrs(depth_enc, decay, base_lr=1.0):
    """Per-group lr multipliers: embeddings=0, blocks 1..L, head=L+1.

    Group g gets base_lr * decay**(L+1-g); the head multiplier is exactly
    base_lr, and multipliers are nondecreasing toward the top.
    """
    if not 0 < decay <= 1:
        raise ConfigError(f"layer decay {decay} outside (0, 1]")
    return [base_lr * decay ** (depth_enc + 1 - g) for g in range(depth_enc + 2)]


def param_group(name, depth_enc):
    """Map a parameter name to its layer-decay group (None = not tuned)."""
    if name.startswith("dec."):
        return None
    if name in ("embed.w", "enc.pos_spatial", "enc.pos_temporal", "cls.token"):
        return 0
    if name.startswith("enc.block"):
        return int(name[len("enc.block"):].split(".", 1)[0]) + 1
    if name.startswith("enc.norm"):
        return depth_enc
    if name.startswith("head."):
        return depth_enc + 1
    raise ConfigError(f"cannot assign a layer-decay group to {name!r}")


def layer_lr_multipliers(params, depth_enc, decay):
    mults = assign_layer_lrs(depth_enc, decay)
    out = {}
    for name in params:
        g = param_group(name, depth_enc)
        if g is not None:
            out[name] = mults[g]
    return out


class MetricsWriter:
    """Append-only JSON-lines metrics file: {"step", "loss", "lr"}."""

    def __init__(self, path=None):
        self.path = path
        self.history = []
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            self._fh = open(path, "a", encoding="utf-8")
        else:
            self._fh = None

    def log(self, step, loss, lr):
        rec = {"step": int(step), "loss": float(loss), "lr": float(lr)}
        self.history.append(rec)
        if self._fh:
            self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def _static_clip_from_frame(clip, frame_idx):
    """Repeat one frame T times: a static clip with no temporal signal."""
    t = clip.frames.shape[0]
    frames = np.broadcast_to(clip.frames[frame_idx], clip.frames.shape).copy()
    return VideoClip(frames=frames, fps=clip.fps, label=clip.label,
                     source_id=f"{clip.source_id}#f{frame_idx}x{t}")


def _clips_for_manifest(manifest, base_dir, tubelet):
    clips = load_clips(manifest, base_dir)
    if not clips:
        raise DataError("manifest lists no clips")
    want = (tubelet.frames, tubelet.height, tubelet.width, tubelet.channels)
    for c in clips:
        if c.shape != want:
            raise DataError(
                f"clip {c.source_id} shape {c.shape} incompatible with {want}")
    return clips


def pretrain(manifest, base_dir, model_cfg, mask_ratio, steps, seed,
             batch_size=16, base_lr=1.5e-3, warmup_frac=0.1,
             weight_decay=0.05, mask_kind="random", image_mode=False,
             augment_scale=(0.5, 1.0), flip_prob=0.5, metrics_path=None,
             provenance=None, grad_accum=1):
    """Self-supervised masked-autoencoder pretraining.

    Per step: sample a batch with replacement, augment each clip with a
    shared-per-clip crop/flip, patchify, draw a fresh mask per clip,
    reconstruct, and take one AdamW step on the masked MSE. image_mode
    replaces every sampled clip by a static repetition of one of its
    frames, which removes all temporal signal.
    """
    if model_cfg.use_cls_token:
        raise ConfigError("pretraining runs without a cls token")
    tc = model_cfg.tubelet
    clips = _clips_for_manifest(manifest, base_dir, tc)
    params = init_params(model_cfg, seed=seed, dtype=np.float32)
    state = OptimizerState.for_params(params, lr=base_lr,
                                      weight_decay=weight_decay)
    warmup = int(round(warmup_frac * steps))
    metrics = MetricsWriter(metrics_path)
    micro = batch_size // grad_accum
    if micro * grad_accum != batch_size:
        raise ConfigError("grad_accum must divide batch_size")

    for step in range(steps):
        rng = np.random.default_rng([int(seed), 0x5354, step])
        idx = rng.integers(0, len(clips), size=batch_size)
        batch, plans = [], []
        for i in idx:
            clip = clips[int(i)]
            if image_mode:
                clip = _static_clip_from_frame(
                    clip, int(rng.integers(tc.frames)))
            clip = augment(clip, rng, scale_range=augment_scale,
                           flip_prob=flip_prob)
            batch.append(patchify(clip, tc))
            plans.append(make_mask(mask_kind, mask_ratio, tc,
                                   seed=int(rng.integers(2 ** 62))))
        lr = lr_schedule(step, steps, warmup, base_lr)
        loss_total = 0.0
        for k in range(grad_accum):
            sl = slice(k * micro, (k + 1) * micro)
            pb = np.stack(batch[sl])
            with tn.Tape() as tape:
                pred = mae_forward(params, model_cfg, pb, plans[sl])
                loss = tn.mul(
                    mae_loss(pred, pb, plans[sl],
                             norm_pix=model_cfg.norm_pix_targets),
                    1.0 / grad_accum)
                tape.backward(loss)
            loss_total += loss.item() * grad_accum
        adamw_step(params, state, lr=lr)
        metrics.log(step, loss_total / grad_accum, lr)
    metrics.close()

    prov = dict(provenance or {})
    prov.setdefault("config_sha256", sha256_of_json(model_config_to_dict(model_cfg)))
    return Checkpoint(model_config=model_cfg, params=params,
                      opt_state=state.to_plain(), step=steps,
                      rng_state={"seed": int(seed), "steps": int(steps)},
                      provenance=prov)


@dataclass(frozen=True)
class FinetuneConfig:
    """Few-shot supervised finetuning hyperparameters."""

    k_shot: int = 10
    layer_decay: float = 0.75
    base_lr: float = 1e-3
    epochs: int = 20
    seed: int = 0
    batch_size: int = 16
    label_smoothing: float = 0.1
    num_classes: int = 8
    warmup_frac: float = 0.1
    weight_decay: float = 0.05
    augment_scale: tuple = (0.7, 1.0)
    # flips swap direction-paired labels (left/right, cw/ccw), keep off
    flip_prob: float = 0.0

    def __post_init__(self):
        if self.k_shot < 1:
            raise ConfigError("k_shot must be >= 1")
        if not 0 < self.layer_decay <= 1:
            raise ConfigError("layer_decay must lie in (0, 1]")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must lie in [0, 1)")


def select_few_shot(manifest, k_shot, num_classes, seed):
    """Deterministic k-per-class sample (without replacement) of clip rows."""
    by_class = {c: [] for c in range(num_classes)}
    for row, (_, label, _) in enumerate(manifest.clips):
        if label in by_class:
            by_class[label].append(row)
    rng = np.random.default_rng([int(seed), 0x4653])
    chosen = []
    for c in range(num_classes):
        pool = by_class[c]
        if len(pool) < k_shot:
            raise DataError(
                f"class {c} has {len(pool)} candidates, need k_shot={k_shot}")
        pick = rng.choice(len(pool), size=k_shot, replace=False)
        chosen.extend(pool[j] for j in sorted(pick))
    return chosen


def smoothed_cross_entropy(logits, labels, smoothing, num_classes):
    """Label-smoothed CE: target (1-s)*onehot + s/K against log-softmax."""
    logp = tn.log_softmax(logits)
    onehot = np.zeros((len(labels), num_classes), dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    q = (1.0 - smoothing) * onehot + smoothing / num_classes
    return tn.mul(tn.mean(tn.tsum(tn.mul(logp, tn.Tensor(q, dtype=logits.dtype)),
                                  axis=-1)), -1.0)


def finetune_few_shot(ckpt, manifest, base_dir, ft_cfg, image_mode=False,
                      metrics_path=None, provenance=None):
    """Supervised few-shot finetuning of a pretrained checkpoint.

    Adds a fresh cls token and classifier head, updates encoder-side
    parameters with layer-wise lr decay, and leaves decoder parameters
    untouched. image_mode trains on static single-frame repetitions.
    """
    base_cfg = ckpt.model_config
    if base_cfg.use_cls_token:
        raise ConfigError("expected a pretraining checkpoint without cls token")
    cfg = ModelConfig(
        tubelet=base_cfg.tubelet, d_enc=base_cfg.d_enc,
        depth_enc=base_cfg.depth_enc, heads_enc=base_cfg.heads_enc,
        d_dec=base_cfg.d_dec, depth_dec=base_cfg.depth_dec,
        heads_dec=base_cfg.heads_dec, mlp_ratio=base_cfg.mlp_ratio,
        use_cls_token=True, norm_pix_targets=base_cfg.norm_pix_targets,
        num_classes=ft_cfg.num_classes)
    fresh = init_params(cfg, seed=ft_cfg.seed, dtype=np.float32)
    params = {}
    for name in param_shapes(cfg):
        params[name] = fresh[name] if name in ("cls.token", "head.w", "head.b") \
            else ckpt.params[name]

    tc = cfg.tubelet
    clips = _clips_for_manifest(manifest, base_dir, tc)
    rows = select_few_shot(manifest, ft_cfg.k_shot, ft_cfg.num_classes,
                           ft_cfg.seed)
    train_clips = [clips[r] for r in rows]

    trainable = {n: p for n, p in params.items() if not n.startswith("dec.")}
    state = OptimizerState.for_params(trainable, lr=ft_cfg.base_lr,
                                      weight_decay=ft_cfg.weight_decay)
    mults = layer_lr_multipliers(trainable, cfg.depth_enc, ft_cfg.layer_decay)

    n = len(train_clips)
    steps_per_epoch = (n + ft_cfg.batch_size - 1) // ft_cfg.batch_size
    total_steps = ft_cfg.epochs * steps_per_epoch
    warmup = int(round(ft_cfg.warmup_frac * total_steps))
    metrics = MetricsWriter(metrics_path)

    step = 0
    for epoch in range(ft_cfg.epochs):
        rng = np.random.default_rng([int(ft_cfg.seed), 0x4654, epoch])
        order = rng.permutation(n)
        for b0 in range(0, n, ft_cfg.batch_size):
            take = order[b0:b0 + ft_cfg.batch_size]
            batch, labels = [], []
            for j in take:
                clip = train_clips[int(j)]
                if image_mode:
                    clip = _static_clip_from_frame(
                        clip, int(rng.integers(tc.frames)))
                clip = augment(clip, rng, scale_range=ft_cfg.augment_scale,
                               flip_prob=ft_cfg.flip_prob)
                batch.append(patchify(clip, tc))
                labels.append(clip.label)
            pb = np.stack(batch)
            lr = lr_schedule(step, total_steps, warmup, ft_cfg.base_lr)
            with tn.Tape() as tape:
                logits = classify(params, cfg, pb)
                loss = smoothed_cross_entropy(
                    logits, np.asarray(labels), ft_cfg.label_smoothing,
                    ft_cfg.num_classes)
                tape.backward(loss)
            adamw_step(trainable, state, lr=lr, multipliers=mults)
            metrics.log(step, loss.item(), lr)
            step += 1
    metrics.close()

    prov = dict(provenance or {})
    prov.setdefault("pretrain_step", ckpt.step)
    return Checkpoint(model_config=cfg, params=params,
                      opt_state=state.to_plain(), step=ckpt.step + total_steps,
                      rng_state={"seed": int(ft_cfg.seed),
                                 "epochs": int(ft_cfg.epochs)},
                      provenance=prov)
