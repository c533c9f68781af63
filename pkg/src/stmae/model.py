"""Asymmetric masked-autoencoder transformer.

The encoder runs pre-norm transformer blocks over visible tokens only;
the decoder rebuilds the full sequence by placing projected encoder
outputs at visible positions and one shared learned mask token (plus
decoder positional embeddings) everywhere else, then predicts pixels for
every patch. Classification reuses the encoder over all patches with a
cls token prepended.

Parameters live in an ordered {dotted-name: Tensor} dict so optimizer
state, checkpoints, and layer-decay groups can address them by path.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ConfigError, NumericError, ShapeError
from .patches import TubeletConfig, embed_patches

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    tubelet: TubeletConfig = field(default_factory=TubeletConfig)
    d_enc: int = 128
    depth_enc: int = 4
    heads_enc: int = 4
    d_dec: int = 64
    depth_dec: int = 2
    heads_dec: int = 2
    mlp_ratio: int = 4
    use_cls_token: bool = False
    norm_pix_targets: bool = False
    num_classes: int | None = None

    def __post_init__(self):
        if self.d_dec > self.d_enc:
            raise ConfigError(
                f"decoder width {self.d_dec} exceeds encoder width {self.d_enc}")
        if self.d_enc % self.heads_enc or self.d_dec % self.heads_dec:
            raise ConfigError("model width not divisible by head count")
        if self.num_classes is not None and self.num_classes < 2:
            raise ConfigError("classifier needs at least 2 classes")


def _trunc_normal(rng, shape, std=INIT_STD):
    """Normal(0, std) with tails beyond 2 std resampled."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


def _block_param_shapes(d, mlp_ratio):
    h = int(round(d * mlp_ratio))
    return {
        "ln1.g": (d,), "ln1.b": (d,),
        "attn.wq": (d, d), "attn.bq": (d,),
        "attn.wk": (d, d), "attn.bk": (d,),
        "attn.wv": (d, d), "attn.bv": (d,),
        "attn.wo": (d, d), "attn.bo": (d,),
        "ln2.g": (d,), "ln2.b": (d,),
        "mlp.w1": (d, h), "mlp.b1": (h,),
        "mlp.w2": (h, d), "mlp.b2": (d,),
    }


def param_shapes(cfg):
    """Ordered {name: shape} for every parameter implied by the config."""
    tc = cfg.tubelet
    pd, sp, tg = tc.patch_dim, tc.hg * tc.wg, tc.tg
    shapes = {"embed.w": (pd, cfg.d_enc),
              "enc.pos_spatial": (sp, cfg.d_enc),
              "enc.pos_temporal": (tg, cfg.d_enc)}
    if cfg.use_cls_token:
        shapes["cls.token"] = (1, cfg.d_enc)
    for i in range(cfg.depth_enc):
        for k, s in _block_param_shapes(cfg.d_enc, cfg.mlp_ratio).items():
            shapes[f"enc.block{i}.{k}"] = s
    shapes["enc.norm.g"] = (cfg.d_enc,)
    shapes["enc.norm.b"] = (cfg.d_enc,)
    shapes["dec.proj.w"] = (cfg.d_enc, cfg.d_dec)
    shapes["dec.proj.b"] = (cfg.d_dec,)
    shapes["dec.mask_token"] = (cfg.d_dec,)
    shapes["dec.pos_spatial"] = (sp, cfg.d_dec)
    shapes["dec.pos_temporal"] = (tg, cfg.d_dec)
    for i in range(cfg.depth_dec):
        for k, s in _block_param_shapes(cfg.d_dec, cfg.mlp_ratio).items():
            shapes[f"dec.block{i}.{k}"] = s
    shapes["dec.norm.g"] = (cfg.d_dec,)
    shapes["dec.norm.b"] = (cfg.d_dec,)
    shapes["dec.rec.w"] = (cfg.d_dec, pd)
    shapes["dec.rec.b"] = (pd,)
    if cfg.num_classes is not None:
        shapes["head.w"] = (cfg.d_enc, cfg.num_classes)
        shapes["head.b"] = (cfg.num_classes,)
    return shapes


def count_params(cfg):
    """Closed-form parameter count for a config."""
    tc = cfg.tubelet
    pd, sp, tg, r = tc.patch_dim, tc.hg * tc.wg, tc.tg, cfg.mlp_ratio

    def block(d):
        return (4 + 2 * r) * d * d + (9 + r) * d

    de, dd = cfg.d_enc, cfg.d_dec
    total = pd * de + (sp + tg) * de + cfg.depth_enc * block(de) + 2 * de
    total += de * dd + dd + dd + (sp + tg) * dd
    total += cfg.depth_dec * block(dd) + 2 * dd + dd * pd + pd
    if cfg.use_cls_token:
        total += de
    if cfg.num_classes is not None:
        total += de * cfg.num_classes + cfg.num_classes
    return total


def init_params(cfg, seed=0, dtype=np.float32):
    """Fresh parameter dict: truncated-normal weights, zero biases/offsets,
    unit layernorm scales. Count is asserted against the closed form."""
    rng = np.random.default_rng([int(seed), 0x7061])
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("g",):
            data = np.ones(shape)
        elif leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2", "mask_token"):
            data = np.zeros(shape)
        else:
            data = _trunc_normal(rng, shape)
        params[name] = tn.Tensor(data, dtype=dtype, requires_grad=True)
    enumerated = sum(p.size for p in params.values())
    expected = count_params(cfg)
    if enumerated != expected:
        raise ConfigError(
            f"parameter count mismatch: enumerated {enumerated}, "
            f"closed form {expected}")
    return params


def _ensure_batched(x, dtype=None):
    if not isinstance(x, tn.Tensor):
        x = tn.Tensor(np.asarray(x), dtype=dtype)
    if x.ndim == 2:
        return tn.reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected 2-d or 3-d token tensor, got {x.shape}")


def _attention(params, prefix, x, heads, capture=None):
    b, s, d = x.shape
    dh = d // heads
    q = tn.add(tn.matmul(x, params[f"{prefix}.attn.wq"]), params[f"{prefix}.attn.bq"])
    k = tn.add(tn.matmul(x, params[f"{prefix}.attn.wk"]), params[f"{prefix}.attn.bk"])
    v = tn.add(tn.matmul(x, params[f"{prefix}.attn.wv"]), params[f"{prefix}.attn.bv"])

    def split(t):
        return tn.transpose(tn.reshape(t, (b, s, heads, dh)), (0, 2, 1, 3))

    q, k, v = split(q), split(k), split(v)
    scores = tn.mul(tn.matmul(q, tn.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    probs = tn.softmax(scores)
    if capture is not None:
        capture.append(probs.data.copy())
    ctx = tn.matmul(probs, v)
    ctx = tn.reshape(tn.transpose(ctx, (0, 2, 1, 3)), (b, s, d))
    return tn.add(tn.matmul(ctx, params[f"{prefix}.attn.wo"]), params[f"{prefix}.attn.bo"])


def _mlp(params, prefix, x):
    h = tn.gelu(tn.add(tn.matmul(x, params[f"{prefix}.mlp.w1"]), params[f"{prefix}.mlp.b1"]))
    return tn.add(tn.matmul(h, params[f"{prefix}.mlp.w2"]), params[f"{prefix}.mlp.b2"])


def _block(params, prefix, x, heads, capture=None):
    h = tn.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = tn.add(x, _attention(params, prefix, h, heads, capture))
    h = tn.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    return tn.add(x, _mlp(params, prefix, h))


def _broadcast_rows(row, b, s):
    """Differentiable tile of a [d] or [1,d] tensor to [b, s, d]."""
    d = row.shape[-1]
    zeros = tn.Tensor(np.zeros((b, s, d), dtype=row.dtype))
    return tn.add(zeros, tn.reshape(row, (d,)))


def encode(params, cfg, tokens, capture=None, prepend_cls=None):
    """Run encoder blocks (plus final norm) over already-embedded tokens.

    With depth 0 the encoder is the identity. `capture`, if a list, gets
    each block's attention probabilities appended as numpy arrays.
    """
    x, was_2d = _ensure_batched(tokens)
    if x.shape[-1] != cfg.d_enc:
        raise ShapeError(f"token width {x.shape[-1]} != d_enc {cfg.d_enc}")
    use_cls = cfg.use_cls_token if prepend_cls is None else prepend_cls
    if use_cls:
        if "cls.token" not in params:
            raise ConfigError("config asks for a cls token but params lack one")
        cls = _broadcast_rows(params["cls.token"], x.shape[0], 1)
        x = tn.concatenate([cls, x], axis=1)
    if cfg.depth_enc > 0:
        for i in range(cfg.depth_enc):
            x = _block(params, f"enc.block{i}", x, cfg.heads_enc, capture)
        x = tn.layer_norm(x, params["enc.norm.g"], params["enc.norm.b"])
    if was_2d:
        x = tn.reshape(x, x.shape[1:])
    return x


def _decoder_pos(params, cfg):
    tc = cfg.tubelet
    idx = np.arange(tc.n_patches)
    return tn.add(tn.gather_rows(params["dec.pos_spatial"], tc.spatial_index(idx)),
                  tn.gather_rows(params["dec.pos_temporal"], tc.time_index(idx)))


def decode(params, cfg, encoded, plans, index_map):
    """Rebuild the full sequence and predict pixels for every patch.

    encoded: [B, V, d_enc] (or [V, d_enc]) encoder outputs, no cls token.
    plans: per-clip MaskPlans; index_map: [B, V] visible-position indices
    as produced by the gather that fed the encoder.
    """
    x, was_2d = _ensure_batched(encoded)
    plans = [plans] if not isinstance(plans, (list, tuple)) else list(plans)
    index_map = np.asarray(index_map, dtype=np.int64)
    if index_map.ndim == 1:
        index_map = index_map[None, :]
    b = x.shape[0]
    if len(plans) != b or index_map.shape != (b, x.shape[1]):
        raise ShapeError(
            f"decode: {len(plans)} plans / index map {index_map.shape} "
            f"inconsistent with encoded shape {x.shape}")
    n = plans[0].n
    n_masked = plans[0].n_masked
    for row, plan in enumerate(plans):
        if plan.n != n or plan.n_masked != n_masked:
            raise ShapeError("decode: plans in one batch must share mask counts")
        if not np.array_equal(index_map[row], plan.visible_indices()):
            raise ShapeError(f"decode: index map row {row} does not match plan")

    x = tn.add(tn.matmul(x, params["dec.proj.w"]), params["dec.proj.b"])
    full = tn.scatter_tokens(x, index_map, n)
    if n_masked > 0:
        masked_idx = np.stack([p.masked_indices() for p in plans])
        mtok = _broadcast_rows(params["dec.mask_token"], b, n_masked)
        full = tn.add(full, tn.scatter_tokens(mtok, masked_idx, n))
    full = tn.add(full, _decoder_pos(params, cfg))
    for i in range(cfg.depth_dec):
        full = _block(params, f"dec.block{i}", full, cfg.heads_dec)
    full = tn.layer_norm(full, params["dec.norm.g"], params["dec.norm.b"])
    pred = tn.add(tn.matmul(full, params["dec.rec.w"]), params["dec.rec.b"])
    if was_2d:
        pred = tn.reshape(pred, pred.shape[1:])
    return pred


def normalize_targets(targets, eps=1e-6):
    """Standardize each target patch row to mean 0, variance 1."""
    mu = targets.mean(axis=-1, keepdims=True)
    var = targets.var(axis=-1, keepdims=True)
    return (targets - mu) / np.sqrt(var + eps)


def mae_loss(predictions, targets, plans, norm_pix=False):
    """Mean squared error over masked patches only.

    predictions: [B, N, patch_dim] or [N, patch_dim] tensor; targets the
    matching numpy patch matrix; plans one MaskPlan per batch row.
    """
    pred, was_2d = _ensure_batched(predictions)
    plans = [plans] if not isinstance(plans, (list, tuple)) else list(plans)
    targets = np.asarray(targets)
    if targets.ndim == 2:
        targets = targets[None]
    if targets.shape != pred.shape:
        raise ShapeError(
            f"targets shape {targets.shape} != predictions {tuple(pred.shape)}")
    if len(plans) != pred.shape[0]:
        raise ShapeError(f"{len(plans)} plans for batch of {pred.shape[0]}")
    if any(p.n_masked == 0 for p in plans):
        raise NumericError("masked MSE undefined: a plan masks zero patches")
    if norm_pix:
        targets = normalize_targets(targets)
    masked_idx = np.stack([p.masked_indices() for p in plans])
    pred_m = tn.gather_tokens(pred, masked_idx)
    tgt_m = np.take_along_axis(targets, masked_idx[:, :, None], axis=1)
    diff = tn.sub(pred_m, tn.Tensor(tgt_m, dtype=pred.dtype))
    return tn.mean(tn.mul(diff, diff))


def embed_clip_patches(params, cfg, patch_batch):
    """Patch projection + separable positional terms for a [B?, N, pd] batch."""
    return embed_patches(patch_batch, params["embed.w"],
                         params["enc.pos_spatial"], params["enc.pos_temporal"],
                         cfg.tubelet)


def mae_forward(params, cfg, patch_batch, plans):
    """Embed, mask, encode visible tokens, decode to pixel predictions."""
    x, was_2d = _ensure_batched(patch_batch, dtype=params["embed.w"].dtype)
    plans = [plans] if not isinstance(plans, (list, tuple)) else list(plans)
    tokens = embed_clip_patches(params, cfg, x)
    vis_idx = np.stack([p.visible_indices() for p in plans])
    visible = tn.gather_tokens(tokens, vis_idx)
    encoded = encode(params, cfg, visible, prepend_cls=False)
    pred = decode(params, cfg, encoded, plans, vis_idx)
    if was_2d:
        pred = tn.reshape(pred, pred.shape[1:])
    return pred


def classify(params, cfg, patch_batch, capture=None):
    """Encoder over all patches with cls token; cls representation -> logits."""
    if cfg.num_classes is None or "head.w" not in params:
        raise ConfigError("model has no classifier head")
    if not cfg.use_cls_token or "cls.token" not in params:
        raise ConfigError("classification requires a cls token")
    x, was_2d = _ensure_batched(patch_batch, dtype=params["embed.w"].dtype)
    tokens = embed_clip_patches(params, cfg, x)
    enc = encode(params, cfg, tokens, capture=capture, prepend_cls=True)
    cls = tn.reshape(tn.gather_tokens(enc, np.zeros((x.shape[0], 1), dtype=np.int64)),
                     (x.shape[0], cfg.d_enc))
    logits = tn.add(tn.matmul(cls, params["head.w"]), params["head.b"])
    if was_2d:
        logits = tn.reshape(logits, (cfg.num_classes,))
    return logits
