"""Run configuration: defaults, JSON overlay, flag overrides, hashing.

The configuration is a two-level tree of named sections. Merging is
strict: a key (section or leaf) that does not exist in the defaults is
rejected rather than silently absorbed, so typos fail fast.
"""

import copy
import json

from .checkpoint import sha256_of_json
from .errors import ConfigError

DEFAULTS = {
    "data": {
        "classes": 8,
        "clips_per_class": 100,
        "finetune_clips_per_class": 60,
        "val_clips_per_class": 100,
        "frames": 16,
        "resolution": 32,
        "channels": 3,
        "fps": 3.75,
        "seed": 0,
    },
    "tubelet": {
        "t_patch": 2,
        "s_patch": 4,
    },
    "model": {
        "d_enc": 128,
        "depth_enc": 4,
        "heads_enc": 4,
        "d_dec": 64,
        "depth_dec": 2,
        "heads_dec": 2,
        "mlp_ratio": 4,
        "norm_pix_targets": False,
    },
    "pretrain": {
        "steps": 500,
        "batch_size": 16,
        "base_lr": 1.5e-3,
        "mask_ratio": 0.9,
        "mask_kind": "random",
        "warmup_frac": 0.1,
        "weight_decay": 0.05,
        "seed": 0,
        "image_mode": False,
        "augment_scale": [0.5, 1.0],
        "flip_prob": 0.5,
    },
    "finetune": {
        "k_shot": 10,
        "epochs": 20,
        "base_lr": 1e-3,
        "layer_decay": 0.75,
        "label_smoothing": 0.1,
        "batch_size": 16,
        "seed": 0,
        "warmup_frac": 0.1,
        "weight_decay": 0.05,
        "image_mode": False,
        "augment_scale": [0.7, 1.0],
        # flips swap direction-paired labels (left/right, cw/ccw), so the
        # default keeps them off for this label set
        "flip_prob": 0.0,
    },
    "eval": {
        "frame_averaged": False,
        "split": "validation",
    },
    "analysis": {
        "tsne_perplexity": 15.0,
        "tsne_iters": 500,
        "tsne_seed": 0,
        "embed_use_cls": False,
        "fractions": [1.0, 0.1, 0.01, 0.001],
        "scaling_seed": 0,
    },
}


def _merge_strict(base, overlay, path=""):
    for key, value in overlay.items():
        here = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here} must be a section")
            _merge_strict(base[key], value, f"{here}.")
        else:
            base[key] = value


def load_config(path=None, overrides=None):
    """Defaults, overlaid with a JSON file and then dotted-key overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        _merge_strict(cfg, doc)
    for dotted, raw in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key or section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config key: {dotted}")
        try:
            value = json.loads(raw) if isinstance(raw, str) else raw
        except json.JSONDecodeError:
            value = raw
        cfg[section][key] = value
    return cfg


def config_hash(cfg):
    return sha256_of_json(cfg)


def echo_config(cfg, path):
    """Write the resolved config (with its own hash) to the run directory."""
    doc = dict(cfg)
    doc = {**doc, "config_sha256": config_hash(cfg)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
