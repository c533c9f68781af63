"""Checkpoint container ("MAEC" format).

Layout: magic "MAEC", version u16 LE, u32 LE length of a canonical JSON
metadata block (sorted keys, fixed separators), the JSON bytes, then one
record per tensor in the exact order listed in the metadata. Each record
is: u16 LE name length, name utf-8, u8 ndim, ndim u32 LE dims, then the
buffer as little-endian float32. Canonical encoding makes
save -> load -> save byte-identical.
"""

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .errors import CheckpointError
from .model import ModelConfig, param_shapes
from .patches import TubeletConfig

MAEC_MAGIC = b"MAEC"
MAEC_VERSION = 1


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_of_json(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def model_config_to_dict(cfg):
    return asdict(cfg)


def model_config_from_dict(doc):
    doc = dict(doc)
    try:
        tub = TubeletConfig(**doc.pop("tubelet"))
        return ModelConfig(tubelet=tub, **doc)
    except TypeError as exc:
        raise CheckpointError(f"bad model config in checkpoint: {exc}") from None


@dataclass
class Checkpoint:
    """Model parameters plus everything needed to resume or audit a run."""

    model_config: ModelConfig
    params: dict
    opt_state: dict | None = None  # {"hyper": {...}, "step": int, "m": {}, "v": {}}
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def save(self, path):
        records = [(name, self.params[name].data) for name in sorted(self.params)]
        opt_meta = None
        if self.opt_state is not None:
            opt_meta = {"hyper": self.opt_state["hyper"],
                        "step": self.opt_state["step"]}
            for kind in ("m", "v"):
                for name in sorted(self.opt_state[kind]):
                    records.append((f"opt.{kind}.{name}", self.opt_state[kind][name]))
        meta = {
            "model_config": model_config_to_dict(self.model_config),
            "optimizer": opt_meta,
            "step": self.step,
            "rng_state": self.rng_state,
            "provenance": self.provenance,
            "records": [name for name, _ in records],
        }
        blob = canonical_json(meta).encode("utf-8")
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(MAEC_MAGIC)
            fh.write(struct.pack("<HI", MAEC_VERSION, len(blob)))
            fh.write(blob)
            for name, arr in records:
                nb = name.encode("utf-8")
                fh.write(struct.pack("<H", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path, expect_config=None):
    """Read a MAEC file. If expect_config is given, a differing stored
    model config is rejected."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        magic = fh.read(4)
        if magic != MAEC_MAGIC:
            raise CheckpointError(f"{path}: not a MAEC checkpoint")
        version, blob_len = struct.unpack("<HI", _read_exact(fh, 6, "header"))
        if version != MAEC_VERSION:
            raise CheckpointError(
                f"{path}: MAEC version {version}, expected {MAEC_VERSION}")
        try:
            meta = json.loads(_read_exact(fh, blob_len, "metadata"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: bad metadata block: {exc}") from None
        arrays = {}
        for expected_name in meta["records"]:
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "record name"))
            name = _read_exact(fh, name_len, "record name").decode("utf-8")
            if name != expected_name:
                raise CheckpointError(
                    f"{path}: record {name!r} out of order, expected {expected_name!r}")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "record rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "record shape"))
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            buf = _read_exact(fh, 4 * count, f"record {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last record")

    cfg = model_config_from_dict(meta["model_config"])
    if expect_config is not None and expect_config != cfg:
        raise CheckpointError(
            "checkpoint model config does not match the requested config")

    expected_shapes = param_shapes(cfg)
    params = {}
    for name, shape in expected_shapes.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if arrays[name].shape != shape:
            raise CheckpointError(
                f"{path}: parameter {name} has shape {arrays[name].shape}, "
                f"config implies {shape}")
        params[name] = tn.Tensor(arrays[name], dtype=np.float32, requires_grad=True)

    opt_state = None
    if meta["optimizer"] is not None:
        opt_state = {"hyper": meta["optimizer"]["hyper"],
                     "step": meta["optimizer"]["step"], "m": {}, "v": {}}
        for rec in meta["records"]:
            if rec.startswith("opt.m."):
                opt_state["m"][rec[6:]] = arrays[rec]
            elif rec.startswith("opt.v."):
                opt_state["v"][rec[6:]] = arrays[rec]
    return Checkpoint(model_config=cfg, params=params, opt_state=opt_state,
                      step=meta["step"], rng_state=meta["rng_state"],
                      provenance=meta["provenance"])
