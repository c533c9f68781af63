"""Spatiotemporal masked autoencoding on procedural action video.

A self-contained research engine: a small reverse-mode autodiff tensor
library over numpy (hot kernels optionally numba-compiled), a procedural
video generator with a bit-exact clip format, tubelet patchification and
masking, an asymmetric encoder/decoder transformer, training and few-shot
finetuning loops, and analysis tools (interpolation, attention maps,
exact t-SNE, data-scaling fits) bound together by a CLI.
"""

from .checkpoint import Checkpoint, load_checkpoint
from .errors import (CheckpointError, ClipFormatError, ConfigError, DataError,
                     NumericError, ShapeError, StmaeError)
from .evaluation import (EvalReport, attention_maps, embed_clips, evaluate,
                         interpolate, pair_accuracy, silhouette_score)
from .kernels import BACKEND
from .model import ModelConfig, count_params, init_params, mae_forward, mae_loss
from .patches import MaskPlan, TubeletConfig, make_mask, patchify, unpatchify
from .scaling import ScalingFit, fit_scaling
from .synth import CLASS_NAMES, REVERSAL_PAIRS, generate_synthetic_dataset
from .tensor import Tape, Tensor, grad_check, no_grad
from .training import FinetuneConfig, finetune_few_shot, pretrain
from .tsne import tsne
from .video import VideoClip, load_manifest, read_clip, write_clip

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CLASS_NAMES", "Checkpoint", "CheckpointError",
    "ClipFormatError", "ConfigError", "DataError", "EvalReport",
    "FinetuneConfig", "MaskPlan", "ModelConfig", "NumericError",
    "REVERSAL_PAIRS", "ScalingFit", "ShapeError", "StmaeError", "Tape",
    "Tensor", "TubeletConfig", "VideoClip", "attention_maps", "count_params",
    "embed_clips", "evaluate", "finetune_few_shot", "fit_scaling",
    "generate_synthetic_dataset", "grad_check", "init_params",
    "interpolate", "load_checkpoint", "load_manifest", "mae_forward",
    "mae_loss", "make_mask", "no_grad", "pair_accuracy", "patchify",
    "pretrain", "read_clip", "silhouette_score", "tsne", "unpatchify",
    "write_clip",
]
