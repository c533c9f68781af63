"""Command-line entry point.

Subcommands cover the full experiment pipeline: data generation,
pretraining, few-shot finetuning, evaluation, interpolation, attention
maps, embeddings/t-SNE, and the data-scaling sweep. Every run writes its
resolved configuration into the output directory first; timestamps are
confined to log.txt so reruns with equal seeds produce byte-identical
artifacts. Module errors map to exit codes: 2 config, 3 data, 4 numeric.
"""

import argparse
import csv
import datetime
import json
import os
import sys

import numpy as np

from . import evaluation as ev
from . import scaling as sc
from . import synth
from . import training as tr
from . import video
from .checkpoint import load_checkpoint, sha256_of_json
from .config import config_hash, echo_config, load_config
from .errors import ConfigError, DataError, NumericError, StmaeError
from .model import ModelConfig
from .patches import TubeletConfig
from .tsne import tsne

OUT_ROOT_ENV = "STMAE_OUT_ROOT"


def _resolve_out(path):
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _log(out_dir, message):
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    with open(os.path.join(out_dir, "log.txt"), "a", encoding="utf-8") as fh:
        fh.write(f"{stamp} {message}\n")


def _tubelet_from_cfg(cfg):
    return TubeletConfig(frames=cfg["data"]["frames"],
                         height=cfg["data"]["resolution"],
                         width=cfg["data"]["resolution"],
                         channels=cfg["data"]["channels"],
                         t_patch=cfg["tubelet"]["t_patch"],
                         s_patch=cfg["tubelet"]["s_patch"])


def _model_from_cfg(cfg):
    m = cfg["model"]
    return ModelConfig(tubelet=_tubelet_from_cfg(cfg), d_enc=m["d_enc"],
                       depth_enc=m["depth_enc"], heads_enc=m["heads_enc"],
                       d_dec=m["d_dec"], depth_dec=m["depth_dec"],
                       heads_dec=m["heads_dec"], mlp_ratio=m["mlp_ratio"],
                       norm_pix_targets=m["norm_pix_targets"])


def _manifest_for_split(data_dir, split):
    path = os.path.join(data_dir, split, "manifest.json")
    if not os.path.exists(path):
        raise DataError(f"no manifest for split {split!r} under {data_dir}")
    return video.load_manifest(path), os.path.join(data_dir, split)


def _manifest_hash(manifest):
    doc = {"clips": [{"path": p, "label": label, "seconds": s}
                     for p, label, s in manifest.clips],
           "split": manifest.split, "total_hours": manifest.total_hours}
    return sha256_of_json(doc)


def _collect_overrides(pairs):
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key] = value
    return out


def cmd_generate_data(args):
    cfg = load_config(args.config, _collect_overrides(args.set))
    if args.seed is not None:
        cfg["data"]["seed"] = args.seed
    out_dir = _ensure_dir(_resolve_out(args.out))
    echo_config(cfg, os.path.join(out_dir, "config.json"))
    _log(out_dir, "generate-data start")
    d = cfg["data"]
    specs = synth.default_specs()[: d["classes"]]
    splits = (("pretrain", d["clips_per_class"]),
              ("finetune", d["finetune_clips_per_class"]),
              ("validation", d["val_clips_per_class"]))
    manifests = []
    for offset, (split, per_class) in enumerate(splits):
        split_dir = _ensure_dir(os.path.join(out_dir, split))
        manifest = synth.generate_synthetic_dataset(
            specs, per_class, d["frames"], d["resolution"],
            seed=d["seed"] + offset, out_dir=split_dir, split=split,
            fps=d["fps"], channels=d["channels"],
            t_patch=cfg["tubelet"]["t_patch"],
            s_patch=cfg["tubelet"]["s_patch"])
        manifest.save(os.path.join(split_dir, "manifest.json"))
        manifests.append(manifest)
    video.check_disjoint_splits(manifests)
    _log(out_dir, "generate-data done")
    print(json.dumps({"out": out_dir,
                      "splits": {m.split: len(m.clips) for m in manifests},
                      "pretrain_hours": manifests[0].total_hours},
                     sort_keys=True))
    return 0


def cmd_pretrain(args):
    cfg = load_config(args.config, _collect_overrides(args.set))
    if args.seed is not None:
        cfg["pretrain"]["seed"] = args.seed
    if args.steps is not None:
        cfg["pretrain"]["steps"] = args.steps
    if args.image_mode:
        cfg["pretrain"]["image_mode"] = True
        cfg["pretrain"]["mask_kind"] = "per_frame_image"
        cfg["pretrain"]["mask_ratio"] = args.image_mask_ratio
    out_dir = _ensure_dir(_resolve_out(args.out))
    echo_config(cfg, os.path.join(out_dir, "config.json"))
    _log(out_dir, "pretrain start")
    manifest, base = _manifest_for_split(args.data, "pretrain")
    p = cfg["pretrain"]
    ckpt = tr.pretrain(
        manifest, base, _model_from_cfg(cfg), mask_ratio=p["mask_ratio"],
        steps=p["steps"], seed=p["seed"], batch_size=p["batch_size"],
        base_lr=p["base_lr"], warmup_frac=p["warmup_frac"],
        weight_decay=p["weight_decay"], mask_kind=p["mask_kind"],
        image_mode=p["image_mode"],
        augment_scale=tuple(p["augment_scale"]), flip_prob=p["flip_prob"],
        metrics_path=os.path.join(out_dir, "metrics.jsonl"),
        provenance={"manifest_sha256": _manifest_hash(manifest),
                    "config_sha256": config_hash(cfg)})
    ckpt_path = os.path.join(out_dir, "checkpoint.maec")
    ckpt.save(ckpt_path)
    _log(out_dir, "pretrain done")
    losses = [m["loss"] for m in _read_metrics(out_dir)]
    print(json.dumps({"checkpoint": ckpt_path, "steps": p["steps"],
                      "initial_loss": losses[0], "final_loss": losses[-1]},
                     sort_keys=True))
    return 0


def _read_metrics(out_dir):
    with open(os.path.join(out_dir, "metrics.jsonl"), encoding="utf-8") as fh:
        return [json.loads(line) for line in fh]


def cmd_finetune(args):
    cfg = load_config(args.config, _collect_overrides(args.set))
    if args.k_shot is not None:
        cfg["finetune"]["k_shot"] = args.k_shot
    if args.seed is not None:
        cfg["finetune"]["seed"] = args.seed
    if args.epochs is not None:
        cfg["finetune"]["epochs"] = args.epochs
    if args.image_mode:
        cfg["finetune"]["image_mode"] = True
    out_dir = _ensure_dir(_resolve_out(args.out))
    echo_config(cfg, os.path.join(out_dir, "config.json"))
    _log(out_dir, "finetune start")
    ckpt = load_checkpoint(args.ckpt)
    manifest, base = _manifest_for_split(args.data, "finetune")
    f = cfg["finetune"]
    ft_cfg = tr.FinetuneConfig(
        k_shot=f["k_shot"], layer_decay=f["layer_decay"],
        base_lr=f["base_lr"], epochs=f["epochs"], seed=f["seed"],
        batch_size=f["batch_size"], label_smoothing=f["label_smoothing"],
        num_classes=cfg["data"]["classes"], warmup_frac=f["warmup_frac"],
        weight_decay=f["weight_decay"],
        augment_scale=tuple(f["augment_scale"]), flip_prob=f["flip_prob"])
    out_ckpt = tr.finetune_few_shot(
        ckpt, manifest, base, ft_cfg, image_mode=f["image_mode"],
        metrics_path=os.path.join(out_dir, "metrics.jsonl"),
        provenance={"manifest_sha256": _manifest_hash(manifest),
                    "config_sha256": config_hash(cfg),
                    "pretrain_checkpoint": os.path.basename(args.ckpt)})
    ckpt_path = os.path.join(out_dir, "checkpoint.maec")
    out_ckpt.save(ckpt_path)
    _log(out_dir, "finetune done")
    print(json.dumps({"checkpoint": ckpt_path, "k_shot": f["k_shot"],
                      "train_size": f["k_shot"] * cfg["data"]["classes"]},
                     sort_keys=True))
    return 0


def cmd_eval(args):
    cfg = load_config(args.config, _collect_overrides(args.set))
    if args.frame_averaged:
        cfg["eval"]["frame_averaged"] = True
    if args.split is not None:
        cfg["eval"]["split"] = args.split
    ckpt = load_checkpoint(args.ckpt)
    manifest, base = _manifest_for_split(args.data, cfg["eval"]["split"])
    report = ev.evaluate(ckpt, manifest, base,
                         frame_averaged=cfg["eval"]["frame_averaged"])
    if args.out:
        out_dir = _ensure_dir(_resolve_out(args.out))
        echo_config(cfg, os.path.join(out_dir, "config.json"))
        report.save(os.path.join(out_dir, "eval.json"))
        _log(out_dir, "eval done")
    print(report.to_json())
    return 0


def cmd_interpolate(args):
    ckpt = load_checkpoint(args.ckpt)
    clip = video.read_clip(args.clip)
    out_dir = _ensure_dir(_resolve_out(args.out))
    _log(out_dir, "interpolate start")
    completion, report = ev.interpolate(ckpt, clip)
    video.write_clip(completion, os.path.join(out_dir, "completion.vclp"))
    ev.write_f32_raw(os.path.join(out_dir, "completion.f32"),
                     completion.frames)
    for t in range(completion.frames.shape[0]):
        ev.write_ppm(os.path.join(out_dir, f"frame_{t:02d}.ppm"),
                     completion.frames[t])
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True)
        fh.write("\n")
    _log(out_dir, "interpolate done")
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_attention(args):
    ckpt = load_checkpoint(args.ckpt)
    clip = video.read_clip(args.clip)
    out_dir = _ensure_dir(_resolve_out(args.out))
    _log(out_dir, "attention start")
    maps, upsampled = ev.attention_maps(ckpt, clip)
    ev.write_f32_raw(os.path.join(out_dir, "attention.f32"), upsampled)
    for t in range(upsampled.shape[0]):
        ev.write_ppm(os.path.join(out_dir, f"attn_{t:02d}.ppm"),
                     ev.heatmap_to_image(upsampled[t]))
    meta = {"shape": list(upsampled.shape), "sums": [float(m.sum()) for m in maps]}
    with open(os.path.join(out_dir, "attention.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    _log(out_dir, "attention done")
    print(json.dumps(meta, sort_keys=True))
    return 0


def cmd_embed(args):
    cfg = load_config(args.config, _collect_overrides(args.set))
    if args.split is not None:
        cfg["eval"]["split"] = args.split
    ckpt = load_checkpoint(args.ckpt)
    manifest, base = _manifest_for_split(args.data, cfg["eval"]["split"])
    clips = video.load_clips(manifest, base)
    emb = ev.embed_clips(ckpt, clips,
                         use_cls=cfg["analysis"]["embed_use_cls"])
    labels = [c.label if c.label is not None else -1 for c in clips]
    out_dir = _ensure_dir(_resolve_out(args.out))
    echo_config(cfg, os.path.join(out_dir, "config.json"))
    _log(out_dir, "embed start")
    _write_matrix_csv(os.path.join(out_dir, "embeddings.csv"), emb, labels)
    result = {"rows": len(clips), "dim": int(emb.shape[1])}
    if args.tsne:
        a = cfg["analysis"]
        coords, kl = tsne(emb, perplexity=a["tsne_perplexity"],
                          iters=a["tsne_iters"], seed=a["tsne_seed"])
        _write_matrix_csv(os.path.join(out_dir, "tsne.csv"), coords, labels)
        result["tsne_final_kl"] = float(kl[-1])
    _log(out_dir, "embed done")
    print(json.dumps(result, sort_keys=True))
    return 0


def _write_matrix_csv(path, matrix, labels):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"x{j}" for j in range(matrix.shape[1])])
        for label, row in zip(labels, matrix):
            writer.writerow([label] + [repr(float(v)) for v in row])


def nested_fraction_rows(manifest, fraction, seed):
    """Seeded nested subsets: smaller fractions are prefixes of larger ones."""
    n = len(manifest.clips)
    rng = np.random.default_rng([int(seed), 0x7363])
    order = rng.permutation(n)
    take = max(1, int(round(fraction * n)))
    return sorted(order[:take].tolist())


def cmd_scaling(args):
    cfg = load_config(args.config, _collect_overrides(args.set))
    fractions = cfg["analysis"]["fractions"]
    if args.fractions:
        fractions = [float(f) for f in args.fractions.split(",")]
    if len(fractions) < 3:
        raise ConfigError(
            f"scaling needs >= 3 fractions for the fit, got {len(fractions)}")
    out_dir = _ensure_dir(_resolve_out(args.out))
    echo_config(cfg, os.path.join(out_dir, "config.json"))
    _log(out_dir, "scaling start")
    manifest, base = _manifest_for_split(args.data, "pretrain")
    ft_manifest, ft_base = _manifest_for_split(args.data, "finetune")
    val_manifest, val_base = _manifest_for_split(args.data, "validation")
    seed = cfg["analysis"]["scaling_seed"]
    points = []
    for fraction in sorted(fractions):
        rows = nested_fraction_rows(manifest, fraction, seed)
        sub = video.DatasetManifest(split="pretrain")
        for r in rows:
            sub.add(*manifest.clips[r])
        run_dir = _ensure_dir(os.path.join(out_dir, f"frac_{fraction:g}"))
        p = cfg["pretrain"]
        ckpt = tr.pretrain(
            sub, base, _model_from_cfg(cfg), mask_ratio=p["mask_ratio"],
            steps=p["steps"], seed=p["seed"], batch_size=p["batch_size"],
            base_lr=p["base_lr"], warmup_frac=p["warmup_frac"],
            weight_decay=p["weight_decay"], mask_kind=p["mask_kind"],
            image_mode=p["image_mode"],
            augment_scale=tuple(p["augment_scale"]), flip_prob=p["flip_prob"],
            metrics_path=os.path.join(run_dir, "pretrain_metrics.jsonl"))
        f = cfg["finetune"]
        ft_cfg = tr.FinetuneConfig(
            k_shot=f["k_shot"], layer_decay=f["layer_decay"],
            base_lr=f["base_lr"], epochs=f["epochs"], seed=f["seed"],
            batch_size=f["batch_size"], label_smoothing=f["label_smoothing"],
            num_classes=cfg["data"]["classes"], warmup_frac=f["warmup_frac"],
            weight_decay=f["weight_decay"],
            augment_scale=tuple(f["augment_scale"]), flip_prob=f["flip_prob"])
        ft = tr.finetune_few_shot(ckpt, ft_manifest, ft_base, ft_cfg,
                                  metrics_path=os.path.join(
                                      run_dir, "finetune_metrics.jsonl"))
        ft.save(os.path.join(run_dir, "checkpoint.maec"))
        report = ev.evaluate(ft, val_manifest, val_base)
        report.save(os.path.join(run_dir, "eval.json"))
        points.append((sub.total_hours, report.top1))
        _log(out_dir, f"fraction {fraction} done")
    fit = sc.fit_scaling(points)
    fit.save(os.path.join(out_dir, "scaling.json"))
    sc.write_curve_csv(fit, os.path.join(out_dir, "curve.csv"))
    _log(out_dir, "scaling done")
    print(fit.to_json())
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stmae",
        description="Spatiotemporal masked-autoencoder experiments on "
                    "procedural action video.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", default=None,
                           help="JSON config file overlaying the defaults")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config leaf, e.g. pretrain.steps=50")

    p = sub.add_parser("generate-data", help="render the synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--seed", type=int, default=None, help="dataset seed")
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("pretrain", help="masked-autoencoder pretraining")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--image-mode", action="store_true",
                   help="train on static single-frame clips with "
                        "per-frame masking")
    p.add_argument("--image-mask-ratio", type=float, default=0.8,
                   help="mask ratio used with --image-mode")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="few-shot supervised finetuning")
    common(p)
    p.add_argument("--ckpt", required=True, help="pretraining checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-shot", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--image-mode", action="store_true",
                   help="finetune on static single-frame clips")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="classification accuracy report")
    common(p)
    p.add_argument("--ckpt", required=True, help="finetuned checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--frame-averaged", action="store_true",
                   help="average per-frame logits (image-model protocol)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("interpolate", help="fill in the 4 central frames")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True, help="input VCLP file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_interpolate)

    p = sub.add_parser("attention", help="cls-token attention heatmaps")
    p.add_argument("--ckpt", required=True, help="finetuned checkpoint")
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_attention)

    p = sub.add_parser("embed", help="clip embeddings and optional t-SNE")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--tsne", action="store_true", help="also run t-SNE to 2-D")
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("scaling", help="data-scaling sweep and log-linear fit")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", default=None,
                   help="comma-separated nested data fractions")
    p.set_defaults(fn=cmd_scaling)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _emit_error("config", 2, exc)
        return 2
    except DataError as exc:
        _emit_error("data", 3, exc)
        return 3
    except NumericError as exc:
        _emit_error("numeric", 4, exc)
        return 4
    except StmaeError as exc:
        _emit_error("internal", 1, exc)
        return 1


def _emit_error(kind, code, exc):
    print(json.dumps({"error": kind, "exit_code": code,
                      "type": type(exc).__name__, "message": str(exc)},
                     sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
