"""Evaluation metrics, inference, and the command-line surface.

JSON results go to stdout, logs to stderr, so outputs pipe cleanly.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .data import (EmbeddingTable, Sample, embed, feature_file_read,
                   load_dataset, subsample_frames, synth_materialize,
                   synth_spec_from_dict)
from .model import ModelConfig
from .proposals import rank_candidates, write_proposal_csv
from .training import (TrainConfig, build_from_checkpoint, fit, tiou)

logger = logging.getLogger("lpnet.cli")

THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass
class EvalReport:
    r1_at: dict    # threshold -> recall fraction
    miou: float
    n_samples: int

    def to_json_dict(self):
        out = {f"R@1,IoU={th:g}": self.r1_at[th] for th in sorted(self.r1_at)}
        out["mIoU"] = self.miou
        out["n_samples"] = self.n_samples
        return out


def infer(model, bank, sample: Sample):
    """Top-1 candidate for one sample: ((start_s, end_s), score)."""
    fw = model.forward(sample.features, sample.query_feats, bank,
                       train=False, need_boundary=False)
    idx = rank_candidates(fw.scores.data)
    s, e = fw.intervals[idx]
    return (s * sample.duration, e * sample.duration), float(fw.scores.data[idx])


def evaluate(model, bank, dataset):
    """Recall at the usual thresholds (strictly greater, per convention)
    plus mean top-1 tIoU."""
    if not dataset:
        raise ValueError("empty evaluation dataset")
    tious = []
    for sample in dataset:
        fw = model.forward(sample.features, sample.query_feats, bank,
                           train=False, need_boundary=False)
        idx = rank_candidates(fw.scores.data)
        tious.append(tiou(fw.intervals[idx], sample.gt_norm))
    r1 = {th: float(np.mean([t > th for t in tious])) for th in THRESHOLDS}
    return EvalReport(r1_at=r1, miou=float(np.mean(tious)), n_samples=len(tious))


# ------------------------------------------------------------- config files

def parse_kv_file(path):
    """Flat `key = value` lines; # starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, val = line.split("=", 1)
            key, val = key.strip(), val.strip()
            if key in out:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = val
    return out


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(kv, schema, path):
    unknown = sorted(set(kv) - set(schema))
    if unknown:
        raise ValueError(f"{path}: unknown keys {unknown}")
    typed = {}
    for key, val in kv.items():
        kind = schema[key]
        typed[key] = _parse_bool(val) if kind is bool else kind(val)
    return typed


TRAIN_KEYS = {
    # optimizer/loop
    "lambda": float, "lr": float, "epochs": int, "batch_size": int, "seed": int,
    "dropout": float, "patience": int, "relax_radius": int, "val_split": float,
    "disable_mhsa": bool, "disable_boundary_loss": bool,
    "disable_giou_fallback": bool, "alternate_streams": bool,
    "kl_pred_to_label": bool, "freeze_proposals": bool,
    # model dims
    "d": int, "conv_blocks": int, "kernel": int, "heads": int,
    "n_proposals": int, "roi_len": int, "lstm_hidden": int,
    "max_proposal_len": float, "max_frames": int,
    # plumbing
    "data": str, "val_data": str, "dump_proposals": bool,
}

DATA_KEYS = {
    "format": str, "annotations": str, "features": str, "durations": str,
    "embeddings": str, "embed_dim": int, "max_frames": int,
    # synth fields
    "num_samples": int, "T": int, "d_v": int, "vocab_size": int, "modes": str,
    "signal_strength": float, "duration": float, "seed": int,
    "min_tokens": int, "max_tokens": int,
}

SYNTH_KEYS = {
    "num_samples": int, "T": int, "d_v": int, "vocab_size": int, "modes": str,
    "signal_strength": float, "duration": float, "seed": int,
    "min_tokens": int, "max_tokens": int,
}

_MODEL_FIELDS = ("d", "conv_blocks", "kernel", "heads", "n_proposals",
                 "roi_len", "lstm_hidden", "max_proposal_len", "max_frames")


def _load_data_spec(path, default_max_frames):
    spec = coerce(parse_kv_file(path), DATA_KEYS, path)
    max_frames = spec.pop("max_frames", default_max_frames)
    return load_dataset(spec, max_frames=max_frames)


# ---------------------------------------------------------------- commands

def cmd_train(args):
    typed = coerce(parse_kv_file(args.config), TRAIN_KEYS, args.config)
    data_path = typed.pop("data", None)
    if not data_path:
        raise ValueError(f"{args.config}: missing `data=<dataset spec path>`")
    val_path = typed.pop("val_data", None)
    dump = typed.pop("dump_proposals", False) or args.dump_proposals
    model_kv = {k: typed.pop(k) for k in list(typed) if k in _MODEL_FIELDS}
    model_cfg = ModelConfig.from_dict({**ModelConfig().to_dict(), **model_kv})
    train_cfg = TrainConfig.from_dict(typed)

    train_set, table = _load_data_spec(data_path, model_cfg.max_frames)
    val_set = None
    if val_path:
        val_set, _ = _load_data_spec(val_path, model_cfg.max_frames)
    embed_info = {"mode": table.mode, "dim": table.dim}
    if table.mode == "file":
        embed_info["path"] = parse_kv_file(data_path).get("embeddings")

    result = fit(train_set, train_cfg, model_cfg=model_cfg, val_set=val_set,
                 out_dir=args.out, dump_proposals=dump, embed_info=embed_info)
    print(json.dumps({"checkpoint": args.out,
                      "epochs_run": len(result.metrics),
                      "best_epoch": result.best_epoch,
                      "best_val_miou": result.best_val_miou,
                      "stopped_early": result.stopped_early}))
    return 0


def _table_from_embed_info(info):
    if info.get("mode") == "file":
        return EmbeddingTable.from_file(info["path"])
    return EmbeddingTable(mode="hash", dim=int(info.get("dim", 300)))


def _check_dims(model, samples):
    d_v = samples[0].features.shape[1]
    d_q = samples[0].query_feats.shape[1]
    if d_v != model.cfg.d_video or d_q != model.cfg.d_query:
        raise ValueError(f"checkpoint expects video/query widths "
                         f"({model.cfg.d_video}, {model.cfg.d_query}), "
                         f"dataset provides ({d_v}, {d_q})")


def cmd_eval(args):
    model, bank, _, embed_info = build_from_checkpoint(args.ckpt)
    spec = coerce(parse_kv_file(args.data), DATA_KEYS, args.data)
    if "embeddings" not in spec and embed_info.get("mode") == "file":
        spec["embeddings"] = embed_info["path"]
    if "embed_dim" not in spec:
        spec["embed_dim"] = int(embed_info.get("dim", 300))
    max_frames = spec.pop("max_frames", model.cfg.max_frames)
    samples, _ = load_dataset(spec, max_frames=max_frames)
    _check_dims(model, samples)
    report = evaluate(model, bank, samples)
    print(json.dumps(report.to_json_dict()))
    return 0


def cmd_infer(args):
    model, bank, _, embed_info = build_from_checkpoint(args.ckpt)
    table = _table_from_embed_info(embed_info)
    feats = subsample_frames(feature_file_read(args.features), model.cfg.max_frames)
    tokens = args.query.lower().split()
    if not tokens:
        raise ValueError("empty query")
    duration = args.duration
    sample = Sample(video_id=os.path.basename(args.features),
                    tokens=tokens, gt_seconds=(0.0, duration), duration=duration,
                    gt_norm=(0.0, 1.0), features=feats,
                    query_feats=embed(tokens, table))
    _check_dims(model, [sample])
    (start, end), score = infer(model, bank, sample)
    print(json.dumps({"start": start, "end": end, "score": score,
                      "duration": duration}))
    return 0


def cmd_proposals(args):
    _, bank, _, _ = build_from_checkpoint(args.ckpt)
    write_proposal_csv(args.out, bank)
    print(json.dumps({"proposals": args.out, "count": bank.n}))
    return 0


def cmd_synth(args):
    typed = coerce(parse_kv_file(args.spec), SYNTH_KEYS, args.spec)
    spec = synth_spec_from_dict(typed)
    ann, dur, feat_dir = synth_materialize(spec, args.out)
    print(json.dumps({"annotations": ann, "durations": dur, "features": feat_dir,
                      "num_samples": spec.num_samples}))
    return 0


# --------------------------------------------------------------- entrypoint

def build_parser():
    parser = argparse.ArgumentParser(
        prog="lpnet",
        description="Train and evaluate the proposal-based moment localizer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True, help="flat key=value training config")
    p.add_argument("--out", required=True, help="output directory for checkpoint/logs")
    p.add_argument("--dump-proposals", action="store_true",
                   help="write a proposal CSV after every epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset spec file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="localize one query in one video")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--features", required=True, help="feature file (.lpft)")
    p.add_argument("--query", required=True, help="natural-language query")
    p.add_argument("--duration", type=float, default=1.0,
                   help="video duration in seconds (default 1.0: normalized output)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("proposals", help="dump a checkpoint's proposal boxes to CSV")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_proposals)

    p = sub.add_parser("synth", help="materialize a synthetic dataset")
    p.add_argument("--spec", required=True, help="flat key=value synthesis spec")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except Exception as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
