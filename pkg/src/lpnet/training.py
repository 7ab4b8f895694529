"""Losses, the two-stream update, Adam, the epoch loop, checkpoints.

The box coordinates live a double life during training.  As constants
they position the RoIAlign windows and define the regression targets, so
the rating loss L = L_KL + lambda * L_reg reaches every network weight
and the proposal features but never the box logits.  The IoU loss runs
on a second tape whose graph touches only the selected proposal's
logits, so it reaches nothing else.  Both gradients land in one Adam
step per batch (or two, with alternate_streams).
"""

import json
import os
from dataclasses import dataclass, asdict, field

import numpy as np

from . import ndtensor as nd
from .boundary import kl_boundary_loss, make_labels
from .data import Batch, pad_batch
from .model import LPNet, ModelConfig


@dataclass
class TrainConfig:
    lambda_: float = 100.0
    lr: float = 1e-4
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    dropout: float = 0.1
    patience: int = 10
    relax_radius: int = 1
    val_split: float = 0.1
    disable_mhsa: bool = False
    disable_boundary_loss: bool = False
    disable_giou_fallback: bool = False
    alternate_streams: bool = False
    kl_pred_to_label: bool = False
    freeze_proposals: bool = False  # ablation: never update the box logits

    def validate(self):
        if self.lambda_ <= 0:
            raise ValueError(f"lambda must be positive, got {self.lambda_}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch_size")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.patience < 0 or self.relax_radius < 0:
            raise ValueError("patience and relax_radius must be >= 0")
        if not 0.0 < self.val_split < 1.0:
            raise ValueError(f"val_split must be in (0, 1), got {self.val_split}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


# ------------------------------------------------------------------- losses

def tiou(a, b):
    """Intersection over union of two (s, e) intervals; 0 on zero union."""
    s1, e1 = a
    s2, e2 = b
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    union = (e1 - s1) + (e2 - s2) - inter
    return inter / union if union > 0 else 0.0


def matching_targets(intervals, gt):
    """Per-proposal tIoU against the ground truth -- the rating targets."""
    return np.asarray([tiou(iv, gt) for iv in intervals])


def reg_loss(pred, target):
    """MSE between predicted scores and tIoU targets, scalar Tensor."""
    diff = nd.sub(nd.astensor(pred), nd.astensor(np.asarray(target, dtype=np.float64)))
    return nd.tmean(nd.mul(diff, diff))


def select_proposal_to_adjust(intervals, gt):
    """Index of the best-matching proposal; ties go to the lowest index."""
    if len(intervals) < 1:
        raise ValueError("no proposals")
    return int(np.argmax(matching_targets(intervals, gt)))


def iou_loss(c, w, gt, disable_giou_fallback=False):
    """1 - tIoU between the decoded box and gt, differentiable in (c, w).

    With zero overlap the plain loss has zero gradient, so a 1-D GIoU
    fallback (penalizing the empty stretch of the covering hull) takes
    over unless disabled.
    """
    c, w = nd.astensor(c), nd.astensor(w)
    gs, ge = float(gt[0]), float(gt[1])
    zero = nd.astensor(0.0)
    s = nd.maximum(c - w * 0.5, zero)
    e = nd.minimum(c + w * 0.5, nd.astensor(1.0))
    inter = nd.maximum(nd.minimum(e, nd.astensor(ge)) - nd.maximum(s, nd.astensor(gs)), zero)
    union = (e - s) + (ge - gs) - inter
    iou = inter / union
    if disable_giou_fallback or float(inter.data.reshape(-1)[0]) > 0.0:
        loss = 1.0 - iou
    else:
        hull = nd.maximum(e, nd.astensor(ge)) - nd.minimum(s, nd.astensor(gs))
        giou = iou - (hull - union) / hull
        loss = 1.0 - giou
    return nd.tsum(loss)


def total_loss(l_kl, l_reg, cfg: TrainConfig):
    """L = L_KL + lambda * L_reg; the KL term drops under the ablation flag."""
    l_reg = nd.astensor(l_reg)
    if cfg.disable_boundary_loss:
        return nd.mul(l_reg, nd.astensor(cfg.lambda_))
    return nd.add(nd.astensor(l_kl), nd.mul(l_reg, nd.astensor(cfg.lambda_)))


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_update(param, grad, state: AdamState, lr):
    """Bias-corrected Adam step, applied in place to ``param``."""
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        names = [name for name, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.state = {name: AdamState(m=np.zeros_like(p.data), v=np.zeros_like(p.data),
                                      beta1=beta1, beta2=beta2, eps=eps)
                      for name, p in self.params}

    def step(self):
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_update(p.data, g, self.state[name], self.lr)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = np.zeros_like(p.data)


# ------------------------------------------------------------ training step

@dataclass
class StepReport:
    loss: float
    l_kl: float
    l_reg: float
    l_iou: float
    adjusted_indices: list


def _check_finite(value, context):
    if not np.all(np.isfinite(value)):
        raise RuntimeError(f"non-finite loss in {context}: {value!r}")


def train_step(model: LPNet, bank, batch, cfg: TrainConfig, adam: Adam, rng=None):
    """One batch: rating/boundary stream, IoU stream, one optimizer step."""
    samples = batch.samples if isinstance(batch, Batch) else list(batch)
    if not samples:
        raise ValueError("empty batch")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    adam.zero_grad()

    per_sample_intervals = []
    kl_vals, reg_vals = [], []
    with nd.Tape() as tape:
        acc = None
        for sample in samples:
            fw = model.forward(sample.features, sample.query_feats, bank, rng=rng,
                               train=True, need_boundary=not cfg.disable_boundary_loss)
            per_sample_intervals.append(fw.intervals)
            targets = matching_targets(fw.intervals, sample.gt_norm)
            l_reg = reg_loss(fw.scores, targets)
            if cfg.disable_boundary_loss:
                l_kl = nd.astensor(0.0)
            else:
                labels = make_labels(sample.gt_norm, sample.features.shape[0],
                                     cfg.relax_radius)
                l_kl = kl_boundary_loss(fw.boundary, labels,
                                        pred_to_label=cfg.kl_pred_to_label)
            kl_vals.append(float(l_kl.data))
            reg_vals.append(float(l_reg.data))
            loss = total_loss(l_kl, l_reg, cfg)
            acc = loss if acc is None else nd.add(acc, loss)
        batch_loss = nd.mul(acc, nd.astensor(1.0 / len(samples)))
        _check_finite(batch_loss.data, "rating/boundary stream")
        tape.backward(batch_loss)

    if cfg.alternate_streams:
        adam.step()
        adam.zero_grad()

    adjusted = []
    iou_vals = [0.0]
    if not cfg.freeze_proposals:
        iou_vals = []
        with nd.Tape() as tape2:
            acc2 = None
            for sample, intervals in zip(samples, per_sample_intervals):
                idx = select_proposal_to_adjust(intervals, sample.gt_norm)
                adjusted.append(idx)
                c, w = bank.decode_cw(idx)
                li = iou_loss(c, w, sample.gt_norm,
                              disable_giou_fallback=cfg.disable_giou_fallback)
                iou_vals.append(float(li.data))
                acc2 = li if acc2 is None else nd.add(acc2, li)
            batch_iou = nd.mul(acc2, nd.astensor(1.0 / len(samples)))
            _check_finite(batch_iou.data, "box adjustment stream")
            tape2.backward(batch_iou)

    adam.step()
    return StepReport(loss=float(np.mean([k + cfg.lambda_ * r for k, r in zip(kl_vals, reg_vals)])),
                      l_kl=float(np.mean(kl_vals)), l_reg=float(np.mean(reg_vals)),
                      l_iou=float(np.mean(iou_vals)), adjusted_indices=adjusted)


# -------------------------------------------------------------- checkpoints

CKPT_VERSION = "lpnet-ckpt-v1"


def save_checkpoint(dirpath, params, config):
    """Manifest (name -> shape/dtype/offset) plus one little-endian f32 blob."""
    os.makedirs(dirpath, exist_ok=True)
    manifest = {"version": CKPT_VERSION, "params": {}, "config": config}
    chunks = []
    offset = 0
    for name, p in params:
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        manifest["params"][name] = {"shape": list(arr.shape), "dtype": "float32",
                                    "offset": offset}
        offset += arr.nbytes
        chunks.append(arr.tobytes(order="C"))
    with open(os.path.join(dirpath, "params.bin"), "wb") as fh:
        fh.write(b"".join(chunks))
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return dirpath


def load_checkpoint(dirpath):
    """Returns (name -> float64 array, config dict)."""
    with open(os.path.join(dirpath, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')!r}")
    with open(os.path.join(dirpath, "params.bin"), "rb") as fh:
        blob = fh.read()
    arrays = {}
    for name, meta in manifest["params"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=meta["offset"])
        arrays[name] = arr.reshape(shape).astype(np.float64)
    return arrays, manifest["config"]


def restore_params(params, arrays):
    names = [name for name, _ in params]
    missing = [n for n in names if n not in arrays]
    extra = [n for n in arrays if n not in set(names)]
    if missing or extra:
        raise ValueError(f"checkpoint/model mismatch: missing {missing}, extra {extra}")
    for name, p in params:
        if arrays[name].shape != p.data.shape:
            raise ValueError(f"{name}: checkpoint shape {arrays[name].shape} "
                             f"!= model shape {p.data.shape}")
        p.data = arrays[name].copy()


def build_from_checkpoint(dirpath):
    """Rebuild (model, bank, train_cfg, embed_info) from a saved run."""
    arrays, config = load_checkpoint(dirpath)
    model_cfg = ModelConfig.from_dict(config["model"])
    train_cfg = TrainConfig.from_dict(config.get("train", {}))
    rng = np.random.default_rng(0)
    model = LPNet(model_cfg, rng, disable_mhsa=train_cfg.disable_mhsa)
    bank = model.new_bank(rng)
    restore_params(model.params() + bank.params(), arrays)
    return model, bank, train_cfg, config.get("embed", {"mode": "hash", "dim": 300})


# --------------------------------------------------------------- epoch loop

@dataclass
class FitResult:
    model: LPNet
    bank: object
    metrics: list
    best_epoch: int
    best_val_miou: float
    stopped_early: bool
    config: dict = field(default_factory=dict)


def fit(train_set, cfg: TrainConfig, model_cfg: ModelConfig = None, val_set=None,
        out_dir=None, dump_proposals=False, embed_info=None):
    """Seeded epochs over shuffled batches with early stopping on val mIoU.

    The best-validation parameters are kept and restored at the end; if
    out_dir is given the checkpoint, a JSONL metrics log, and (optionally)
    per-epoch proposal dumps are written there.
    """
    from .evalcli import evaluate  # deferred: evalcli imports this module

    cfg.validate()
    if not train_set:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    if val_set is None:
        if len(train_set) < 2:
            raise ValueError("cannot carve a validation split from one sample")
        order = rng.permutation(len(train_set))
        n_val = max(1, int(round(cfg.val_split * len(train_set))))
        val_set = [train_set[i] for i in order[:n_val]]
        train_set = [train_set[i] for i in order[n_val:]]
    if not train_set or not val_set:
        raise ValueError("empty split after validation carve-out")

    model_cfg = model_cfg or ModelConfig()
    first = train_set[0]
    model_cfg.d_video = first.features.shape[1]
    model_cfg.d_query = first.query_feats.shape[1]
    model_cfg.dropout = cfg.dropout
    model_cfg.validate()

    model = LPNet(model_cfg, rng, disable_mhsa=cfg.disable_mhsa)
    bank = model.new_bank(rng)
    params = model.params() + bank.params()
    adam = Adam(params, lr=cfg.lr)

    config = {"model": model_cfg.to_dict(), "train": cfg.to_dict(),
              "embed": embed_info or {"mode": "hash", "dim": 300}}

    metrics = []
    metrics_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w")
        if dump_proposals:
            from .proposals import write_proposal_csv
            write_proposal_csv(os.path.join(out_dir, "proposals_init.csv"), bank)

    best_snapshot = {name: p.data.copy() for name, p in params}
    best_miou = -np.inf
    best_epoch = -1
    since_best = 0
    stopped_early = False

    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(train_set))
            shuffled = [train_set[i] for i in order]
            losses, kls, regs, sizes = [], [], [], []
            for batch in pad_batch(shuffled, cfg.batch_size):
                report = train_step(model, bank, batch, cfg, adam, rng=rng)
                losses.append(report.loss)
                kls.append(report.l_kl)
                regs.append(report.l_reg)
                sizes.append(len(batch.samples))
            weights = np.asarray(sizes, dtype=np.float64)
            weights /= weights.sum()
            val_report = evaluate(model, bank, val_set)
            row = {"epoch": epoch,
                   "loss": float(np.dot(losses, weights)),
                   "l_kl": float(np.dot(kls, weights)),
                   "l_reg": float(np.dot(regs, weights)),
                   "val_miou": val_report.miou,
                   "val_r1_05": val_report.r1_at[0.5]}
            metrics.append(row)
            if metrics_fh:
                metrics_fh.write(json.dumps(row) + "\n")
                metrics_fh.flush()
            if out_dir and dump_proposals:
                from .proposals import write_proposal_csv
                write_proposal_csv(
                    os.path.join(out_dir, f"proposals_epoch{epoch:03d}.csv"), bank)
            if row["val_miou"] > best_miou:
                best_miou = row["val_miou"]
                best_epoch = epoch
                best_snapshot = {name: p.data.copy() for name, p in params}
                since_best = 0
            else:
                since_best += 1
                if since_best > cfg.patience:
                    stopped_early = True
                    break
    finally:
        if metrics_fh:
            metrics_fh.close()

    for name, p in params:
        p.data = best_snapshot[name].copy()
    if out_dir:
        save_checkpoint(out_dir, params, config)
    return FitResult(model=model, bank=bank, metrics=metrics, best_epoch=best_epoch,
                     best_val_miou=float(best_miou), stopped_early=stopped_early,
                     config=config)
