"""Datasets: annotation parsing, feature files, embeddings, synthesis.

Real data comes in as annotation files (two dialects) plus per-video
feature files; the synthetic generator builds statistically similar
datasets from scratch so training and the convergence experiments run
with zero external assets.  Word embeddings default to deterministic
hash vectors, with a text-format pretrained loader as the opt-in path.

Modules here log through ``logging`` and never print.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger("lpnet.data")


class LPDataError(Exception):
    """Malformed annotation or feature data."""


@dataclass
class Sample:
    video_id: str
    tokens: list
    gt_seconds: tuple
    duration: float
    gt_norm: tuple
    features: np.ndarray = None     # (T, d_v), attached from the feature store
    query_feats: np.ndarray = None  # (M, dim), attached from an EmbeddingTable

    def validate(self):
        s, e = self.gt_seconds
        if not 0.0 <= s <= e <= self.duration:
            raise LPDataError(
                f"{self.video_id}: interval ({s}, {e}) outside [0, {self.duration}]")
        if not self.tokens:
            raise LPDataError(f"{self.video_id}: empty token list")
        if self.features is not None and self.features.shape[0] < 2:
            raise LPDataError(f"{self.video_id}: need at least 2 frames")
        return self


# ------------------------------------------------------------- annotations

def load_durations(path):
    """Lines of `<video_id> <seconds>` -> dict."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise LPDataError(f"{path}:{lineno}: expected `<video_id> <seconds>`")
            out[parts[0]] = float(parts[1])
    return out


def load_annotations_charades(path, durations=None):
    """Parse lines of `<video_id> <start> <end>##<sentence>`.

    durations: optional dict video_id -> seconds.  Without it the
    moment's own end time stands in for the video duration, which pins
    the normalized end of such samples at 1.0 -- fine for parsing tests,
    not for training; supply durations for that.

    Malformed lines raise with their line number; inverted intervals are
    skipped with a counted warning.
    """
    stubs = []
    skipped = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "##" not in line:
                raise LPDataError(f"{path}:{lineno}: missing `##` separator")
            left, sentence = line.split("##", 1)
            parts = left.split()
            if len(parts) != 3:
                raise LPDataError(
                    f"{path}:{lineno}: expected `<video_id> <start> <end>` before `##`")
            vid = parts[0]
            try:
                start, end = float(parts[1]), float(parts[2])
            except ValueError:
                raise LPDataError(f"{path}:{lineno}: non-numeric timestamp") from None
            tokens = sentence.lower().split()
            if not tokens:
                raise LPDataError(f"{path}:{lineno}: empty sentence")
            if start > end or start < 0:
                skipped += 1
                logger.warning("%s:%d: invalid interval (%s, %s), skipped",
                               path, lineno, parts[1], parts[2])
                continue
            duration = durations.get(vid) if durations else None
            if duration is None:
                duration = end if end > 0 else 1.0
            if end > duration:
                logger.warning("%s:%d: end %.3f beyond duration %.3f, clamped",
                               path, lineno, end, duration)
                end = duration
                if start > end:
                    skipped += 1
                    continue
            stubs.append(Sample(video_id=vid, tokens=tokens,
                                gt_seconds=(start, end), duration=duration,
                                gt_norm=(start / duration, end / duration)).validate())
    if skipped:
        logger.warning("%s: skipped %d invalid interval(s)", path, skipped)
    return stubs


def load_annotations_activitynet(path):
    """JSON mapping video id -> {duration, timestamps: [[s,e],...], sentences}."""
    with open(path) as fh:
        table = json.load(fh)
    stubs = []
    clamped = 0
    skipped = 0
    for vid, entry in table.items():
        duration = float(entry["duration"])
        stamps = entry["timestamps"]
        sentences = entry["sentences"]
        if len(stamps) != len(sentences):
            raise LPDataError(
                f"{vid}: {len(stamps)} timestamps vs {len(sentences)} sentences")
        for (start, end), sentence in zip(stamps, sentences):
            lo = min(float(start), float(end))
            hi = max(float(start), float(end))
            if lo < 0 or hi > duration:
                clamped += 1
                logger.warning("%s: timestamp (%.3f, %.3f) clamped to [0, %.3f]",
                               vid, lo, hi, duration)
            start = min(max(lo, 0.0), duration)
            end = min(max(hi, 0.0), duration)
            tokens = sentence.lower().split()
            if not tokens or end <= start:
                skipped += 1
                logger.warning("%s: unusable pair (%.3f, %.3f) %r, skipped",
                               vid, start, end, sentence)
                continue
            stubs.append(Sample(video_id=vid, tokens=tokens,
                                gt_seconds=(start, end), duration=duration,
                                gt_norm=(start / duration, end / duration)).validate())
    if clamped or skipped:
        logger.warning("%s: clamped %d, skipped %d", path, clamped, skipped)
    return stubs


# ------------------------------------------------------------ feature files

FEATURE_MAGIC = b"LPFT"
FEATURE_SUFFIX = ".lpft"


def feature_store_write(dirpath, video_id, feats):
    feats = np.asarray(feats, dtype=np.float32)
    if feats.ndim != 2:
        raise LPDataError(f"{video_id}: features must be 2-D, got {feats.shape}")
    os.makedirs(dirpath, exist_ok=True)
    path = os.path.join(dirpath, video_id + FEATURE_SUFFIX)
    T, d = feats.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", T, d))
        fh.write(feats.astype("<f4").tobytes(order="C"))
    return path


def feature_store_read(dirpath, video_id):
    path = os.path.join(dirpath, video_id + FEATURE_SUFFIX)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no feature file for video id {video_id!r} at {path}")
    return feature_file_read(path)


def feature_file_read(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURE_MAGIC:
        raise LPDataError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise LPDataError(f"{path}: truncated header")
    T, d = struct.unpack("<II", blob[4:12])
    expect = 12 + 4 * T * d
    if len(blob) != expect:
        raise LPDataError(f"{path}: expected {expect} bytes, found {len(blob)}")
    feats = np.frombuffer(blob, dtype="<f4", offset=12).reshape(T, d)
    return feats.astype(np.float64)


def subsample_frames(feats, max_frames):
    """Uniform temporal subsampling down to max_frames; shorter passes through."""
    T = feats.shape[0]
    if T <= max_frames:
        return feats
    idx = np.round(np.linspace(0, T - 1, max_frames)).astype(np.int64)
    return feats[idx]


def attach_features(stubs, feature_dir, max_frames=64):
    out = []
    for stub in stubs:
        feats = feature_store_read(feature_dir, stub.video_id)
        out.append(replace(stub, features=subsample_frames(feats, max_frames)).validate())
    return out


# --------------------------------------------------------------- embeddings

def _stable_unit_vector(key, dim, salt=b"emb"):
    """Deterministic pseudo-random unit vector for a string, stable across
    processes (unlike builtin hash, which is salted per run)."""
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8, key=salt).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class EmbeddingTable:
    """Frozen word vectors: hash mode needs no assets, file mode reads the
    usual text format (word then dim floats per line); OOV words map to zero."""

    def __init__(self, mode="hash", dim=300, vocab=None):
        if mode not in ("hash", "file"):
            raise ValueError(f"unknown embedding mode {mode!r}")
        self.mode = mode
        self.dim = dim
        self.vocab = vocab or {}

    @classmethod
    def from_file(cls, path):
        vocab = {}
        dim = None
        try:
            with open(path) as fh:
                for lineno, line in enumerate(fh, start=1):
                    parts = line.rstrip("\n").split(" ")
                    if len(parts) < 2:
                        continue
                    vec = np.asarray([float(x) for x in parts[1:]], dtype=np.float64)
                    if dim is None:
                        dim = vec.size
                    elif vec.size != dim:
                        raise LPDataError(f"{path}:{lineno}: dim {vec.size} != {dim}")
                    vocab[parts[0]] = vec
        except OSError as exc:
            raise LPDataError(f"cannot read embeddings from {path}: {exc}") from exc
        if not vocab:
            raise LPDataError(f"{path}: no embedding vectors found")
        return cls(mode="file", dim=dim, vocab=vocab)

    def lookup(self, token):
        if self.mode == "hash":
            return _stable_unit_vector(token, self.dim)
        return self.vocab.get(token, np.zeros(self.dim))


def embed(tokens, table: EmbeddingTable):
    """(M, dim) matrix of frozen word vectors."""
    if not tokens:
        raise LPDataError("cannot embed an empty token list")
    return np.stack([table.lookup(t) for t in tokens])


def attach_queries(samples, table: EmbeddingTable):
    return [replace(s, query_feats=embed(s.tokens, table)) for s in samples]


# ---------------------------------------------------------------- synthesis

@dataclass
class SynthSpec:
    num_samples: int = 200
    T: int = 48
    d_v: int = 64
    vocab_size: int = 50
    # each mode: (center, length, center_jitter, length_jitter, weight)
    modes: list = field(default_factory=lambda: [(0.5, 0.27, 0.05, 0.05, 1.0)])
    signal_strength: float = 3.0
    duration: float = 30.0
    seed: int = 0
    min_tokens: int = 3
    max_tokens: int = 8

    def validate(self):
        if self.num_samples < 1 or self.T < 2 or self.d_v < 1 or self.vocab_size < 1:
            raise ValueError("degenerate synthetic spec")
        weights = [m[4] for m in self.modes]
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"mode weights sum to {sum(weights)}, expected 1")
        if self.min_tokens < 1 or self.max_tokens < self.min_tokens:
            raise ValueError("bad token count range")
        return self


def _token_pattern(tokens, d_v):
    vecs = [_stable_unit_vector(t, d_v, salt=b"pat") for t in tokens]
    v = np.mean(vecs, axis=0)
    return v / np.linalg.norm(v)


def synth_generate(spec: SynthSpec):
    """Background noise plus a query-derived pattern inside the gt span.

    Everything is drawn from one seeded generator, so a spec maps to
    exactly one dataset.  signal_strength 0 leaves the features carrying
    no information about the interval.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    weights = np.asarray([m[4] for m in spec.modes])
    weights = weights / weights.sum()
    samples = []
    for i in range(spec.num_samples):
        mode = spec.modes[rng.choice(len(spec.modes), p=weights)]
        mu_c, mu_w, jc, jw, _ = mode
        c = rng.normal(mu_c, jc)
        w = np.clip(rng.normal(mu_w, jw), 0.02, 1.0)
        s = max(0.0, c - w / 2.0)
        e = min(1.0, c + w / 2.0)
        if e - s < 0.02:
            e = min(1.0, s + 0.02)
            s = max(0.0, e - 0.02)
        n_tok = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        tokens = [f"w{int(rng.integers(0, spec.vocab_size))}" for _ in range(n_tok)]
        feats = rng.standard_normal((spec.T, spec.d_v))
        if spec.signal_strength != 0.0:
            t0 = int(np.floor(s * (spec.T - 1)))
            t1 = int(np.ceil(e * (spec.T - 1)))
            feats[t0:t1 + 1] += spec.signal_strength * _token_pattern(tokens, spec.d_v)
        samples.append(Sample(
            video_id=f"synth{i:05d}", tokens=tokens,
            gt_seconds=(s * spec.duration, e * spec.duration),
            duration=spec.duration, gt_norm=(s, e),
            features=feats).validate())
    return samples


def synth_materialize(spec: SynthSpec, out_dir):
    """Write a generated dataset as real files: annotations in the
    `<video_id> <start> <end>##<sentence>` grammar, a durations table,
    and one feature file per video."""
    samples = synth_generate(spec)
    os.makedirs(out_dir, exist_ok=True)
    ann_path = os.path.join(out_dir, "annotations.txt")
    dur_path = os.path.join(out_dir, "durations.txt")
    feat_dir = os.path.join(out_dir, "features")
    with open(ann_path, "w") as ann, open(dur_path, "w") as dur:
        for s in samples:
            ann.write(f"{s.video_id} {s.gt_seconds[0]:.4f} {s.gt_seconds[1]:.4f}"
                      f"##{' '.join(s.tokens)}\n")
            dur.write(f"{s.video_id} {s.duration:.4f}\n")
            feature_store_write(feat_dir, s.video_id, s.features)
    return ann_path, dur_path, feat_dir


# ----------------------------------------------------------------- batching

@dataclass
class Batch:
    samples: list
    video: np.ndarray        # (B, T_max, d_v), zero-padded
    video_mask: np.ndarray   # (B, T_max) additive, 0 valid / -1e9 padded
    query: np.ndarray        # (B, M_max, dim), zero-padded
    query_mask: np.ndarray   # (B, M_max) additive
    video_lengths: list
    query_lengths: list


PAD_NEG = -1e9


def pad_batch(samples, batch_size):
    """Chunk samples into batches, zero-padding to each batch's max lengths
    and carrying additive masks for the padded positions."""
    batches = []
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        t_max = max(s.features.shape[0] for s in chunk)
        m_max = max(s.query_feats.shape[0] for s in chunk)
        d_v = chunk[0].features.shape[1]
        dim = chunk[0].query_feats.shape[1]
        B = len(chunk)
        video = np.zeros((B, t_max, d_v))
        vmask = np.full((B, t_max), PAD_NEG)
        query = np.zeros((B, m_max, dim))
        qmask = np.full((B, m_max), PAD_NEG)
        for i, s in enumerate(chunk):
            T, M = s.features.shape[0], s.query_feats.shape[0]
            video[i, :T] = s.features
            vmask[i, :T] = 0.0
            query[i, :M] = s.query_feats
            qmask[i, :M] = 0.0
        batches.append(Batch(samples=chunk, video=video, video_mask=vmask,
                             query=query, query_mask=qmask,
                             video_lengths=[s.features.shape[0] for s in chunk],
                             query_lengths=[s.query_feats.shape[0] for s in chunk]))
    return batches


# ------------------------------------------------------------- dataset spec

def _parse_modes(text):
    """`c:w:jc:jw:weight` tuples separated by commas."""
    modes = []
    for part in text.split(","):
        nums = [float(x) for x in part.strip().split(":")]
        if len(nums) != 5:
            raise ValueError(f"mode needs 5 fields c:w:jc:jw:weight, got {part!r}")
        modes.append(tuple(nums))
    return modes


def synth_spec_from_dict(cfg):
    spec = SynthSpec()
    if "modes" in cfg and isinstance(cfg["modes"], str):
        cfg = dict(cfg)
        cfg["modes"] = _parse_modes(cfg["modes"])
    known = set(SynthSpec.__dataclass_fields__)
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown synth keys: {sorted(unknown)}")
    for k, v in cfg.items():
        setattr(spec, k, v)
    return spec.validate()


def load_dataset(cfg, max_frames=64):
    """Build fully attached samples plus the embedding table from a flat
    dataset description (the CLI's `--data` config contents)."""
    cfg = dict(cfg)
    fmt = cfg.pop("format", "charades")
    emb = cfg.pop("embeddings", "hash")
    dim = int(cfg.pop("embed_dim", 300))
    table = EmbeddingTable(mode="hash", dim=dim) if emb == "hash" \
        else EmbeddingTable.from_file(emb)
    if fmt == "synth":
        samples = synth_generate(synth_spec_from_dict(cfg))
    elif fmt in ("charades", "activitynet"):
        ann = cfg.pop("annotations", None)
        feats = cfg.pop("features", None)
        if not ann or not feats:
            raise ValueError(f"{fmt} dataset needs `annotations` and `features` paths")
        durations = cfg.pop("durations", None)
        if fmt == "charades":
            dur_map = load_durations(durations) if durations else None
            stubs = load_annotations_charades(ann, durations=dur_map)
        else:
            stubs = load_annotations_activitynet(ann)
        if cfg:
            raise ValueError(f"unknown dataset keys: {sorted(cfg)}")
        samples = attach_features(stubs, feats, max_frames=max_frames)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    return attach_queries(samples, table), table
