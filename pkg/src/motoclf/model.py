"""Model assembly, prediction head, loss and checkpoint files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensorcore as tc
from .chargrains import CHAR, DICT_KINDS, GRANULARITIES, EncodedSample, Featurizer
from .fusion import FusionLinear, attention_stream
from .neural import (
    BiLstmParams,
    Conv1dParams,
    EmbeddingTable,
    LstmParams,
    bilstm,
    conv1d_downsample,
    dropout,
    embed,
    window_width,
    xavier_uniform,
)
from .tensorcore import Tape, Tensor

MAGIC = b"MOTO1\n"
META = "META"
PROB_FLOOR = 1e-12


class CompatibilityError(ValueError):
    """Checkpoint, vocabulary or sample do not fit together."""


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    dim: int
    num_classes: int
    vocab_sizes: dict[str, int]
    lengths: dict[str, int]
    pad_ids: dict[str, int] = field(default_factory=dict)
    streams: tuple[str, ...] = DICT_KINDS
    sigmoid_head: bool = True
    dropout: float = 0.5
    downsample_target: int = 18
    downsample_threshold: int = 64
    seed: int = 0
    init: str = "xavier_uniform"

    def __post_init__(self):
        self.streams = tuple(g for g in DICT_KINDS if g in self.streams)
        if self.dim < 2 or self.dim % 2:
            raise ValueError(f"embedding dimension must be even and >= 2, got {self.dim}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        for g in self.granularities:
            if g not in self.vocab_sizes or g not in self.lengths:
                raise ValueError(f"missing vocabulary size or length for {g}")
        self.pad_ids = {g: int(self.pad_ids.get(g, 0)) for g in self.granularities}

    @property
    def hidden(self) -> int:
        return self.dim // 2

    @property
    def granularities(self) -> tuple[str, ...]:
        return (CHAR,) + self.streams

    @property
    def con_width(self) -> int:
        return max(1, len(self.streams)) * self.dim

    def downsampled(self, g: str) -> bool:
        return self.lengths[g] > self.downsample_threshold

    def effective_length(self, g: str) -> int:
        return self.downsample_target if self.downsampled(g) else self.lengths[g]

    def to_meta(self) -> dict[str, str]:
        meta = {
            "D": str(self.dim),
            "H": str(self.hidden),
            "K": str(self.num_classes),
            "seed": str(self.seed),
            "init": self.init,
            "streams": ",".join(self.streams),
            "sigmoid_head": str(int(self.sigmoid_head)),
            "dropout": repr(self.dropout),
            "downsample_target": str(self.downsample_target),
            "downsample_threshold": str(self.downsample_threshold),
        }
        for g in self.granularities:
            meta[f"vocab.{g}"] = str(self.vocab_sizes[g])
            meta[f"length.{g}"] = str(self.lengths[g])
            meta[f"pad.{g}"] = str(self.pad_ids.get(g, 0))
        return meta

    @classmethod
    def from_meta(cls, meta: Mapping[str, str]) -> ModelConfig:
        try:
            streams = tuple(s for s in meta["streams"].split(",") if s)
            grains = (CHAR,) + streams
            return cls(
                dim=int(meta["D"]),
                num_classes=int(meta["K"]),
                vocab_sizes={g: int(meta[f"vocab.{g}"]) for g in grains},
                lengths={g: int(meta[f"length.{g}"]) for g in grains},
                pad_ids={g: int(meta[f"pad.{g}"]) for g in grains},
                streams=streams,
                sigmoid_head=meta["sigmoid_head"] == "1",
                dropout=float(meta["dropout"]),
                downsample_target=int(meta["downsample_target"]),
                downsample_threshold=int(meta["downsample_threshold"]),
                seed=int(meta["seed"]),
                init=meta["init"],
            )
        except KeyError as e:
            raise CheckpointError(f"checkpoint metadata lacks {e.args[0]!r}") from None


def config_for(fz: Featurizer, **options) -> ModelConfig:
    """Model configuration sized to a fitted featurizer's vocabularies and lengths."""
    options.setdefault("streams", tuple(g for g in DICT_KINDS if g in fz.vocabs))
    return ModelConfig(
        num_classes=len(fz.labels),
        vocab_sizes={g: len(fz.vocabs[g]) for g in fz.granularities},
        lengths=dict(fz.targets),
        pad_ids={g: fz.pad_ids(g)[0] for g in fz.granularities},
        **options,
    )


@dataclass
class Bound:
    """Parameters as tensors, grouped by layer."""

    tensors: dict[str, Tensor]
    embeddings: dict[str, EmbeddingTable]
    lstm: BiLstmParams
    fusion: dict[str, FusionLinear]
    conv: dict[str, Conv1dParams]
    head: Tensor


@dataclass
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray
    class_id: int


@dataclass
class ForwardResult:
    logits: Tensor  # [B, K]
    probabilities: Tensor  # [B, K]
    alphas: dict[str, Tensor]  # stream -> [B, l_aux, lc]
    con: Tensor  # [B, con_width], final fused states before dropout


class ModelParams:
    """All learnable arrays of the classifier, keyed by stable names."""

    def __init__(self, config: ModelConfig, arrays: Mapping[str, np.ndarray]):
        self.config = config
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        expected = self.shapes(config)
        if list(self.arrays) != list(expected):
            raise CompatibilityError(
                f"parameter names {list(self.arrays)} do not match the configuration {list(expected)}"
            )
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise CompatibilityError(f"{name}: shape {self.arrays[name].shape}, expected {shape}")

    @staticmethod
    def shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
        D, H = cfg.dim, cfg.hidden
        shapes: dict[str, tuple[int, ...]] = {}
        for g in cfg.granularities:
            shapes[f"emb.{g}"] = (cfg.vocab_sizes[g], D)
        for direction in ("fwd", "bwd"):
            shapes[f"lstm.{direction}.W"] = (D + H, 4 * H)
            shapes[f"lstm.{direction}.b"] = (4 * H,)
        for g in cfg.streams:
            shapes[f"fuse.{g}.W"] = (2 * D, D)
            shapes[f"fuse.{g}.b"] = (D,)
        for g in cfg.granularities:
            if cfg.downsampled(g):
                w = window_width(cfg.lengths[g], cfg.downsample_target)
                shapes[f"conv.{g}.weight"] = (w, D, D)
                shapes[f"conv.{g}.bias"] = (D,)
        shapes["head.W"] = (cfg.con_width, cfg.num_classes)
        return shapes

    @classmethod
    def initialize(cls, cfg: ModelConfig, rng: np.random.Generator | None = None) -> ModelParams:
        """Xavier-uniform weights, zero biases."""
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        arrays = {}
        for name, shape in cls.shapes(cfg).items():
            if name.endswith((".b", ".bias")):
                arrays[name] = np.zeros(shape)
            elif name.startswith("conv."):
                w, D, _ = shape
                arrays[name] = xavier_uniform(rng, shape, fan_in=w * D, fan_out=D)
            else:
                arrays[name] = xavier_uniform(rng, shape)
        return cls(cfg, arrays)

    def copy(self) -> ModelParams:
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def bind(self, tape: Tape | None = None) -> Bound:
        """Wrap the arrays as tape leaves (training) or constants (inference)."""
        if tape is None:
            t = {k: Tensor(v) for k, v in self.arrays.items()}
        else:
            t = {k: tape.leaf(v) for k, v in self.arrays.items()}
        return assemble(self.config, t)


def assemble(cfg: ModelConfig, t: Mapping[str, Tensor]) -> Bound:
    """Group named parameter tensors into the layer holders the forward pass uses."""
    return Bound(
        tensors=dict(t),
        embeddings={g: EmbeddingTable(g, t[f"emb.{g}"]) for g in cfg.granularities},
        lstm=BiLstmParams(
            LstmParams(t["lstm.fwd.W"], t["lstm.fwd.b"]),
            LstmParams(t["lstm.bwd.W"], t["lstm.bwd.b"]),
        ),
        fusion={g: FusionLinear(t[f"fuse.{g}.W"], t[f"fuse.{g}.b"]) for g in cfg.streams},
        conv={
            g: Conv1dParams(t[f"conv.{g}.weight"], t[f"conv.{g}.bias"])
            for g in cfg.granularities
            if cfg.downsampled(g)
        },
        head=t["head.W"],
    )


def _ids(samples: Sequence[EncodedSample], g: str, cfg: ModelConfig) -> np.ndarray:
    rows = [s.ids(g) for s in samples]
    for r in rows:
        if len(r) != cfg.lengths[g]:
            raise CompatibilityError(f"{g} stream has length {len(r)}, model expects {cfg.lengths[g]}")
    ids = np.array(rows, dtype=np.int64).reshape(len(rows), cfg.lengths[g])
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_sizes[g]):
        raise CompatibilityError(f"{g} id outside the model vocabulary of {cfg.vocab_sizes[g]}")
    return ids


def embed_stream(samples: Sequence[EncodedSample], g: str, bound: Bound, cfg: ModelConfig) -> Tensor:
    table = bound.embeddings[g]
    E = embed(_ids(samples, g, cfg), table)
    if cfg.downsampled(g):
        pad_row = tc.take(table.weight, cfg.pad_ids.get(g, 0), axis=0)
        E = conv1d_downsample(E, bound.conv[g], cfg.downsample_target, pad_row)
    return E


def head(con: Tensor, W: Tensor, use_sigmoid: bool = True) -> tuple[Tensor, Tensor]:
    """Logits ``sigmoid(con W)`` (or ``con W``) and their softmax."""
    logits = tc.matmul(con, W)
    if use_sigmoid:
        logits = tc.sigmoid(logits)
    return logits, tc.softmax(logits, axis=-1)


def forward_batch(
    samples: Sequence[EncodedSample],
    bound: Bound,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardResult:
    if not samples:
        raise ValueError("empty batch")
    if training and cfg.dropout > 0 and rng is None:
        raise ValueError("training with dropout needs an rng")

    def reg(x: Tensor) -> Tensor:
        return dropout(x, cfg.dropout, training, rng)

    e_c = embed_stream(samples, CHAR, bound, cfg)
    y_c = reg(bilstm(e_c, bound.lstm))
    last = e_c.shape[1] - 1
    finals, alphas = [], {}
    for g in cfg.streams:
        out = attention_stream(
            e_c, embed_stream(samples, g, bound, cfg), bound.lstm, bound.fusion[g], y_c=y_c, regularize=reg
        )
        finals.append(tc.take(out.fused, last, axis=1))
        alphas[g] = out.alpha
    if not finals:
        finals = [tc.take(y_c, last, axis=1)]
    con = tc.concat(finals, axis=-1)
    logits, probs = head(reg(con), bound.head, cfg.sigmoid_head)
    return ForwardResult(logits, probs, alphas, con)


def forward(
    sample: EncodedSample,
    params: ModelParams,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Prediction | tuple[Prediction, Tape, Tensor]:
    """Single-sample pass.  In ``train`` mode also returns the tape and the
    probability tensor recorded on it."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    tape = Tape() if mode == "train" else None
    res = forward_batch([sample], params.bind(tape), params.config, mode == "train", rng)
    pred = Prediction(res.logits.data[0].copy(), res.probabilities.data[0].copy(), predict(res.probabilities.data[0]))
    if tape is None:
        return pred
    return pred, tape, res.probabilities


def loss(probabilities: Tensor, gold) -> Tensor:
    """Mean of ``-log p_gold`` with p clamped at 1e-12."""
    probs = probabilities if probabilities.ndim == 2 else tc.reshape(probabilities, (1,) + probabilities.shape)
    gold = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    K = probs.shape[1]
    if gold.shape != (probs.shape[0],):
        raise tc.ShapeError(f"loss: {gold.shape[0]} labels for {probs.shape[0]} rows")
    if ((gold < 0) | (gold >= K)).any():
        raise IndexError(f"gold class outside [0, {K})")
    picked = tc.clamp_min(tc.pick(probs, gold), PROB_FLOOR)
    return tc.scale(tc.mean(tc.log(picked)), -1.0)


def predict(probabilities) -> int:
    """Index of the largest probability; the lowest index wins ties."""
    return int(np.argmax(np.asarray(probabilities)))


def predict_batch(samples: Sequence[EncodedSample], params: ModelParams, batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities for many samples, ``[N, K]``."""
    bound = params.bind()
    out = []
    for i in range(0, len(samples), batch_size):
        out.append(forward_batch(samples[i : i + batch_size], bound, params.config).probabilities.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.config.num_classes))


# -- checkpoint files ---------------------------------------------------------


def _u64(n: int) -> bytes:
    return struct.pack("<Q", n)


def checkpoint_bytes(tensors: Mapping[str, np.ndarray], meta: Mapping[str, str]) -> bytes:
    parts = [MAGIC]
    for name, arr in tensors.items():
        if name == META:
            raise CheckpointError("tensor name META is reserved")
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts += [_u64(len(raw)), raw, _u64(arr.ndim)]
        parts += [_u64(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr).tobytes())
    lines = []
    for k, v in meta.items():
        if "=" in k or "\n" in k or "\n" in str(v):
            raise CheckpointError(f"metadata entry {k!r} cannot be stored as a key=value line")
        lines.append(f"{k}={v}\n")
    text = "".join(lines).encode("utf-8")
    parts += [_u64(len(META)), META.encode(), _u64(len(text)), text]
    return b"".join(parts)


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, str]) -> None:
    Path(path).write_bytes(checkpoint_bytes(tensors, meta))


def parse_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)

    def u64() -> int:
        nonlocal pos
        if pos + 8 > len(blob):
            raise CheckpointError("truncated checkpoint")
        (n,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        return n

    def take_bytes(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        out = blob[pos : pos + n]
        pos += n
        return out

    tensors: dict[str, np.ndarray] = {}
    while True:
        name = take_bytes(u64()).decode("utf-8")
        if name == META:
            text = take_bytes(u64()).decode("utf-8")
            break
        rank = u64()
        shape = tuple(u64() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take_bytes(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(blob):
        raise CheckpointError("trailing bytes after META section")
    meta = {}
    for line in text.splitlines():
        k, sep, v = line.partition("=")
        if not sep:
            raise CheckpointError(f"bad metadata line {line!r}")
        meta[k] = v
    return tensors, meta


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return parse_checkpoint(Path(path).read_bytes())


def save_model(path, params: ModelParams, extra_meta: Mapping[str, str] | None = None) -> None:
    meta = params.config.to_meta()
    for k, v in (extra_meta or {}).items():
        meta.setdefault(k, str(v))
    save_checkpoint(path, params.arrays, meta)


def load_model(path) -> tuple[ModelParams, dict[str, str]]:
    tensors, meta = load_checkpoint(path)
    return ModelParams(ModelConfig.from_meta(meta), tensors), meta


__all__ = [
    "GRANULARITIES",
    "CompatibilityError",
    "CheckpointError",
    "ModelConfig",
    "ModelParams",
    "config_for",
    "Bound",
    "assemble",
    "Prediction",
    "ForwardResult",
    "forward",
    "forward_batch",
    "head",
    "loss",
    "predict",
    "predict_batch",
    "save_checkpoint",
    "load_checkpoint",
    "save_model",
    "load_model",
]
