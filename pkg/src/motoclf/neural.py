"""Layers built on :mod:`motoclf.tensorcore`.

Sequence layers accept ``[L, D]`` or batched ``[B, L, D]`` inputs.  Parameter
holders carry tensors; whether those are tape leaves or constants decides if
gradients are recorded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor


@dataclass
class EmbeddingTable:
    granularity: str
    weight: Tensor  # [|V|, D]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class LstmParams:
    W: Tensor  # [(D_in + H), 4H], gate blocks ordered input, forget, output, candidate
    b: Tensor  # [4H]

    @property
    def hidden(self) -> int:
        return self.b.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[0] - self.hidden


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams


@dataclass
class Conv1dParams:
    weight: Tensor  # [w, D, D]
    bias: Tensor  # [D]

    @property
    def width(self) -> int:
        return self.weight.shape[0]


# -- initialisation -----------------------------------------------------------


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int | None = None, fan_out: int | None = None):
    fan_in = shape[-2] if fan_in is None else fan_in
    fan_out = shape[-1] if fan_out is None else fan_out
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def window_width(length: int, target: int) -> int:
    if target < 1:
        raise ValueError(f"downsample target must be >= 1, got {target}")
    return max(1, -(-length // target))


@dataclass
class PretrainedReport:
    hits: int
    misses: int
    unused: int  # vectors in the file whose token is not in the vocabulary


def load_pretrained(path, itos, matrix: np.ndarray) -> tuple[np.ndarray, PretrainedReport]:
    """Overwrite rows of ``matrix`` with vectors from a word2vec text file.

    The file starts with ``count dim``; each further line is a token followed
    by ``dim`` floats.  Rows of tokens absent from the file keep their values.
    """
    out = np.array(matrix, dtype=np.float64)
    index = {tok: i for i, tok in enumerate(itos)}
    found = set()
    unused = seen = 0
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}:1: expected '<count> <dim>' header")
        count, dim = int(header[0]), int(header[1])
        if dim != out.shape[1]:
            raise ValueError(f"{path}: vectors have dimension {dim}, model uses {out.shape[1]}")
        for lineno, line in enumerate(f, 2):
            seen += 1
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected a token and {dim} values")
            tok = parts[0]
            if tok not in index:
                unused += 1
                continue
            if tok in found:
                continue
            out[index[tok]] = np.array(parts[1:], dtype=np.float64)
            found.add(tok)
        if seen != count:
            raise ValueError(f"{path}: header announces {count} vectors, file has {seen}")
    return out, PretrainedReport(len(found), len(itos) - len(found), unused)


# -- layers -------------------------------------------------------------------


def embed(ids, table: EmbeddingTable) -> Tensor:
    return tc.gather_rows(table.weight, ids)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x W (+ b)`` for ``x`` of shape ``[n]`` or ``[..., n]``."""
    if x.shape[-1] != W.shape[0]:
        raise tc.ShapeError(f"linear: input width {x.shape[-1]} vs weight {W.shape}")
    lead = x.shape[:-1]
    flat = tc.reshape(x, (math.prod(lead), x.shape[-1]))
    out = tc.matmul(flat, W)
    if b is not None:
        out = tc.add_bias(out, b)
    return tc.reshape(out, lead + (W.shape[1],))


def lstm_step(e_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM update; inputs are ``[D_in]``/``[H]`` vectors or ``[B, ...]`` rows."""
    H = p.hidden
    if e_t.shape[-1] != p.input_dim or h_prev.shape[-1] != H or c_prev.shape != h_prev.shape:
        raise tc.ShapeError(
            f"lstm_step: input {e_t.shape}, h {h_prev.shape}, c {c_prev.shape} vs W {p.W.shape}"
        )
    z = linear(tc.concat([e_t, h_prev], axis=-1), p.W, p.b)
    gates = tc.sigmoid(tc.slice_axis(z, 0, 3 * H))
    i = tc.slice_axis(gates, 0, H)
    f = tc.slice_axis(gates, H, 2 * H)
    o = tc.slice_axis(gates, 2 * H, 3 * H)
    candidate = tc.tanh(tc.slice_axis(z, 3 * H, 4 * H))
    c = tc.add(tc.multiply(f, c_prev), tc.multiply(i, candidate))
    h = tc.multiply(o, tc.tanh(c))
    return h, c


def _run(E: Tensor, p: LstmParams, reverse: bool) -> list[Tensor]:
    time_axis = E.ndim - 2
    L = E.shape[time_axis]
    state_shape = E.shape[:-2] + (p.hidden,)
    h = c = tc.constant(np.zeros(state_shape))
    out: list[Tensor | None] = [None] * L
    order = range(L - 1, -1, -1) if reverse else range(L)
    for t in order:
        h, c = lstm_step(tc.take(E, t, axis=time_axis), h, c, p)
        out[t] = h
    return out


def bilstm(E: Tensor, p: BiLstmParams) -> Tensor:
    """Per-position concatenation of forward and backward hidden states."""
    if E.ndim not in (2, 3) or E.shape[-2] < 1:
        raise tc.ShapeError(f"bilstm needs a non-empty [L, D] or [B, L, D] input, got {E.shape}")
    time_axis = E.ndim - 2
    fwd = tc.stack(_run(E, p.forward, reverse=False), axis=time_axis)
    bwd = tc.stack(_run(E, p.backward, reverse=True), axis=time_axis)
    return tc.concat([fwd, bwd], axis=-1)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the exact identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return tc.multiply(x, tc.constant(keep / (1.0 - rate)))


def conv1d_downsample(E: Tensor, p: Conv1dParams, target: int, pad_row: Tensor) -> Tensor:
    """Shrink ``L`` positions to exactly ``target`` with non-overlapping windows.

    The window width is ``ceil(L / target)``; the sequence is right-padded with
    ``pad_row`` up to ``width * target`` positions.
    """
    if target < 1:
        raise ValueError(f"downsample target must be >= 1, got {target}")
    batched = E.ndim == 3
    if not batched:
        E = tc.reshape(E, (1,) + E.shape)
    B, L, D = E.shape
    if L < 1:
        raise tc.ShapeError("conv1d_downsample of an empty sequence")
    w = window_width(L, target)
    if p.width != w:
        raise tc.ShapeError(f"kernel width {p.width} does not match ceil({L}/{target}) = {w}")
    missing = w * target - L
    if missing:
        pad = tc.stack([pad_row] * (B * missing), axis=0)
        E = tc.concat([E, tc.reshape(pad, (B, missing, D))], axis=1)
    windows = tc.reshape(E, (B * target, w * D))
    out = tc.add_bias(tc.matmul(windows, tc.reshape(p.weight, (w * D, D))), p.bias)
    out = tc.reshape(out, (B, target, D))
    return out if batched else tc.reshape(out, (target, D))
