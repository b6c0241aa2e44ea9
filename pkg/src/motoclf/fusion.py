"""Cross-granularity attention: auxiliary BiLSTM states pooled per character.

Shapes below are written unbatched; every function also accepts a leading
batch axis.

    relevance     re[i, j]    = Y_aux[i] . Y_c[j]                 [l_aux, lc]
    attn_weights  alpha[:, j] = softmax over i of re[:, j]
    pool          att[j]      = sum_i alpha[i, j] * Y_aux[i]       [lc, D]
    fuse          E'_c[j]     = [att[j], E_c[j]] W + b             [lc, D]

A stream runs the shared BiLSTM twice: first over the raw character and
auxiliary embeddings to get the attention queries and keys, then over the
fused character inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from . import tensorcore as tc
from .neural import BiLstmParams, bilstm, linear
from .tensorcore import Tensor


@dataclass
class FusionLinear:
    W: Tensor  # [2D, D]
    b: Tensor  # [D]


@dataclass
class StreamOutput:
    fused: Tensor  # [lc, D] states of the second pass
    alpha: Tensor  # [l_aux, lc]


def _swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tc.transpose(x, axes)


def _check_pair(a: Tensor, b: Tensor, what: str) -> None:
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise tc.ShapeError(f"{what}: incompatible shapes {a.shape} and {b.shape}")


def relevance(y_aux: Tensor, y_c: Tensor) -> Tensor:
    _check_pair(y_aux, y_c, "relevance")
    return tc.matmul(y_aux, _swap_last(y_c))


def attn_weights(re: Tensor) -> Tensor:
    """Normalise each character column over the auxiliary axis."""
    return tc.softmax(re, axis=-2)


def pool(alpha: Tensor, y_aux: Tensor) -> Tensor:
    if alpha.shape[-2] != y_aux.shape[-2]:
        raise tc.ShapeError(f"pool: weights {alpha.shape} vs states {y_aux.shape}")
    return tc.matmul(_swap_last(alpha), y_aux)


def fuse(att: Tensor, e_c: Tensor, fl: FusionLinear) -> Tensor:
    if att.shape != e_c.shape:
        raise tc.ShapeError(f"fuse: attention {att.shape} vs embeddings {e_c.shape}")
    return linear(tc.concat([att, e_c], axis=-1), fl.W, fl.b)


def attention_stream(
    e_c: Tensor,
    e_aux: Tensor,
    shared: BiLstmParams,
    fl: FusionLinear,
    *,
    y_c: Tensor | None = None,
    regularize: Callable[[Tensor], Tensor] | None = None,
) -> StreamOutput:
    """Fuse one auxiliary granularity into the character stream.

    ``y_c`` may carry an already computed first-pass character encoding so
    several streams can share it.  ``regularize`` (dropout) is applied to
    every BiLSTM output.
    """
    reg = regularize or (lambda x: x)
    if y_c is None:
        y_c = reg(bilstm(e_c, shared))
    y_aux = reg(bilstm(e_aux, shared))
    alpha = attn_weights(relevance(y_aux, y_c))
    fused_in = fuse(pool(alpha, y_aux), e_c, fl)
    return StreamOutput(reg(bilstm(fused_in, shared)), alpha)
