"""Small numpy building blocks: layer norm, multi-head attention, transformer block.

Everything here is deterministic given an explicit ``numpy.random.Generator``
and operates on float64 arrays. There is no training; weights are sampled
once at construction via QR-orthogonalized Gaussians.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import erf

from .errors import ShapeError

LN_EPS = 1e-8


def orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Orthogonal-ish (rows x cols) matrix from QR of a seeded Gaussian."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q)


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance. No affine params."""
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class AttentionWeights(NamedTuple):
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @staticmethod
    def create(rng: np.random.Generator, dim: int, out_scale: float = 1.0) -> "AttentionWeights":
        return AttentionWeights(
            wq=orthogonal(rng, dim, dim),
            wk=orthogonal(rng, dim, dim),
            wv=orthogonal(rng, dim, dim),
            wo=orthogonal(rng, dim, dim) * out_scale,
        )


class AttnResult(NamedTuple):
    output: np.ndarray  # (Nq, C) after the output projection
    probs: np.ndarray  # (heads, Nq, Nk) softmax rows
    context: np.ndarray  # (Nq, C) pre-projection concatenated head outputs


def multi_head_attention(
    queries: np.ndarray,
    keys_values: np.ndarray,
    weights: AttentionWeights,
    num_heads: int,
    trace: dict | None = None,
) -> AttnResult:
    """Vanilla multi-head attention; queries attend over keys_values.

    ``trace`` (if given) collects the softmaxed attention rows under
    ``trace["attention"]`` so invariants can be checked from outside.
    """
    nq, dim = queries.shape
    nk, dim_kv = keys_values.shape
    if dim != dim_kv:
        raise ShapeError(f"query dim {dim} != key/value dim {dim_kv}")
    if dim % num_heads != 0:
        raise ShapeError(f"dim {dim} not divisible by {num_heads} heads")
    dh = dim // num_heads

    q = (queries @ weights.wq).reshape(nq, num_heads, dh).transpose(1, 0, 2)
    k = (keys_values @ weights.wk).reshape(nk, num_heads, dh).transpose(1, 0, 2)
    v = (keys_values @ weights.wv).reshape(nk, num_heads, dh).transpose(1, 0, 2)

    scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
    probs = softmax(scores, axis=-1)
    ctx = (probs @ v).transpose(1, 0, 2).reshape(nq, dim)
    out = ctx @ weights.wo

    if trace is not None:
        trace.setdefault("attention", []).append(probs)
    return AttnResult(out, probs, ctx)


class TransformerBlock:
    """Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).

    ``out_scale`` multiplies the attention output projection and the second
    MLP matrix; at 0 the block is exactly the identity.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        dim: int,
        num_heads: int,
        hidden_mult: int = 4,
        out_scale: float = 1.0,
    ):
        self.dim = dim
        self.num_heads = num_heads
        self.attn = AttentionWeights.create(rng, dim, out_scale=out_scale)
        hidden = hidden_mult * dim
        self.w1 = orthogonal(rng, dim, hidden)
        self.w2 = orthogonal(rng, hidden, dim) * out_scale

    def __call__(self, x: np.ndarray, trace: dict | None = None) -> np.ndarray:
        h = layer_norm(x)
        if trace is not None:
            trace.setdefault("layernorm", []).append(h)
        x = x + multi_head_attention(h, h, self.attn, self.num_heads, trace).output
        h = layer_norm(x)
        if trace is not None:
            trace.setdefault("layernorm", []).append(h)
        return x + gelu(h @ self.w1) @ self.w2
