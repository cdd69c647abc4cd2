"""Query-video similarity: global matching and token-wise fine-grained matching.

Two families:

* global: cosine between the query's global embedding and the mean of the
  video's frame embeddings (the mean is not re-normalized beforehand; cosine
  normalizes internally).
* fine-grained: per-token maximum similarity against the opposite modality,
  pooled uniformly or by a learned softmax weighting, symmetrized over the
  text-to-video and video-to-text directions.

All pairwise functions are built from the differentiable tensor ops, so the
same code path serves inference (no tape) and training (active tape). The
batched matrix builder has a vectorized route for global matching whose
per-entry arithmetic mirrors the pairwise ops operation for operation, which
keeps the two routes bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionMismatch, InvalidConfig, ZeroNormRow

GLOBAL = "global"
FINEGRAINED = "finegrained"
UNIFORM = "uniform"
LEARNED = "learned"

_MODES = (GLOBAL, FINEGRAINED)
_POOLINGS = (UNIFORM, LEARNED)


@dataclass
class MatchMode:
    """Which similarity family to use, plus the fine-grained pooling flavor."""
    kind: str = GLOBAL
    pooling: str = UNIFORM

    def validate(self) -> None:
        if self.kind not in _MODES:
            raise InvalidConfig(f"unknown match mode {self.kind!r}")
        if self.pooling not in _POOLINGS:
            raise InvalidConfig(f"unknown pooling {self.pooling!r}")


@dataclass
class PoolingParams:
    """Learned attention vectors for weighted token pooling (one per side)."""
    p_t: T.Tensor  # (D,) text side
    p_v: T.Tensor  # (D,) video side


def init_pooling_params(dim: int, dtype=np.float32) -> PoolingParams:
    # Zero init makes the softmax weights uniform, so the learned pooling
    # starts exactly at the uniform baseline.
    return PoolingParams(p_t=T.param(np.zeros(dim, dtype=dtype)),
                         p_v=T.param(np.zeros(dim, dtype=dtype)))


# --- pairwise, differentiable -------------------------------------------------

def global_similarity_t(query_global: T.Tensor, frames: T.Tensor) -> T.Tensor:
    """cosine(query, mean over frames) as a scalar tensor."""
    vmean = T.mean_rows(frames)
    return T.cosine(query_global, vmean)


def _pool_weights(tokens: T.Tensor, p: T.Tensor) -> T.Tensor:
    """Softmax over tokens of (token . p) / sqrt(D); returns a column (N, 1)."""
    d = tokens.shape[-1]
    logits = T.scale(T.matmul(tokens, T.reshape(p, (d, 1))), 1.0 / math.sqrt(d))
    return T.transpose(T.softmax_rows(T.transpose(logits)))


def finegrained_similarity_t(words: T.Tensor, frames: T.Tensor, pooling: str,
                             params: PoolingParams | None) -> T.Tensor:
    """Symmetrized max-sim: (t2v + v2t) / 2 as a scalar tensor.

    Token rows must be unit-normalized by the caller.
    """
    if pooling == LEARNED and params is None:
        raise InvalidConfig("learned pooling requires pooling parameters")
    sims = T.matmul(words, T.transpose(frames))        # (W, F)
    max_t = T.max_axis(sims, axis=1)                   # (W, 1) best frame per word
    max_v = T.transpose(T.max_axis(sims, axis=0))      # (F, 1) best word per frame
    if pooling == UNIFORM:
        t2v = T.mean_all(max_t)
        v2t = T.mean_all(max_v)
    else:
        t2v = T.sum_all(T.mul(_pool_weights(words, params.p_t), max_t))
        v2t = T.sum_all(T.mul(_pool_weights(frames, params.p_v), max_v))
    return T.scale(T.add(t2v, v2t), 0.5)


# --- pairwise, plain floats -----------------------------------------------------

def global_similarity(query_global: np.ndarray, frame_embeddings: np.ndarray) -> float:
    """Cosine between a query embedding and the average frame embedding."""
    if frame_embeddings.ndim != 2 or frame_embeddings.shape[0] < 1:
        raise DimensionMismatch(f"bad frame shape {frame_embeddings.shape}")
    if query_global.shape[-1] != frame_embeddings.shape[-1]:
        raise DimensionMismatch("query and frames disagree on D")
    out = global_similarity_t(T.tensor(query_global), T.tensor(frame_embeddings))
    return out.item()


def finegrained_similarity(word_embeddings: np.ndarray,
                           frame_embeddings: np.ndarray,
                           pooling: str = UNIFORM,
                           params: PoolingParams | None = None) -> float:
    """Symmetrized token-wise maximum similarity between two token sets."""
    if word_embeddings.shape[-1] != frame_embeddings.shape[-1]:
        raise DimensionMismatch("words and frames disagree on D")
    out = finegrained_similarity_t(T.tensor(word_embeddings),
                                   T.tensor(frame_embeddings), pooling, params)
    return out.item()


# --- batched -----------------------------------------------------------------

def _normalize_rows_np(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=-1, keepdims=True)
    norms = np.sqrt(sq)
    if np.any(norms <= 1e-12):
        raise ZeroNormRow("zero-norm row in batch")
    return x / norms


def similarity_matrix(queries, videos, mode: MatchMode,
                      params: PoolingParams | None = None,
                      batched: bool = True) -> np.ndarray:
    """Score grid: entry (i, j) is the pairwise similarity of query i, video j.

    ``queries`` is a sequence of QueryItem; ``videos`` a sequence of frame
    embedding matrices (raw or interaction-enhanced). With ``batched=False``
    every entry comes from an independent pairwise call; the global-mode
    batched route reproduces those numbers bit for bit.
    """
    mode.validate()
    if len(queries) == 0 or len(videos) == 0:
        raise DimensionMismatch("similarity_matrix needs non-empty batches")
    d = queries[0].global_embedding.shape[-1]
    for v in videos:
        if v.shape[-1] != d:
            raise DimensionMismatch("query/video embedding widths differ")

    if mode.kind == GLOBAL:
        if batched:
            q = _normalize_rows_np(np.stack([it.global_embedding for it in queries]))
            means = np.stack([v.mean(axis=0, dtype=v.dtype) for v in videos])
            vn = _normalize_rows_np(means)
            return (q[:, None, :] * vn[None, :, :]).sum(axis=-1)
        out = np.empty((len(queries), len(videos)), dtype=np.float32)
        for i, it in enumerate(queries):
            for j, frames in enumerate(videos):
                out[i, j] = global_similarity(it.global_embedding, frames)
        return out

    out = np.empty((len(queries), len(videos)), dtype=np.float32)
    for i, it in enumerate(queries):
        words = it.word_embeddings
        for j in range(len(videos)):
            out[i, j] = finegrained_similarity(words, videos[j], mode.pooling, params)
    return out
