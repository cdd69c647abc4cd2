"""Query-caption matching branch: caption aggregation and its similarity.

A video's caption CLS embeddings are treated as an unordered set: optional
encoder blocks (no positional information) refine them, then mean pooling
and L2 normalization produce one global caption representation. With zero
blocks this is exactly normalized mean pooling, and the blocks are
zero-initialized, so an untrained branch always equals the mean-pooling
baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import InvalidConfig, NoCaptions
from .interaction import add_encoder_block_params, encoder_block


@dataclass
class CaptionBranchParams:
    layers: int
    heads: int
    params: dict[str, T.Tensor] = field(default_factory=dict)


def init_caption_branch(layers: int, dim: int, heads: int, ffn_mult: int,
                        seed: int, dtype=np.float32) -> CaptionBranchParams:
    if layers < 0:
        raise InvalidConfig("caption branch layers must be >= 0")
    if dim % heads != 0:
        raise InvalidConfig(f"dim {dim} not divisible by heads {heads}")
    rng = np.random.default_rng(seed)
    params: dict[str, T.Tensor] = {}
    for i in range(layers):
        add_encoder_block_params(params, f"caption.blk{i}", rng, dim, ffn_mult, dtype)
    return CaptionBranchParams(layers=layers, heads=heads, params=params)


def aggregate_captions_t(caption_cls: T.Tensor,
                         branch: CaptionBranchParams) -> T.Tensor:
    """Aggregate C caption embeddings into one unit-norm row (1, D)."""
    if caption_cls.shape[0] == 0:
        raise NoCaptions("cannot aggregate an empty caption set")
    x = caption_cls
    for i in range(branch.layers):
        x = encoder_block(x, branch.params, f"caption.blk{i}", branch.heads)
    return T.l2_normalize(T.mean_rows(x))


def aggregate_captions(caption_cls: np.ndarray,
                       branch: CaptionBranchParams) -> np.ndarray:
    out = aggregate_captions_t(T.tensor(caption_cls), branch)
    return out.numpy().reshape(-1)


def query_caption_similarity_t(query_global: T.Tensor, caption_cls: T.Tensor,
                               branch: CaptionBranchParams) -> T.Tensor:
    """cosine(query, aggregated captions) as a scalar tensor."""
    agg = aggregate_captions_t(caption_cls, branch)
    return T.cosine(query_global, agg)


def query_caption_similarity(query_global: np.ndarray, caption_cls: np.ndarray,
                             branch: CaptionBranchParams) -> float:
    out = query_caption_similarity_t(T.tensor(query_global),
                                     T.tensor(caption_cls), branch)
    return out.item()
