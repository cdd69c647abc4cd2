"""Retrieval ranking, dual-branch score fusion, and metrics.

The fused score of a (query, video) pair is ``s_qv + alpha * s_qc`` where
``s_qv`` is query-video matching over interaction-enhanced frames and
``s_qc`` is the query-caption branch. Videos without captions fall back to
plain query-video matching over raw frames (caption-free path).

Ranks are pessimistic under ties: every candidate scoring at least as high
as the ground truth pushes it down.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .archive import EmbeddingArchive, QueryItem, VideoItem
from .caption_branch import aggregate_captions
from .errors import EmptyCorpus, InvalidConfig
from .interaction import NONE, enhance
from .matching import (FINEGRAINED, GLOBAL, finegrained_similarity,
                       global_similarity, similarity_matrix)
from .model import ModelParams

TEXT_TO_VIDEO = "t2v"
VIDEO_TO_TEXT = "v2t"


@dataclass
class FusionConfig:
    """Weight of the query-caption score; captionless videos use video only."""
    alpha: float = 1.0
    caption_free_policy: str = "video_only"

    def validate(self) -> None:
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidConfig(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.caption_free_policy != "video_only":
            raise InvalidConfig(
                f"unknown caption_free_policy {self.caption_free_policy!r}")


@dataclass
class RetrievalReport:
    direction: str
    r1: float
    r5: float
    r10: float
    mdr: float
    mnr: float
    per_query_ranks: list[int]

    @property
    def n(self) -> int:
        return len(self.per_query_ranks)


def report_from_ranks(ranks: list[int], direction: str) -> RetrievalReport:
    if not ranks:
        raise EmptyCorpus("no queries to rank")
    arr = np.asarray(ranks)
    ordered = np.sort(arr)
    return RetrievalReport(
        direction=direction,
        r1=100.0 * float(np.mean(arr <= 1)),
        r5=100.0 * float(np.mean(arr <= 5)),
        r10=100.0 * float(np.mean(arr <= 10)),
        mdr=float(ordered[(len(ordered) - 1) // 2]),  # lower middle for even counts
        mnr=float(np.mean(arr)),
        per_query_ranks=[int(r) for r in ranks],
    )


def report_to_dict(report: RetrievalReport, include_ranks: bool = False) -> dict:
    out = {
        "direction": report.direction,
        "r1": round(report.r1, 4),
        "r5": round(report.r5, 4),
        "r10": round(report.r10, 4),
        "mdr": round(report.mdr, 4),
        "mnr": round(report.mnr, 4),
        "n": report.n,
    }
    if include_ranks:
        out["ranks"] = report.per_query_ranks
    return out


def report_to_json(report: RetrievalReport, include_ranks: bool = False) -> str:
    return json.dumps(report_to_dict(report, include_ranks), sort_keys=True)


def report_table(reports: list[RetrievalReport]) -> str:
    header = f"{'direction':<10} {'R@1':>7} {'R@5':>7} {'R@10':>7} {'MdR':>6} {'MnR':>8}"
    lines = [header]
    for r in reports:
        lines.append(f"{r.direction:<10} {r.r1:>7.2f} {r.r5:>7.2f} "
                     f"{r.r10:>7.2f} {r.mdr:>6.1f} {r.mnr:>8.2f}")
    return "\n".join(lines)


# --- scoring -------------------------------------------------------------------

def video_representation(video: VideoItem, params: ModelParams) -> np.ndarray:
    """Interaction-enhanced frame embeddings; raw frames when captionless."""
    if params.interaction.strategy == NONE or video.num_captions == 0:
        return video.frame_embeddings
    out = enhance(T.tensor(video.frame_embeddings),
                  T.tensor(video.caption_cls_embeddings),
                  params.interaction_params, params.interaction)
    return out.numpy()


def _match_frames(rep: np.ndarray, params: ModelParams) -> np.ndarray:
    """Frames as consumed by the matcher (fine-grained wants unit rows)."""
    if params.match_mode.kind == FINEGRAINED:
        norms = np.sqrt((rep * rep).sum(axis=-1, keepdims=True))
        return rep / norms
    return rep


def _qv_score(query: QueryItem, frames: np.ndarray, params: ModelParams) -> float:
    if params.match_mode.kind == GLOBAL:
        return global_similarity(query.global_embedding, frames)
    return finegrained_similarity(query.word_embeddings, frames,
                                  params.match_mode.pooling, params.pooling)


def fused_score(query: QueryItem, video: VideoItem, params: ModelParams,
                fusion: FusionConfig) -> float:
    """s_qv over enhanced frames plus alpha * s_qc; video-only when C = 0."""
    fusion.validate()
    rep = _match_frames(video_representation(video, params), params)
    s = _qv_score(query, rep, params)
    if fusion.alpha > 0 and video.num_captions > 0:
        agg = aggregate_captions(video.caption_cls_embeddings, params.caption_branch)
        qn = query.global_embedding / np.sqrt(
            (query.global_embedding ** 2).sum())
        s += fusion.alpha * float(np.dot(qn, agg))
    return float(s)


def score_matrix(queries: list[QueryItem], videos: list[VideoItem],
                 params: ModelParams, fusion: FusionConfig,
                 batched: bool = True) -> np.ndarray:
    """Fused (B_q, B_v) score grid used by both retrieval directions."""
    fusion.validate()
    if not queries or not videos:
        raise EmptyCorpus("empty query or video batch")
    reps = [_match_frames(video_representation(v, params), params)
            for v in videos]
    s = similarity_matrix(queries, reps, params.match_mode, params.pooling,
                          batched=batched).astype(np.float32)
    if fusion.alpha > 0:
        qc = np.zeros_like(s)
        qmat = np.stack([q.global_embedding for q in queries])
        qmat = qmat / np.sqrt((qmat * qmat).sum(axis=1, keepdims=True))
        for j, v in enumerate(videos):
            if v.num_captions > 0:
                agg = aggregate_captions(v.caption_cls_embeddings,
                                         params.caption_branch)
                qc[:, j] = qmat @ agg
        s = s + np.float32(fusion.alpha) * qc
    return s


def ranks_from_scores(scores: np.ndarray, direction: str) -> list[int]:
    """Pessimistic rank of the diagonal ground truth along each direction."""
    if scores.shape[0] != scores.shape[1]:
        raise InvalidConfig("aligned corpora produce square score matrices")
    s = scores if direction == TEXT_TO_VIDEO else scores.T
    n = s.shape[0]
    ranks = []
    for i in range(n):
        gt = s[i, i]
        better = int(np.sum(s[i] >= gt)) - 1  # excludes the GT itself
        ranks.append(1 + better)
    return ranks


def rank_all(queries: list[QueryItem], videos: list[VideoItem],
             params: ModelParams, fusion: FusionConfig,
             direction: str = TEXT_TO_VIDEO,
             batched: bool = True) -> RetrievalReport:
    """Rank every item against the index-aligned corpus; report the metrics."""
    if direction not in (TEXT_TO_VIDEO, VIDEO_TO_TEXT):
        raise InvalidConfig(f"unknown direction {direction!r}")
    scores = score_matrix(queries, videos, params, fusion, batched=batched)
    return report_from_ranks(ranks_from_scores(scores, direction), direction)


def evaluate_archive(archive: EmbeddingArchive, params: ModelParams,
                     fusion: FusionConfig,
                     directions: tuple[str, ...] = (TEXT_TO_VIDEO, VIDEO_TO_TEXT),
                     batched: bool = True) -> dict[str, RetrievalReport]:
    scores = score_matrix(archive.queries, archive.videos, params, fusion,
                          batched=batched)
    return {d: report_from_ranks(ranks_from_scores(scores, d), d)
            for d in directions}


def retrieve_topk(query: QueryItem, videos: list[VideoItem],
                  params: ModelParams, fusion: FusionConfig,
                  k: int) -> list[tuple[str, float]]:
    """Top-k candidates by fused score, ties broken by ascending video id."""
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    if not videos:
        raise EmptyCorpus("no videos to retrieve from")
    scored = [(v.id, fused_score(query, v, params, fusion)) for v in videos]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]
