"""Caption filtering against ground-truth queries and augmentation pairs.

Filtering ranks each video's captions by cosine similarity to that video's
annotated query and keeps the top k. It is a training-time device only:
invoking it on a non-train split raises, because at retrieval time the
ground-truth query is obviously not available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .archive import EmbeddingArchive
from .errors import ArchiveMismatch, InvalidConfig, SplitMisuse


@dataclass
class FilteredCaptions:
    """Per-video caption indices ranked by similarity, ties by lowest index."""
    video_ids: list[str]
    ranked: list[list[int]]     # selected indices, best first
    top_k: int

    def as_json_dict(self) -> dict[str, list[int]]:
        return {vid: list(idx) for vid, idx in zip(self.video_ids, self.ranked)}


def filter_captions(archive: EmbeddingArchive, k: int) -> FilteredCaptions:
    """Select, per video, the min(k, C) captions most similar to its query.

    Similarity is the dot product of load-normalized rows (cosine). Ties are
    broken by ascending caption index; videos with no captions select nothing.
    """
    if archive.split != "train":
        raise SplitMisuse(
            f"caption filtering uses ground-truth queries; split is "
            f"{archive.split!r}, not 'train'")
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")

    ranked: list[list[int]] = []
    for q, v in zip(archive.queries, archive.videos):
        c = v.num_captions
        if c == 0:
            ranked.append([])
            continue
        sims = v.caption_cls_embeddings @ q.global_embedding
        order = sorted(range(c), key=lambda j: (-float(sims[j]), j))
        ranked.append(order[:min(k, c)])
    return FilteredCaptions(video_ids=[v.id for v in archive.videos],
                            ranked=ranked, top_k=k)


def build_augmentation_pairs(
        archive: EmbeddingArchive,
        filtered: FilteredCaptions) -> list[tuple[np.ndarray, int]]:
    """One (caption CLS embedding, video index) pair per selected caption.

    Order is deterministic: ascending video index, then rank. Videos without
    captions contribute nothing.
    """
    if filtered.video_ids != [v.id for v in archive.videos]:
        raise ArchiveMismatch("filtered captions came from a different archive")
    pairs: list[tuple[np.ndarray, int]] = []
    for vidx, indices in enumerate(filtered.ranked):
        caps = archive.videos[vidx].caption_cls_embeddings
        for j in indices:
            pairs.append((caps[j], vidx))
    return pairs
