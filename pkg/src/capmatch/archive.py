"""Embedding corpus format (CVRA v1) and the in-memory dataset model.

Layout of an archive directory::

    manifest.json    UTF-8 JSON header (magic "CVRA", version 1)
    words.f32        all query word embeddings, item order, row-major
    qglobal.f32      one global query embedding per item
    frames.f32       all frame embeddings, item order
    captions.f32     all caption CLS embeddings, item order
    captions.jsonl   optional sidecar, one {"id", "texts"} object per line

Blobs are raw little-endian 32-bit floats. Embeddings are stored exactly as
produced (un-normalized); rows are L2-normalized once at load time. Rows that
are already unit-norm within 1e-5 are left untouched so that a write/read
cycle is bitwise idempotent.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (ArchiveIoError, BadMagic, InvalidConfig, InvariantViolation,
                     NonFiniteValue, ShapeMismatch, VersionMismatch, ZeroNormRow)

MAGIC = "CVRA"
VERSION = 1
DEFAULT_MAX_WORDS = 32

_BLOB_NAMES = ("word_embeddings", "query_globals", "frame_embeddings", "caption_cls")
_BLOB_FILES = ("words.f32", "qglobal.f32", "frames.f32", "captions.f32")


@dataclass
class QueryItem:
    """Token-level and global embeddings for one text query."""
    id: str
    word_embeddings: np.ndarray    # (W, D)
    global_embedding: np.ndarray   # (D,)


@dataclass
class VideoItem:
    """Frame and caption embeddings for one video."""
    id: str
    frame_embeddings: np.ndarray        # (F, D)
    caption_cls_embeddings: np.ndarray  # (C, D), C may be 0
    caption_texts: list[str] | None = None

    @property
    def num_captions(self) -> int:
        return self.caption_cls_embeddings.shape[0]


@dataclass
class EmbeddingArchive:
    """Aligned corpus: queries[i] is the annotated match of videos[i]."""
    dim: int
    queries: list[QueryItem]
    videos: list[VideoItem]
    split: str = "train"

    @property
    def count(self) -> int:
        return len(self.queries)

    def validate(self, max_words: int = DEFAULT_MAX_WORDS) -> None:
        if len(self.queries) != len(self.videos):
            raise InvariantViolation(
                f"{len(self.queries)} queries vs {len(self.videos)} videos")
        qids = [q.id for q in self.queries]
        vids = [v.id for v in self.videos]
        if len(set(qids)) != len(qids):
            raise InvariantViolation("duplicate query ids")
        if len(set(vids)) != len(vids):
            raise InvariantViolation("duplicate video ids")
        for q, v in zip(self.queries, self.videos):
            w = q.word_embeddings
            if w.ndim != 2 or w.shape[1] != self.dim:
                raise InvariantViolation(f"query {q.id}: bad word shape {w.shape}")
            if not 1 <= w.shape[0] <= max_words:
                raise InvariantViolation(
                    f"query {q.id}: W={w.shape[0]} outside [1, {max_words}]")
            if q.global_embedding.shape != (self.dim,):
                raise InvariantViolation(f"query {q.id}: bad global shape")
            f = v.frame_embeddings
            if f.ndim != 2 or f.shape[1] != self.dim or f.shape[0] < 1:
                raise InvariantViolation(f"video {v.id}: bad frame shape {f.shape}")
            c = v.caption_cls_embeddings
            if c.ndim != 2 or (c.shape[0] > 0 and c.shape[1] != self.dim):
                raise InvariantViolation(f"video {v.id}: bad caption shape {c.shape}")
            if v.caption_texts is not None and len(v.caption_texts) != c.shape[0]:
                raise InvariantViolation(
                    f"video {v.id}: {len(v.caption_texts)} texts for "
                    f"{c.shape[0]} captions")
            for name, arr in (("words", w), ("global", q.global_embedding),
                              ("frames", f), ("captions", c)):
                if not np.all(np.isfinite(arr)):
                    raise NonFiniteValue(f"item {v.id}: non-finite {name}")


def _normalize_rows(x: np.ndarray, what: str) -> np.ndarray:
    """Unit-normalize rows, skipping rows already unit-norm within 1e-5.

    The skip makes normalization idempotent at the bit level, which the
    write/read roundtrip invariant depends on.
    """
    if x.size == 0:
        return x
    flat = x.reshape(-1, x.shape[-1])
    norms = np.sqrt((flat * flat).sum(axis=1, keepdims=True))
    if np.any(norms <= 1e-12):
        bad = int(np.argmax(norms.reshape(-1) <= 1e-12))
        raise ZeroNormRow(f"{what}: row {bad} has (near-)zero norm")
    need = np.abs(norms - 1.0).reshape(-1) > 1e-5
    if not need.any():
        return x
    out = flat.copy()
    out[need] = flat[need] / norms[need]
    return out.reshape(x.shape)


def _normalized_archive(archive: EmbeddingArchive) -> EmbeddingArchive:
    queries = []
    videos = []
    for q, v in zip(archive.queries, archive.videos):
        queries.append(QueryItem(
            id=q.id,
            word_embeddings=_normalize_rows(q.word_embeddings, f"query {q.id} words"),
            global_embedding=_normalize_rows(
                q.global_embedding.reshape(1, -1), f"query {q.id} global").reshape(-1),
        ))
        videos.append(VideoItem(
            id=v.id,
            frame_embeddings=_normalize_rows(v.frame_embeddings, f"video {v.id} frames"),
            caption_cls_embeddings=_normalize_rows(
                v.caption_cls_embeddings, f"video {v.id} captions"),
            caption_texts=v.caption_texts,
        ))
    return EmbeddingArchive(dim=archive.dim, queries=queries, videos=videos,
                            split=archive.split)


# --- disk format -------------------------------------------------------------

def write_archive(archive: EmbeddingArchive, path: str) -> None:
    """Write an archive directory; re-reading yields bit-identical floats."""
    archive.validate()
    try:
        os.makedirs(path, exist_ok=True)
        groups = {name: [] for name in _BLOB_NAMES}
        items = []
        any_texts = False
        for q, v in zip(archive.queries, archive.videos):
            groups["word_embeddings"].append(q.word_embeddings)
            groups["query_globals"].append(q.global_embedding.reshape(1, -1))
            groups["frame_embeddings"].append(v.frame_embeddings)
            if v.num_captions:
                groups["caption_cls"].append(v.caption_cls_embeddings)
            items.append({
                "id": v.id,
                "words": int(q.word_embeddings.shape[0]),
                "frames": int(v.frame_embeddings.shape[0]),
                "captions": int(v.num_captions),
                "has_caption_text": v.caption_texts is not None,
            })
            any_texts = any_texts or v.caption_texts is not None

        blobs = []
        for name, fname in zip(_BLOB_NAMES, _BLOB_FILES):
            mats = groups[name]
            if mats:
                data = np.concatenate([m.reshape(-1, archive.dim) for m in mats], axis=0)
            else:
                data = np.zeros((0, archive.dim), dtype=np.float32)
            raw = data.astype("<f4", copy=False).tobytes()
            with open(os.path.join(path, fname), "wb") as fh:
                fh.write(raw)
            blobs.append({"name": name, "file": fname, "offset": 0,
                          "len_bytes": len(raw)})

        manifest = {
            "magic": MAGIC,
            "version": VERSION,
            "dim": archive.dim,
            "count": archive.count,
            "split": archive.split,
            "items": items,
            "blobs": blobs,
        }
        with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1)

        if any_texts:
            with open(os.path.join(path, "captions.jsonl"), "w", encoding="utf-8") as fh:
                for v in archive.videos:
                    if v.caption_texts is not None:
                        fh.write(json.dumps({"id": v.id, "texts": v.caption_texts}) + "\n")
    except OSError as exc:
        raise ArchiveIoError(str(exc)) from exc


def _read_blob(path: str, entry: dict, rows: int, dim: int) -> np.ndarray:
    expected = rows * dim * 4
    if entry["len_bytes"] != expected:
        raise ShapeMismatch(
            f"blob {entry['name']}: manifest declares {entry['len_bytes']} bytes, "
            f"items imply {expected}")
    fname = os.path.join(path, entry["file"])
    try:
        size = os.path.getsize(fname)
        if size < entry["offset"] + expected:
            raise ShapeMismatch(
                f"blob {entry['name']}: file holds {size} bytes, "
                f"need {entry['offset'] + expected}")
        with open(fname, "rb") as fh:
            fh.seek(entry["offset"])
            raw = fh.read(expected)
    except OSError as exc:
        raise ArchiveIoError(str(exc)) from exc
    if len(raw) != expected:
        raise ShapeMismatch(f"blob {entry['name']}: short read")
    return np.frombuffer(raw, dtype="<f4").reshape(rows, dim).astype(np.float32)


def read_archive(path: str, max_words: int = DEFAULT_MAX_WORDS) -> EmbeddingArchive:
    """Load and validate an archive; rows are normalized exactly once here."""
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ArchiveIoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise BadMagic(f"manifest is not valid JSON: {exc}") from exc

    if manifest.get("magic") != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {manifest.get('magic')!r}")
    if manifest.get("version") != VERSION:
        raise VersionMismatch(f"unsupported version {manifest.get('version')!r}")

    dim = int(manifest["dim"])
    items = manifest["items"]
    if len(items) != manifest["count"]:
        raise ShapeMismatch(
            f"manifest count {manifest['count']} vs {len(items)} items")
    blobs = {b["name"]: b for b in manifest["blobs"]}
    for name in _BLOB_NAMES:
        if name not in blobs:
            raise ShapeMismatch(f"manifest missing blob group {name!r}")

    total = {
        "word_embeddings": sum(it["words"] for it in items),
        "query_globals": len(items),
        "frame_embeddings": sum(it["frames"] for it in items),
        "caption_cls": sum(it["captions"] for it in items),
    }
    mats = {name: _read_blob(path, blobs[name], total[name], dim)
            for name in _BLOB_NAMES}

    texts: dict[str, list[str]] = {}
    cpath = os.path.join(path, "captions.jsonl")
    if os.path.exists(cpath):
        with open(cpath, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    obj = json.loads(line)
                    texts[obj["id"]] = list(obj["texts"])

    queries: list[QueryItem] = []
    videos: list[VideoItem] = []
    w_off = f_off = c_off = 0
    for i, it in enumerate(items):
        vid = it["id"]
        w, f, c = it["words"], it["frames"], it["captions"]
        words = mats["word_embeddings"][w_off:w_off + w]
        qglobal = mats["query_globals"][i]
        frames = mats["frame_embeddings"][f_off:f_off + f]
        caps = mats["caption_cls"][c_off:c_off + c]
        w_off, f_off, c_off = w_off + w, f_off + f, c_off + c
        for name, arr in (("words", words), ("global", qglobal),
                          ("frames", frames), ("captions", caps)):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteValue(f"item {vid}: non-finite {name} embedding")
        item_texts = texts.get(vid) if it.get("has_caption_text") else None
        queries.append(QueryItem(id=vid, word_embeddings=words,
                                 global_embedding=qglobal))
        videos.append(VideoItem(id=vid, frame_embeddings=frames,
                                caption_cls_embeddings=caps,
                                caption_texts=item_texts))

    archive = EmbeddingArchive(dim=dim, queries=queries, videos=videos,
                               split=manifest["split"])
    archive = _normalized_archive(archive)
    archive.validate(max_words=max_words)
    return archive


# --- synthetic corpora --------------------------------------------------------

@dataclass
class SynthConfig:
    """Desk-scale synthetic corpus: noisy views of shared latent directions.

    ``latent_seed`` decouples the item content from the noise draws: a
    held-out archive built with the same ``latent_seed`` but a different
    ``seed`` re-observes the same items under fresh noise, which is the
    desk-scale analogue of ranking a known corpus from unseen queries.
    """
    n: int = 64
    dim: int = 32
    frames: int = 4
    captions: int = 5
    words: int = 8
    sigma_q: float = 0.3
    sigma_v: float = 0.3
    sigma_c: float = 0.3
    distractor_fraction: float = 0.0
    seed: int = 0
    latent_seed: int | None = None
    split: str = "train"

    def validate(self) -> None:
        if self.n < 1 or self.dim < 4 or self.frames < 1 or self.captions < 1:
            raise InvalidConfig(
                f"need n>=1, dim>=4, frames>=1, captions>=1; got "
                f"n={self.n} dim={self.dim} frames={self.frames} captions={self.captions}")
        if self.words < 1:
            raise InvalidConfig("words must be >= 1")
        if not 0.0 <= self.distractor_fraction <= 1.0:
            raise InvalidConfig("distractor_fraction must lie in [0, 1]")
        if min(self.sigma_q, self.sigma_v, self.sigma_c) < 0:
            raise InvalidConfig("noise sigmas must be nonnegative")


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt((x * x).sum(axis=-1, keepdims=True))


def synthesize(config: SynthConfig) -> EmbeddingArchive:
    """Generate a fully deterministic synthetic archive.

    Each item draws a latent unit direction; queries, frames and captions are
    normalized noisy copies. Noise draws are scaled by sigma / sqrt(D) so a
    sigma of 1.0 means noise as strong as the unit signal regardless of the
    embedding width. A ``distractor_fraction`` of captions borrow another
    item's latent instead (useless for matching, useful for ablation
    robustness tests).
    """
    config.validate()
    lat_seed = config.seed if config.latent_seed is None else config.latent_seed
    rng_lat = np.random.default_rng([lat_seed, 0])
    rng = np.random.default_rng([config.seed, 1])
    n, d = config.n, config.dim
    latents = _unit(rng_lat.standard_normal((n, d), dtype=np.float32))
    sq = np.float32(config.sigma_q / math.sqrt(d))
    sv = np.float32(config.sigma_v / math.sqrt(d))
    sc = np.float32(config.sigma_c / math.sqrt(d))

    queries: list[QueryItem] = []
    videos: list[VideoItem] = []
    for i in range(n):
        z = latents[i]
        qraw = z + sq * rng.standard_normal(d, dtype=np.float32)
        qglobal = _unit(qraw)
        words = _unit(qglobal[None, :]
                      + sq * rng.standard_normal((config.words, d),
                                                 dtype=np.float32))
        frames = _unit(z[None, :]
                       + sv * rng.standard_normal((config.frames, d),
                                                  dtype=np.float32))
        caps = np.empty((config.captions, d), dtype=np.float32)
        for k in range(config.captions):
            base = z
            if n > 1 and rng.random() < config.distractor_fraction:
                donor = int(rng.integers(0, n - 1))
                if donor >= i:
                    donor += 1
                base = latents[donor]
            caps[k] = _unit(base + sc * rng.standard_normal(d, dtype=np.float32))
        item_id = f"item{i:04d}"
        queries.append(QueryItem(id=item_id, word_embeddings=words,
                                 global_embedding=qglobal))
        videos.append(VideoItem(id=item_id, frame_embeddings=frames,
                                caption_cls_embeddings=caps))

    archive = EmbeddingArchive(dim=d, queries=queries, videos=videos,
                               split=config.split)
    archive.validate(max_words=max(DEFAULT_MAX_WORDS, config.words))
    return archive
